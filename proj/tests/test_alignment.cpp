// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "test_util.hpp"

#include "oracles.hpp"

#include "crepa/alignment.hpp"
#include "crepa/errors.hpp"
#include "crepa/rng.hpp"

using namespace crepa;
using namespace crepa::alignment;
using namespace crepa::oracle;

namespace {

torch::Tensor randn(std::vector<std::int64_t> shape, std::uint64_t seed) {
    auto g = make_generator(seed);
    return torch::randn(shape, g, torch::kFloat64);
}

}  // namespace

TEST_CASE("token-mean cosine similarity") {
    auto y = randn({6, 5}, 1), z = randn({6, 5}, 2);
    CHECK(sim(y, y).item<double>() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(sim(y, -y).item<double>() == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(sim(y, z).item<double>() == doctest::Approx(sim_loop(y, z)).epsilon(1e-12));
    CHECK(sim(3.0 * y, 0.1 * z).item<double>() == doctest::Approx(sim(y, z).item<double>()).epsilon(1e-12));
    CHECK(sim(y, z).item<double>() == doctest::Approx(sim(z, y).item<double>()).epsilon(1e-14));
    auto zz = z.clone();
    zz[2].zero_();
    CHECK(sim(y, zz).item<double>() == doctest::Approx(sim_loop(y, zz)).epsilon(1e-12));
    auto g = sim(y.clone().requires_grad_(), zz).to(torch::kFloat64);
    CHECK(std::isfinite(g.item<double>()));
}

TEST_CASE("frame similarity matrix") {
    auto banks = randn({2, 4, 3, 5}, 3), proj = randn({2, 4, 3, 5}, 4);
    auto S = frame_similarity(banks, proj);
    CHECK(S.sizes() == torch::IntArrayRef{2, 4, 4});
    for (int b = 0; b < 2; ++b)
        for (int f = 0; f < 4; ++f)
            for (int k = 0; k < 4; ++k)
                CHECK(S[b][f][k].item<double>() == doctest::Approx(sim_loop(banks[b][k], proj[b][f])).epsilon(1e-12));
}

TEST_CASE("neighbour weights") {
    auto w = neighbor_weights(3, 8, 1, 1.0);
    REQUIRE(w.size() == 2);
    CHECK(w[0].k == 2);
    CHECK(w[1].k == 4);
    CHECK(w[0].w == doctest::Approx(std::exp(-1.0)));
    CHECK(neighbor_weights(0, 8, 1, 1.0).size() == 1);
    CHECK(neighbor_weights(0, 8, 1, 1.0)[0].k == 1);
    CHECK(neighbor_weights(7, 8, 1, 1.0)[0].k == 6);
    auto r = neighbor_weights(0, 8, 1, 1.0, true);
    CHECK(r[0].w == doctest::Approx(2.0 * std::exp(-1.0)));
    auto d2 = neighbor_weights(1, 8, 2, 0.5);
    REQUIRE(d2.size() == 1);
    CHECK(d2[0].k == 3);
    CHECK(d2[0].w == doctest::Approx(std::exp(-4.0)));
    for (const auto& n : neighbor_weights(4, 8, 1, 1e-6)) CHECK(n.w == 0.0);
    CHECK(total_neighbor_weight(8, 1, 1.0) == doctest::Approx(14.0 * std::exp(-1.0)));
    CHECK(total_neighbor_weight(8, 1, 1.0, true) == doctest::Approx(16.0 * std::exp(-1.0)));
}

TEST_CASE("repa and crepa losses match explicit loops") {
    auto banks = randn({3, 6, 4, 8}, 5), proj = randn({3, 6, 4, 8}, 6);
    CHECK(repa_loss(banks, proj).item<double>() == doctest::Approx(repa_loop(banks, proj)).epsilon(1e-12));
    for (int d : {1, 2})
        for (double tau : {0.5, 1.0, 3.0})
            CHECK(crepa_loss(banks, proj, d, tau).item<double>() ==
                  doctest::Approx(crepa_loop(banks, proj, d, tau)).epsilon(1e-12));
    CHECK(repa_loss(banks, proj, true).item<double>() ==
          doctest::Approx(repa_loop(banks, proj) / 6).epsilon(1e-12));
    CHECK(crepa_loss(banks, proj, 1, 1.0, true).item<double>() ==
          doctest::Approx(crepa_loop(banks, proj, 1, 1.0) / 6).epsilon(1e-12));
    CHECK_THROWS_AS(repa_loss(banks, proj.slice(1, 0, 5)), DimensionError);
}

TEST_CASE("identical static frames give the closed-form crepa loss") {
    auto frame = randn({1, 1, 16, 8}, 7);
    auto banks = frame.expand({1, 8, 16, 8}).contiguous();
    const double expected = -(8.0 + 14.0 * std::exp(-1.0));
    CHECK(std::abs(crepa_loss(banks, banks, 1, 1.0).item<double>() - expected) < 1e-9);
    CHECK(std::abs(crepa_loop(banks, banks, 1, 1.0) - expected) < 1e-9);
    CHECK(std::abs(repa_loss(banks, banks).item<double>() + 8.0) < 1e-9);
}

TEST_CASE("crepa loss bounds and temperature limit") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto banks = randn({2, 8, 4, 6}, 100 + s), proj = randn({2, 8, 4, 6}, 200 + s);
        const double v = crepa_loss(banks, proj, 1, 1.0).item<double>();
        CHECK(std::abs(v) <= 8.0 + total_neighbor_weight(8, 1, 1.0) + 1e-12);
        CHECK(std::abs(crepa_loss(banks, proj, 1, 1e-6).item<double>() - repa_loss(banks, proj).item<double>()) < 1e-12);
    }
}

TEST_CASE("a gradient step on the projected features lowers the loss") {
    auto banks = randn({2, 8, 4, 6}, 9);
    auto proj = randn({2, 8, 4, 6}, 10).requires_grad_();
    for (Mode m : {Mode::repa, Mode::crepa}) {
        AlignmentConfig c;
        c.mode = m;
        auto loss = alignment_loss(banks, proj, c);
        auto g = torch::autograd::grad({loss}, {proj})[0];
        torch::NoGradGuard guard;
        auto after = alignment_loss(banks, proj - 0.05 * g, c);
        CHECK(after.item<double>() < loss.item<double>());
    }
}

TEST_CASE("combined loss and mode dispatch") {
    auto banks = randn({1, 4, 3, 5}, 11), proj = randn({1, 4, 3, 5}, 12);
    auto score = torch::tensor(0.731, torch::kFloat64);
    AlignmentConfig c;
    c.mode = Mode::vanilla;
    auto zero = alignment_loss(banks, proj, c);
    CHECK(zero.item<double>() == 0.0);
    CHECK_FALSE(zero.requires_grad());
    c.mode = Mode::repa;
    CHECK(alignment_loss(banks, proj, c).item<double>() == repa_loss(banks, proj).item<double>());
    c.mode = Mode::crepa;
    c.tau = 2.0;
    CHECK(alignment_loss(banks, proj, c).item<double>() == crepa_loss(banks, proj, 1, 2.0).item<double>());

    auto align = crepa_loss(banks, proj, 1, 1.0);
    CHECK(combined_loss(score, align, 0.0).item<double>() == score.item<double>());
    CHECK(combined_loss(score, align, 0.5).item<double>() ==
          doctest::Approx(score.item<double>() + 0.5 * align.item<double>()).epsilon(1e-15));
    CHECK(combined_loss(score, align, 2.0).item<double>() ==
          doctest::Approx(score.item<double>() + 2.0 * align.item<double>()).epsilon(1e-15));
}

TEST_CASE("alignment config validation and serialisation") {
    AlignmentConfig c;
    CHECK_NOTHROW(c.validate_for(8));
    c.d = 8;
    CHECK_THROWS_AS(c.validate_for(8), ConfigError);
    c = AlignmentConfig{};
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = AlignmentConfig{};
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    for (Mode m : {Mode::vanilla, Mode::repa, Mode::crepa}) CHECK(mode_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(mode_from_string("repa++"), ConfigError);

    c = AlignmentConfig{};
    c.mode = Mode::repa;
    c.tau = 0.25;
    nlohmann::json j = c;
    auto back = j.get<AlignmentConfig>();
    CHECK(back.mode == Mode::repa);
    CHECK(back.tau == 0.25);
}

TEST_CASE("projection head and grid matching") {
    auto head = make_head(32, 16, 3);
    auto other = make_head(32, 16, 3);
    dit::TokenGrid tap{torch::randn({2, 4 * 9, 32}), 4, 9};
    auto out = project(head, tap);
    CHECK(out.sizes() == torch::IntArrayRef{2, 4, 9, 16});
    CHECK(torch::equal(out, project(other, tap)));

    auto banks = randn({1, 2, 64, 5}, 13);
    CHECK(torch::allclose(match_grid(banks, 8, 8), banks));
    auto constant = torch::ones({1, 2, 64, 5}, torch::kFloat64) * 0.3;
    auto small = match_grid(constant, 4, 4);
    CHECK(small.sizes() == torch::IntArrayRef{1, 2, 16, 5});
    CHECK(torch::allclose(small, torch::full_like(small, 0.3)));
}
