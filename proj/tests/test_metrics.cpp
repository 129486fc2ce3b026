// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "test_util.hpp"

#include "oracles.hpp"

#include "crepa/errors.hpp"
#include "crepa/metrics.hpp"
#include "crepa/rng.hpp"
#include "crepa/synth.hpp"

using namespace crepa;
using namespace crepa::metrics;
using namespace crepa::oracle;

namespace {

torch::Tensor randn(std::vector<std::int64_t> shape, std::uint64_t seed) {
    auto g = make_generator(seed);
    return torch::randn(shape, g, torch::kFloat64);
}

}  // namespace

TEST_CASE("unbiased hsic matches the U-statistic oracle") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const int n = 5 + static_cast<int>(s % 4);
        auto x = randn({n, 6}, s), y = randn({n, 3}, 100 + s);
        auto K = linear_kernel(x), L = linear_kernel(y);
        const double oracle = hsic_u_oracle(to_mat(K), to_mat(L));
        CHECK(std::abs(hsic(K, L) - oracle) < 1e-10 * std::max(1.0, std::abs(oracle)));
    }
}

TEST_CASE("biased hsic matches the centred trace oracle") {
    auto x = randn({9, 4}, 1), y = randn({9, 5}, 2);
    auto K = linear_kernel(x), L = linear_kernel(y);
    CHECK(hsic(K, L, HsicEstimator::biased) == doctest::Approx(hsic_b_oracle(to_mat(K), to_mat(L))).epsilon(1e-12));
}

TEST_CASE("hsic edge cases") {
    auto K = linear_kernel(randn({10, 3}, 4));
    CHECK(std::abs(hsic(K, torch::ones({10, 10}, torch::kFloat64))) < 1e-12);
    CHECK_THROWS_AS(hsic(K.slice(0, 0, 3).slice(1, 0, 3), K.slice(0, 0, 3).slice(1, 0, 3)), DomainError);
    CHECK_THROWS_AS(hsic(K, K.slice(0, 0, 9).slice(1, 0, 9)), DimensionError);
    CHECK_THROWS_AS(hsic(torch::zeros({4, 5}), torch::zeros({4, 5})), DimensionError);
}

TEST_CASE("cka: self-similarity, rotation and scale invariance") {
    auto x = randn({20, 8}, 5), y = randn({20, 6}, 6);
    CHECK(cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    auto q = std::get<0>(torch::linalg_qr(randn({8, 8}, 7)));
    const double base = cka(x, y);
    CHECK(cka(x.matmul(q), y) == doctest::Approx(base).epsilon(1e-10));
    CHECK(cka(3.7 * x, 0.01 * y) == doctest::Approx(base).epsilon(1e-10));
    CHECK(cka(x, y) == doctest::Approx(cka(y, x)).epsilon(1e-12));
    CHECK_THROWS_AS(cka(torch::zeros({20, 3}), y), DegenerateInput);
    CHECK_THROWS_AS(cka(x, randn({19, 6}, 1)), DimensionError);
}

TEST_CASE("cknna with k = n - 1 reduces to cka") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto x = randn({32, 16}, 1000 + s), y = randn({32, 16}, 2000 + s);
        CHECK(std::abs(cknna(x, y, 31) - cka(x, y)) < 1e-8);
    }
}

TEST_CASE("cknna on n = 4 matches exhaustive mutual-kNN enumeration") {
    for (std::uint64_t s = 0; s < 40; ++s) {
        auto x = randn({4, 3}, 3000 + s), y = randn({4, 2}, 4000 + s);
        for (int k = 1; k <= 3; ++k) {
            Mat mask;
            const double oracle = cknna_oracle(to_mat(x), to_mat(y), k, &mask);
            auto got_mask = mutual_knn_mask(linear_kernel(x), linear_kernel(y), k);
            CHECK(to_mat(got_mask) == mask);
            CHECK(std::abs(cknna(x, y, k) - oracle) < 1e-12);
        }
    }
}

TEST_CASE("cknna on moderate n agrees with the loop oracle") {
    auto x = randn({10, 4}, 11), y = x + 0.3 * randn({10, 4}, 12);
    for (int k : {2, 5, 9}) CHECK(std::abs(cknna(x, y, k) - cknna_oracle(to_mat(x), to_mat(y), k)) < 1e-10);
    CHECK(cknna(x, y, 5) == doctest::Approx(cknna(y, x, 5)).epsilon(1e-12));
    CHECK_THROWS_AS(cknna(x, y, 0), DomainError);
    CHECK_THROWS_AS(cknna(x, y, 10), DomainError);
}

TEST_CASE("knn mask breaks ties by lower index and excludes self") {
    auto K = torch::ones({5, 5}, torch::kFloat64);
    auto m = knn_mask(K, 2);
    CHECK(m[0][1].item<double>() == 1.0);
    CHECK(m[0][2].item<double>() == 1.0);
    CHECK(m[0][3].item<double>() == 0.0);
    CHECK(m[1][0].item<double>() == 1.0);
    CHECK(m[1][2].item<double>() == 1.0);
    CHECK(m.diagonal().sum().item<double>() == 0.0);
    CHECK(m.sum(1).eq(2).all().item<bool>());
}

TEST_CASE("cknna with no mutual neighbours is zero") {
    // Anti-correlated geometries: nearest neighbours under one kernel are far under the other.
    auto x = torch::tensor({{0.0}, {1.0}, {2.0}, {3.0}, {4.0}, {5.0}}, torch::kFloat64);
    auto y = torch::tensor({{5.0}, {-4.0}, {3.0}, {-2.0}, {1.0}, {0.0}}, torch::kFloat64);
    const double v = cknna(x, y, 1);
    CHECK(v == doctest::Approx(cknna_oracle(to_mat(x), to_mat(y), 1)));
}

TEST_CASE("trimming and type-7 quartiles") {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    auto b = box_stats(v);
    CHECK(b.q1 == doctest::Approx(25.75));
    CHECK(b.median == doctest::Approx(50.5));
    CHECK(b.q3 == doctest::Approx(75.25));
    CHECK(b.whisker_lo == 1.0);
    CHECK(b.whisker_hi == 100.0);

    auto t = trim(v, 0.03);
    CHECK(t.size() == 94);
    CHECK(t.front() == 4.0);
    CHECK(t.back() == 97.0);
    CHECK(trim({3, 1, 2}, 0.03).size() == 3);  // floor(0.09) = 0

    std::vector<double> outl = {1, 2, 3, 4, 5, 6, 7, 8, 9, 100};
    auto bo = box_stats(outl);
    CHECK(bo.whisker_hi == 9.0);
    CHECK(bo.max == 100.0);
    CHECK_THROWS_AS(box_stats({}), DomainError);
    CHECK_THROWS_AS(trim(v, 0.5), DomainError);
}

TEST_CASE("sweep timesteps are evenly spaced over [1, t_max]") {
    auto t = sweep_timesteps(50, 8);
    REQUIRE(t.size() == 8);
    CHECK(t.front() == 1);
    CHECK(t.back() == 50);
    CHECK(std::is_sorted(t.begin(), t.end()));
    CHECK(sweep_timesteps(3, 8).size() == 3);
    CHECK_THROWS_AS(sweep_timesteps(0, 8), DomainError);
}

namespace {

dit::DiTConfig tiny_dit() {
    dit::DiTConfig c;
    c.depth = 2;
    c.d_model = 32;
    c.heads = 2;
    c.tap_layer = 1;
    c.frames = 4;
    c.height = 16;
    c.width = 16;
    c.seed = 3;
    return c;
}

std::vector<synth::LabeledVideo> tiny_videos(int classes, int per_class, std::uint64_t salt) {
    std::vector<synth::LabeledVideo> out;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            const auto seed = synth::video_seed(salt, c, i);
            char id[32];
            std::snprintf(id, sizeof id, "v%d_%d", c, i);
            out.push_back({synth::generate_video({c, 4, 16, 16, seed}), c, seed, id});
        }
    return out;
}

}  // namespace

TEST_CASE("cross-frame sweep: layout, counts and determinism") {
    auto model = dit::make_dit(tiny_dit());
    encoder::EncoderConfig ec;
    ec.height = ec.width = 16;
    ec.grid = 4;
    encoder::Encoder enc(ec);
    auto videos = tiny_videos(2, 2, 9);
    diffusion::NoiseSchedule s;
    SweepConfig cfg;
    cfg.k = 5;
    cfg.n_timesteps = 3;
    auto a = cross_frame_sweep(model, enc, videos, s, cfg, "r");
    auto b = cross_frame_sweep(model, enc, videos, s, cfg, "r");
    CHECK(a.offsets == std::vector<int>{-1, 0, 1});
    CHECK(a.t_indices == std::vector<int>{1, 26, 50});
    CHECK(a.per_frame.at(0).size() == 4 * 4);
    CHECK(a.per_frame.at(-1).size() == 4 * 3);
    CHECK(a.per_frame.at(1).size() == 4 * 3);
    CHECK(a.raw.size() == 4 * (4 + 3 + 3) * 3);
    CHECK(a.per_frame.at(1) == b.per_frame.at(1));
    for (const auto& m : a.raw) {
        CHECK(m.cknna >= -1.0);
        CHECK(m.cknna <= 1.0 + 1e-9);
    }
    // Per-frame value is the mean over the timestep window.
    double acc = 0;
    int n = 0;
    for (const auto& m : a.raw)
        if (m.video_id == videos[0].id && m.frame == 2 && m.offset == 1) acc += m.cknna, ++n;
    CHECK(n == 3);
    CHECK(a.per_frame.at(1)[2] == doctest::Approx(acc / 3).epsilon(1e-12));

    TempDir dir;
    a.write(dir.path / "r.json", dir.path / "r.csv");
    const auto csv = read_file(dir.path / "r.csv");
    CHECK(csv.rfind(std::string(kMeasurementCsvHeader) + "\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(a.raw.size() + 1));
    auto j = nlohmann::json::parse(read_file(dir.path / "r.json"));
    auto back = AlignmentReport::from_json(j);
    CHECK(back.per_frame == a.per_frame);
    CHECK(back.trimmed_mean(1) == doctest::Approx(a.trimmed_mean(1)));

    cfg.d = 4;
    CHECK_THROWS_AS(cross_frame_sweep(model, enc, videos, s, cfg), DomainError);
    CHECK_THROWS_AS(cross_frame_sweep(model, enc, {}, s, SweepConfig{}), DomainError);
}

TEST_CASE("linear probe separates linearly separable classes") {
    auto g = make_generator(5);
    auto centers = torch::randn({4, 6}, g, torch::kFloat64) * 3;
    auto y = torch::arange(200, torch::kLong) % 4;
    auto x = centers.index_select(0, y) + torch::randn({200, 6}, g, torch::kFloat64) * 0.3;
    double tr = 0;
    const double acc = train_linear_probe(x.slice(0, 0, 100), y.slice(0, 0, 100), x.slice(0, 100), y.slice(0, 100), 4,
                                          300, 0.5, &tr);
    CHECK(acc > 0.97);
    CHECK(tr > 0.97);
}

TEST_CASE("linear probe sweep: determinism, tap recommendation and errors") {
    auto model = dit::make_dit(tiny_dit());
    auto train = tiny_videos(3, 4, 1), test = tiny_videos(3, 2, 2);
    diffusion::NoiseSchedule s;
    ProbeConfig cfg;
    cfg.steps = 100;
    auto a = linear_probe_sweep(model, train, test, s, cfg);
    auto b = linear_probe_sweep(model, train, test, s, cfg);
    CHECK(a.layers == std::vector<int>{1, 2});
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.chance == doctest::Approx(1.0 / 18));
    CHECK(a.recommended_tap <= a.peak_layer);
    // At initialisation every block is the identity, so all layers see the same features.
    CHECK(a.accuracy[0] == a.accuracy[1]);

    CHECK_THROWS_AS(linear_probe_sweep(model, tiny_videos(1, 4, 3), test, s, cfg), DomainError);
    cfg.layers = {3};
    CHECK_THROWS_AS(linear_probe_sweep(model, train, test, s, cfg), ConfigError);
}
