// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "crepa/dit.hpp"
#include "crepa/errors.hpp"
#include "crepa/rng.hpp"

using namespace crepa;
using namespace crepa::dit;

namespace {

DiTConfig small_config() {
    DiTConfig c;
    c.depth = 2;
    c.d_model = 32;
    c.heads = 4;
    c.tap_layer = 1;
    c.frames = 4;
    c.height = 16;
    c.width = 16;
    c.seed = 11;
    return c;
}

/// Moves every parameter away from its zero-initialised start so the
/// network computes a non-trivial function.
void randomise(torch::nn::Module& m, std::uint64_t seed, double scale = 0.2) {
    auto gen = make_generator(seed);
    torch::NoGradGuard guard;
    for (auto& p : m.parameters()) p.add_(torch::randn(p.sizes(), gen, p.scalar_type()) * scale);
}

struct Inputs {
    torch::Tensor xt, t, y;
};

Inputs inputs(const DiTConfig& c, int batch, std::uint64_t seed, torch::ScalarType dtype = torch::kFloat32) {
    auto gen = make_generator(seed);
    return {torch::randn({batch, c.frames, c.height, c.width, c.channels}, gen, dtype),
            torch::randint(1, 101, {batch}, gen, torch::kLong), torch::randint(0, c.num_classes, {batch}, gen, torch::kLong)};
}

}  // namespace

TEST_CASE("patchify is invertible and frame-major") {
    auto v = torch::randn({2, 8, 32, 32, 3});
    auto tok = patchify(v, 4);
    CHECK(tok.sizes() == torch::IntArrayRef{2, 8 * 64, 48});
    CHECK(torch::equal(unpatchify(tok, 8, 32, 32, 3, 4), v));
    CHECK(frame_of_token(70, 64) == 1);
    // Token 70 is frame 1, grid row 0, column 6.
    auto block = v[0][1].slice(0, 0, 4).slice(1, 24, 28).reshape({-1});
    CHECK(torch::equal(tok[0][70], block));
    CHECK_THROWS_AS(patchify(torch::zeros({1, 2, 30, 32, 3}), 4), DimensionError);
    CHECK_THROWS_AS(unpatchify(tok, 7, 32, 32, 3, 4), DimensionError);
}

TEST_CASE("freshly built model is the identity on the residual stream") {
    auto c = small_config();
    auto model = make_dit(c);
    auto in = inputs(c, 2, 1);
    auto out = model->forward_with_tap(in.xt, in.t, in.y, true);
    CHECK(out.eps_pred.sizes() == in.xt.sizes());
    CHECK(torch::equal(out.eps_pred, torch::zeros_like(in.xt)));
    REQUIRE(out.layers.size() == 2);
    CHECK(torch::equal(out.layers[0].tokens, out.layers[1].tokens));
    CHECK(out.tap.tokens.sizes() == torch::IntArrayRef{2, 4 * 16, 32});
    CHECK(out.tap.per_frame().sizes() == torch::IntArrayRef{2, 4, 16, 32});
    CHECK(base_fingerprint(make_dit(c)) == base_fingerprint(model));
}

TEST_CASE("without temporal positions the model is equivariant to frame permutations") {
    auto c = small_config();
    c.temporal_pos = false;
    auto model = make_dit(c);
    randomise(*model, 3);
    model->eval();
    auto in = inputs(c, 2, 2);
    auto perm = torch::tensor({2, 0, 3, 1}, torch::kLong);
    torch::NoGradGuard guard;
    auto a = model->forward(in.xt, in.t, in.y).index_select(1, perm);
    auto b = model->forward(in.xt.index_select(1, perm), in.t, in.y);
    CHECK(a.abs().max().item<float>() > 1e-3f);
    CHECK(torch::allclose(a, b, 1e-4, 1e-5));

    c.temporal_pos = true;
    auto with_pos = make_dit(c);
    randomise(*with_pos, 3);
    auto a2 = with_pos->forward(in.xt, in.t, in.y).index_select(1, perm);
    auto b2 = with_pos->forward(in.xt.index_select(1, perm), in.t, in.y);
    CHECK(!torch::allclose(a2, b2, 1e-4, 1e-5));
}

TEST_CASE("LoRA injection: exact at init, parameter count, frozen base") {
    auto c = small_config();
    c.d_model = 128;
    c.heads = 4;
    auto model = make_dit(c);
    randomise(*model, 5);
    auto in = inputs(c, 1, 3);
    torch::Tensor before;
    {
        torch::NoGradGuard guard;
        before = model->forward(in.xt, in.t, in.y);
    }
    const auto fp = base_fingerprint(model);
    LoraSpec spec;
    spec.targets = {"q"};
    spec.rank = 4;
    inject_lora(model, spec);
    {
        torch::NoGradGuard guard;
        CHECK(torch::equal(model->forward(in.xt, in.t, in.y), before));
    }
    std::int64_t count = 0;
    for (auto& [name, p] : trainable_parameters(*model)) count += p.numel();
    CHECK(count == c.depth * 2 * 4 * 128);
    CHECK(lora_parameters(*model).size() == static_cast<std::size_t>(2 * c.depth));
    for (auto& [name, p] : base_parameters(*model)) CHECK_FALSE(p.requires_grad());

    std::vector<torch::Tensor> params;
    for (auto& [name, p] : trainable_parameters(*model)) params.push_back(p);
    torch::optim::Adam opt(params, torch::optim::AdamOptions(1e-2));
    auto loss = model->forward(in.xt, in.t, in.y).pow(2).mean();
    loss.backward();
    opt.step();
    CHECK(base_fingerprint(model) == fp);
    bool moved = false;
    for (auto& [name, p] : lora_parameters(*model))
        if (name.find(".B") != std::string::npos) moved = moved || p.abs().max().item<float>() > 0;
    CHECK(moved);
    torch::Tensor adapted;
    {
        torch::NoGradGuard guard;
        adapted = model->forward(in.xt, in.t, in.y);
    }
    CHECK_FALSE(torch::equal(adapted, before));

    remove_lora(model);
    torch::NoGradGuard guard;
    CHECK(torch::equal(model->forward(in.xt, in.t, in.y), before));
    CHECK(lora_parameters(*model).empty());
}

TEST_CASE("LoRA targets resolve short and qualified names") {
    auto model = make_dit(small_config());
    LoraSpec spec;
    spec.targets = {"blocks.1.fc1", "v"};
    inject_lora(model, spec);
    auto b0 = model->blocks->ptr<DiTBlockImpl>(0), b1 = model->blocks->ptr<DiTBlockImpl>(1);
    CHECK(b0->v->has_adapter());
    CHECK(b1->v->has_adapter());
    CHECK(b1->fc1->has_adapter());
    CHECK_FALSE(b0->fc1->has_adapter());
    CHECK_FALSE(b0->q->has_adapter());
    spec.targets = {"nope"};
    CHECK_THROWS_AS(inject_lora(model, spec), ConfigError);
}

TEST_CASE("score-loss gradients match central finite differences") {
    auto c = small_config();
    c.d_model = 16;
    c.heads = 2;
    auto model = make_dit(c);
    model->to(torch::kFloat64);
    randomise(*model, 7);
    inject_lora(model, LoraSpec{});
    randomise(*model, 8, 0.3);
    auto in = inputs(c, 1, 4, torch::kFloat64);
    auto target = torch::randn_like(in.xt);
    auto loss_fn = [&] { return (model->forward(in.xt, in.t, in.y) - target).pow(2).mean(); };

    auto params = trainable_parameters(*model);
    for (auto& [name, p] : params)
        if (p.grad().defined()) p.grad().zero_();
    loss_fn().backward();
    torch::NoGradGuard guard;
    double worst = 0.0;
    for (auto& [name, p] : params) {
        auto flat = p.view({-1});
        auto g = p.grad().view({-1});
        for (std::int64_t i = 0; i < flat.numel(); i += std::max<std::int64_t>(1, flat.numel() / 6)) {
            const double orig = flat[i].item<double>(), h = 1e-6;
            flat[i] = orig + h;
            const double up = loss_fn().item<double>();
            flat[i] = orig - h;
            const double down = loss_fn().item<double>();
            flat[i] = orig;
            const double fd = (up - down) / (2 * h), an = g[i].item<double>();
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("checkpoints round-trip base, adapters and extras") {
    auto c = small_config();
    auto model = make_dit(c);
    randomise(*model, 9);
    LoraSpec spec;
    spec.rank = 2;
    inject_lora(model, spec);
    randomise(*model, 10);
    auto in = inputs(c, 1, 5);
    TempDir dir;
    CheckpointExtras extras;
    extras.lora = spec;
    extras.extra_sections = {{"head.weight", torch::randn({3, 4})}};
    save_checkpoint(dir.path / "m.crpd", model, extras);
    auto loaded = load_checkpoint(dir.path / "m.crpd");
    REQUIRE(loaded.lora.has_value());
    CHECK(loaded.lora->rank == 2);
    REQUIRE(loaded.extra_sections.size() == 1);
    CHECK(torch::equal(loaded.extra_sections[0].second, extras.extra_sections[0].second));
    CHECK(base_fingerprint(loaded.model) == base_fingerprint(model));
    torch::NoGradGuard guard;
    CHECK(torch::equal(loaded.model->forward(in.xt, in.t, in.y), model->forward(in.xt, in.t, in.y)));

    auto fresh = clone_base(model);
    CHECK(base_fingerprint(fresh) == base_fingerprint(model));
    load_lora(dir.path / "m.crpd", fresh);
    CHECK(torch::equal(fresh->forward(in.xt, in.t, in.y), model->forward(in.xt, in.t, in.y)));

    {
        auto bytes = read_file(dir.path / "m.crpd");
        std::ofstream(dir.path / "short.crpd", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
        std::ofstream(dir.path / "magic.crpd", std::ios::binary) << "XXXX" + bytes.substr(4);
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path / "short.crpd"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "magic.crpd"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "absent.crpd"), IoError);
}

TEST_CASE("model config validation and input checks") {
    auto c = small_config();
    c.tap_layer = 3;
    CHECK_THROWS_AS(make_dit(c), ConfigError);
    c = small_config();
    c.heads = 5;
    CHECK_THROWS_AS(make_dit(c), ConfigError);
    c = small_config();
    auto model = make_dit(c);
    CHECK_THROWS_AS(model->set_tap_layer(0), ConfigError);
    model->set_tap_layer(2);
    CHECK(model->config().tap_layer == 2);
    auto in = inputs(c, 2, 6);
    CHECK_THROWS_AS(model->forward(in.xt.slice(2, 0, 8), in.t, in.y), DimensionError);
    CHECK_THROWS_AS(model->forward(in.xt, in.t.slice(0, 0, 1), in.y), DimensionError);
    CHECK_THROWS_AS(model->forward(in.xt[0], in.t, in.y), DimensionError);

    nlohmann::json j = c;
    auto back = j.get<DiTConfig>();
    CHECK(back.d_model == c.d_model);
    CHECK(back.tap_layer == c.tap_layer);
    j["tap_point"] = "elsewhere";
    CHECK_THROWS_AS(j.get<DiTConfig>(), ConfigError);
}
