// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/diffusion.hpp"

#include <cmath>

#include "crepa/errors.hpp"
#include "crepa/rng.hpp"

namespace crepa::diffusion {

namespace {

constexpr const char* kModule = "diffusion";

void check_t(int t, int lo, int hi) {
    if (t < lo || t > hi)
        throw DomainError(kModule, "timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                       std::to_string(hi) + "]");
}

}  // namespace

NoiseSchedule::NoiseSchedule(int steps, double beta_min, double beta_max)
    : steps_(steps), beta_min_(beta_min), beta_max_(beta_max) {
    if (steps < 1) throw ConfigError(kModule, "schedule needs at least one step");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        throw ConfigError(kModule, "betas must satisfy 0 < beta_min <= beta_max < 1");
    betas_.resize(static_cast<std::size_t>(steps));
    alpha_bar_.resize(static_cast<std::size_t>(steps) + 1);
    alpha_bar_[0] = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        betas_[static_cast<std::size_t>(i)] = beta_min + frac * (beta_max - beta_min);
        alpha_bar_[static_cast<std::size_t>(i) + 1] =
            alpha_bar_[static_cast<std::size_t>(i)] * (1.0 - betas_[static_cast<std::size_t>(i)]);
    }
}

double NoiseSchedule::beta(int t) const {
    check_t(t, 1, steps_);
    return betas_[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(int t) const {
    check_t(t, 0, steps_);
    return alpha_bar_[static_cast<std::size_t>(t)];
}

torch::Tensor NoiseSchedule::alpha_bar_at(const torch::Tensor& t, std::int64_t rank,
                                          const torch::TensorOptions& opts) const {
    if (t.numel() > 0) {
        const auto lo = t.min().item<std::int64_t>(), hi = t.max().item<std::int64_t>();
        if (lo < 0 || hi > steps_) check_t(static_cast<int>(lo < 0 ? lo : hi), 0, steps_);
    }
    auto table = torch::tensor(alpha_bar_, torch::kFloat64);
    auto ab = table.index_select(0, t.to(torch::kLong)).to(opts.dtype());
    std::vector<std::int64_t> shape(static_cast<std::size_t>(rank), 1);
    shape[0] = t.size(0);
    return ab.view(shape);
}

void to_json(nlohmann::json& j, const NoiseSchedule& s) {
    j = nlohmann::json{{"T_steps", s.steps()}, {"beta_min", s.beta_min()}, {"beta_max", s.beta_max()}};
}

void from_json(const nlohmann::json& j, NoiseSchedule& s) {
    s = NoiseSchedule(j.value("T_steps", 100), j.value("beta_min", 1e-4), j.value("beta_max", 2e-2));
}

torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& s) {
    if (x0.sizes() != eps.sizes()) throw DimensionError(kModule, "x0 and eps shapes differ");
    const double ab = s.alpha_bar(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& s) {
    if (x0.sizes() != eps.sizes()) throw DimensionError(kModule, "x0 and eps shapes differ");
    if (t.dim() != 1 || t.size(0) != x0.size(0)) throw DimensionError(kModule, "t must be [B]");
    auto ab = s.alpha_bar_at(t, x0.dim(), x0.options().dtype(torch::kFloat64));
    return ab.sqrt().to(x0.scalar_type()) * x0 + (1.0 - ab).sqrt().to(x0.scalar_type()) * eps;
}

torch::Tensor score_loss(const torch::Tensor& eps_pred, const torch::Tensor& eps) {
    if (eps_pred.sizes() != eps.sizes())
        throw DimensionError(kModule, "eps_pred and eps shapes differ");
    return (eps_pred - eps).pow(2).mean();
}

DiffusionBatch make_batch(const torch::Tensor& x0, const NoiseSchedule& s, torch::Generator& gen) {
    DiffusionBatch b;
    b.x0 = x0;
    b.t = torch::randint(1, s.steps() + 1, {x0.size(0)}, gen, torch::kLong);
    b.eps = torch::randn(x0.sizes(), gen, x0.options());
    b.xt = forward_noise(x0, b.t, b.eps, s);
    b.t_cont = b.t.to(torch::kFloat64) / s.steps();
    return b;
}

torch::Tensor reverse_step(const torch::Tensor& xt, const torch::Tensor& eps_pred, int t, const NoiseSchedule& s,
                           SampleMode mode, const torch::Tensor& noise) {
    check_t(t, 1, s.steps());
    const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
    if (mode == SampleMode::deterministic) {
        // DDIM with eta = 0.
        auto x0_hat = (xt - std::sqrt(1.0 - ab) * eps_pred) / std::sqrt(ab);
        return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps_pred;
    }
    const double beta = s.beta(t);
    auto mean = (xt - beta / std::sqrt(1.0 - ab) * eps_pred) / std::sqrt(1.0 - beta);
    if (t == 1) return mean;
    const double var = beta * (1.0 - ab_prev) / (1.0 - ab);  // posterior variance
    return mean + std::sqrt(var) * noise;
}

torch::Tensor sample(const Denoiser& model, const NoiseSchedule& s, const std::vector<std::int64_t>& shape,
                     std::uint64_t seed, SampleMode mode) {
    torch::NoGradGuard guard;
    auto gen = make_generator(seed);
    auto x = torch::randn(shape, gen, torch::kFloat32);
    const auto B = shape.at(0);
    for (int t = s.steps(); t >= 1; --t) {
        auto eps = model(x, torch::full({B}, t, torch::kLong));
        torch::Tensor noise;
        if (mode == SampleMode::ancestral) noise = torch::randn(shape, gen, torch::kFloat32);
        x = reverse_step(x, eps, t, s, mode, noise);
        if (!torch::isfinite(x).all().item<bool>())
            throw NumericError(kModule, "non-finite sampler state at step " + std::to_string(t));
    }
    return to_pixel_space(x).clamp(0.0, 1.0);
}

}  // namespace crepa::diffusion
