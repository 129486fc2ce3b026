// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace crepa::diffusion {

/// Linear-beta DDPM schedule. Index 0 is the clean boundary (alpha_bar = 1);
/// steps 1..T carry betas[t - 1].
class NoiseSchedule {
public:
    explicit NoiseSchedule(int steps = 100, double beta_min = 1e-4, double beta_max = 2e-2);

    int steps() const { return steps_; }
    double beta_min() const { return beta_min_; }
    double beta_max() const { return beta_max_; }

    double beta(int t) const;       // t in [1, T]
    double alpha(int t) const;      // 1 - beta(t)
    double alpha_bar(int t) const;  // t in [0, T]

    /// alpha_bar gathered for a batch of indices, shaped for broadcasting
    /// against [B, ...] tensors of rank `rank`.
    torch::Tensor alpha_bar_at(const torch::Tensor& t, std::int64_t rank,
                               const torch::TensorOptions& opts) const;

private:
    int steps_;
    double beta_min_, beta_max_;
    std::vector<double> betas_;
    std::vector<double> alpha_bar_;  // size T + 1
};

void to_json(nlohmann::json& j, const NoiseSchedule& s);
void from_json(const nlohmann::json& j, NoiseSchedule& s);

/// Model data space is [-1, 1]; videos are stored in [0, 1].
inline torch::Tensor to_model_space(const torch::Tensor& x01) { return x01 * 2.0 - 1.0; }
inline torch::Tensor to_pixel_space(const torch::Tensor& xm) { return (xm + 1.0) * 0.5; }

/// xt = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps for a single t in
/// [0, T] (0 is the noiseless boundary).
torch::Tensor forward_noise(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& s);
/// Per-sample variant: t is [B] int64, each in [0, T].
torch::Tensor forward_noise(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& s);

/// Mean squared error over every element (the epsilon objective).
torch::Tensor score_loss(const torch::Tensor& eps_pred, const torch::Tensor& eps);

struct DiffusionBatch {
    torch::Tensor x0;   // [B, ...] model space
    torch::Tensor eps;  // same shape, N(0, 1)
    torch::Tensor t;    // [B] int64 in [1, T]
    torch::Tensor xt;
    torch::Tensor t_cont;  // t / T
};

/// Draws t uniformly over [1, T] and eps ~ N(0, I) from `gen`.
DiffusionBatch make_batch(const torch::Tensor& x0, const NoiseSchedule& s, torch::Generator& gen);

enum class SampleMode { ancestral, deterministic };

/// eps-prediction network: (xt [B, ...], t [B] int64) -> eps_pred.
using Denoiser = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

/// One reverse update from step t to t - 1. `noise` is only used in
/// ancestral mode.
torch::Tensor reverse_step(const torch::Tensor& xt, const torch::Tensor& eps_pred, int t, const NoiseSchedule& s,
                           SampleMode mode, const torch::Tensor& noise = {});

/// Runs the full reverse chain from N(0, I) and returns pixel-space values
/// clamped to [0, 1].
torch::Tensor sample(const Denoiser& model, const NoiseSchedule& s, const std::vector<std::int64_t>& shape,
                     std::uint64_t seed, SampleMode mode);

}  // namespace crepa::diffusion
