// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "crepa/dit.hpp"
#include "json.hpp"

namespace crepa::alignment {

enum class Mode { vanilla, repa, crepa };
enum class SimKind { cosine_mean_token };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct AlignmentConfig {
    Mode mode = Mode::crepa;
    double lambda = 0.5;
    int d = 1;          // adjacency
    double tau = 1.0;   // temperature
    int tap_layer = 4;
    SimKind sim = SimKind::cosine_mean_token;
    bool normalize_by_frames = false;
    bool renormalize_boundary = false;

    void validate() const;
    /// Also checks d < frames.
    void validate_for(std::int64_t frames) const;
};

void to_json(nlohmann::json& j, const AlignmentConfig& c);
void from_json(const nlohmann::json& j, AlignmentConfig& c);

/// Token-wise MLP h_phi: D_model -> D_enc -> D_enc -> D_enc with SiLU between.
class ProjectionHeadImpl : public torch::nn::Module {
public:
    ProjectionHeadImpl(int d_model, int d_enc);

    torch::Tensor forward(const torch::Tensor& tokens);

    int d_model, d_enc;
    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
};
TORCH_MODULE(ProjectionHead);

ProjectionHead make_head(int d_model, int d_enc, std::uint64_t seed);

/// Applies the head to every tap token: returns [B, F, N_tok, D_enc].
torch::Tensor project(ProjectionHead& head, const dit::TokenGrid& tap);

/// Mean over tokens of the cosine between corresponding rows of y and z
/// ([N, D] each). Zero-norm tokens contribute 0.
torch::Tensor sim(const torch::Tensor& y, const torch::Tensor& z);

/// S[b, f, k] = sim(banks[b, k], projected[b, f]) for all frame pairs.
torch::Tensor frame_similarity(const torch::Tensor& banks, const torch::Tensor& projected);

struct NeighborWeight {
    int k;
    double w;
};

/// In-range members of {f - d, f + d} with weight exp(-|k - f| / tau).
/// With `renormalize`, a boundary frame's single neighbour carries the
/// weight an interior frame spreads over two.
std::vector<NeighborWeight> neighbor_weights(int f, int frames, int d, double tau, bool renormalize = false);

/// -mean_b sum_f sim(bank^f, projected^f). Inputs [B, F, N, D].
torch::Tensor repa_loss(const torch::Tensor& banks, const torch::Tensor& projected,
                        bool normalize_by_frames = false);

/// repa term plus exp-weighted similarity to the adjacent-frame features.
torch::Tensor crepa_loss(const torch::Tensor& banks, const torch::Tensor& projected, int d, double tau,
                         bool normalize_by_frames = false, bool renormalize_boundary = false);

/// Dispatches on config.mode; vanilla returns an exact 0 with no graph.
torch::Tensor alignment_loss(const torch::Tensor& banks, const torch::Tensor& projected,
                             const AlignmentConfig& config);

/// score + lambda * align.
torch::Tensor combined_loss(const torch::Tensor& score, const torch::Tensor& align, double lambda);

/// Bilinearly resamples bank features [B, F, G*G, D] to a gh x gw grid.
torch::Tensor match_grid(const torch::Tensor& banks, int grid_h, int grid_w);

/// Sum over frames of the neighbour weights, the bound W in
/// |crepa_loss| <= F + W.
double total_neighbor_weight(int frames, int d, double tau, bool renormalize = false);

}  // namespace crepa::alignment
