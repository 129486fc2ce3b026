// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/alignment.hpp"

#include <cmath>
#include <mutex>

#include "crepa/errors.hpp"

namespace crepa::alignment {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kModule = "alignment";
constexpr double kNormEps = 1e-8;

void check_pair(const torch::Tensor& banks, const torch::Tensor& projected) {
    if (banks.dim() != 4 || projected.dim() != 4)
        throw DimensionError(kModule, "banks and projected must be [B, F, N, D]");
    if (banks.size(1) != projected.size(1))
        throw DimensionError(kModule, "frame count mismatch: bank has " + std::to_string(banks.size(1)) +
                                          ", projection has " + std::to_string(projected.size(1)));
    if (banks.size(0) != projected.size(0) || banks.size(2) != projected.size(2) ||
        banks.size(3) != projected.size(3))
        throw DimensionError(kModule, "bank and projection shapes differ");
}

/// [F, F] weight matrix: W[f, k] = weight of bank frame k for hidden frame f.
torch::Tensor neighbor_matrix(int frames, int d, double tau, bool renormalize, const torch::TensorOptions& opts) {
    auto w = torch::zeros({frames, frames}, torch::kFloat64);
    auto acc = w.accessor<double, 2>();
    for (int f = 0; f < frames; ++f)
        for (const auto& nw : neighbor_weights(f, frames, d, tau, renormalize)) acc[f][nw.k] = nw.w;
    return w.to(opts.dtype());
}

}  // namespace

std::string to_string(Mode m) {
    switch (m) {
        case Mode::vanilla: return "vanilla";
        case Mode::repa: return "repa";
        case Mode::crepa: return "crepa";
    }
    return "?";
}

Mode mode_from_string(const std::string& s) {
    if (s == "vanilla") return Mode::vanilla;
    if (s == "repa") return Mode::repa;
    if (s == "crepa") return Mode::crepa;
    throw ConfigError(kModule, "unknown alignment mode '" + s + "'");
}

void AlignmentConfig::validate() const {
    if (!(lambda >= 0.0)) throw ConfigError(kModule, "lambda must be >= 0");
    if (d < 1) throw ConfigError(kModule, "adjacency d must be >= 1");
    if (!(tau > 0.0)) throw ConfigError(kModule, "tau must be > 0");
    if (tap_layer < 1) throw ConfigError(kModule, "tap_layer must be >= 1");
}

void AlignmentConfig::validate_for(std::int64_t frames) const {
    validate();
    if (d >= frames)
        throw ConfigError(kModule, "adjacency d=" + std::to_string(d) + " needs more than " +
                                       std::to_string(frames) + " frames");
}

void to_json(nlohmann::json& j, const AlignmentConfig& c) {
    j = nlohmann::json{{"mode", to_string(c.mode)},
                       {"lambda", c.lambda},
                       {"d", c.d},
                       {"tau", c.tau},
                       {"tap_layer", c.tap_layer},
                       {"sim", "cosine-mean-token"},
                       {"normalize_by_frames", c.normalize_by_frames},
                       {"renormalize_boundary", c.renormalize_boundary}};
}

void from_json(const nlohmann::json& j, AlignmentConfig& c) {
    AlignmentConfig d;
    c.mode = mode_from_string(j.value("mode", to_string(d.mode)));
    c.lambda = j.value("lambda", d.lambda);
    c.d = j.value("d", d.d);
    c.tau = j.value("tau", d.tau);
    c.tap_layer = j.value("tap_layer", d.tap_layer);
    const auto s = j.value("sim", std::string("cosine-mean-token"));
    if (s != "cosine-mean-token") throw ConfigError(kModule, "unknown sim '" + s + "'");
    c.sim = SimKind::cosine_mean_token;
    c.normalize_by_frames = j.value("normalize_by_frames", d.normalize_by_frames);
    c.renormalize_boundary = j.value("renormalize_boundary", d.renormalize_boundary);
}

// --- projection head ---------------------------------------------------------------

ProjectionHeadImpl::ProjectionHeadImpl(int d_model_, int d_enc_) : d_model(d_model_), d_enc(d_enc_) {
    fc1 = register_module("fc1", torch::nn::Linear(d_model, d_enc));
    fc2 = register_module("fc2", torch::nn::Linear(d_enc, d_enc));
    fc3 = register_module("fc3", torch::nn::Linear(d_enc, d_enc));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& tokens) {
    if (tokens.size(-1) != d_model)
        throw DimensionError(kModule, "tap width " + std::to_string(tokens.size(-1)) +
                                          " does not match head input " + std::to_string(d_model));
    return fc3->forward(torch::silu(fc2->forward(torch::silu(fc1->forward(tokens)))));
}

ProjectionHead make_head(int d_model, int d_enc, std::uint64_t seed) {
    static std::mutex m;
    std::lock_guard lock(m);
    torch::manual_seed(seed);
    return ProjectionHead(d_model, d_enc);
}

torch::Tensor project(ProjectionHead& head, const dit::TokenGrid& tap) {
    auto out = head->forward(tap.per_frame());
    if (!torch::isfinite(out).all().item<bool>()) throw NumericError(kModule, "non-finite projection");
    return out;
}

// --- similarity and losses -----------------------------------------------------------

torch::Tensor sim(const torch::Tensor& y, const torch::Tensor& z) {
    if (y.sizes() != z.sizes() || y.dim() != 2) throw DimensionError(kModule, "sim expects matching [N, D]");
    auto yn = F::normalize(y, F::NormalizeFuncOptions().dim(-1).eps(kNormEps));
    auto zn = F::normalize(z, F::NormalizeFuncOptions().dim(-1).eps(kNormEps));
    return (yn * zn).sum(-1).mean();
}

torch::Tensor frame_similarity(const torch::Tensor& banks, const torch::Tensor& projected) {
    check_pair(banks, projected);
    auto yn = F::normalize(banks, F::NormalizeFuncOptions().dim(-1).eps(kNormEps));
    auto zn = F::normalize(projected, F::NormalizeFuncOptions().dim(-1).eps(kNormEps));
    // [B, F_hidden, F_bank]
    return torch::einsum("bfnd,bknd->bfk", {zn, yn}) / static_cast<double>(banks.size(2));
}

std::vector<NeighborWeight> neighbor_weights(int f, int frames, int d, double tau, bool renormalize) {
    if (f < 0 || f >= frames) throw DomainError(kModule, "frame index out of range");
    if (d < 1) throw ConfigError(kModule, "adjacency d must be >= 1");
    if (!(tau > 0.0)) throw ConfigError(kModule, "tau must be > 0");
    if (d >= frames) throw ConfigError(kModule, "adjacency d must be smaller than the frame count");
    const double w = std::exp(-static_cast<double>(d) / tau);
    std::vector<NeighborWeight> out;
    for (int k : {f - d, f + d})
        if (k >= 0 && k < frames) out.push_back({k, w});
    if (renormalize && out.size() == 1) out[0].w = 2.0 * w;
    return out;
}

double total_neighbor_weight(int frames, int d, double tau, bool renormalize) {
    double total = 0.0;
    for (int f = 0; f < frames; ++f)
        for (const auto& nw : neighbor_weights(f, frames, d, tau, renormalize)) total += nw.w;
    return total;
}

torch::Tensor repa_loss(const torch::Tensor& banks, const torch::Tensor& projected, bool normalize_by_frames) {
    auto s = frame_similarity(banks, projected);
    auto per_video = s.diagonal(0, 1, 2).sum(1);
    if (normalize_by_frames) per_video = per_video / static_cast<double>(banks.size(1));
    return -per_video.mean();
}

torch::Tensor crepa_loss(const torch::Tensor& banks, const torch::Tensor& projected, int d, double tau,
                         bool normalize_by_frames, bool renormalize_boundary) {
    check_pair(banks, projected);
    const auto frames = static_cast<int>(banks.size(1));
    auto s = frame_similarity(banks, projected);
    auto w = neighbor_matrix(frames, d, tau, renormalize_boundary, s.options());
    auto per_video = s.diagonal(0, 1, 2).sum(1) + (s * w.unsqueeze(0)).sum({1, 2});
    if (normalize_by_frames) per_video = per_video / static_cast<double>(frames);
    return -per_video.mean();
}

torch::Tensor alignment_loss(const torch::Tensor& banks, const torch::Tensor& projected,
                             const AlignmentConfig& config) {
    switch (config.mode) {
        case Mode::vanilla:
            return torch::zeros({}, projected.options().requires_grad(false));
        case Mode::repa:
            return repa_loss(banks, projected, config.normalize_by_frames);
        case Mode::crepa:
            config.validate_for(banks.size(1));
            return crepa_loss(banks, projected, config.d, config.tau, config.normalize_by_frames,
                              config.renormalize_boundary);
    }
    throw ConfigError(kModule, "unknown mode");
}

torch::Tensor combined_loss(const torch::Tensor& score, const torch::Tensor& align, double lambda) {
    if (!torch::isfinite(score).all().item<bool>() || !torch::isfinite(align).all().item<bool>())
        throw NumericError(kModule, "non-finite loss term");
    return score + lambda * align;
}

torch::Tensor match_grid(const torch::Tensor& banks, int grid_h, int grid_w) {
    const auto B = banks.size(0), Fr = banks.size(1), N = banks.size(2), D = banks.size(3);
    const auto side = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(N))));
    if (side * side != N) throw DimensionError(kModule, "bank token count is not a square grid");
    if (side == grid_h && side == grid_w) return banks;
    auto img = banks.reshape({B * Fr, side, side, D}).permute({0, 3, 1, 2});
    auto out = F::interpolate(img, F::InterpolateFuncOptions()
                                       .size(std::vector<std::int64_t>{grid_h, grid_w})
                                       .mode(torch::kBilinear)
                                       .align_corners(false));
    return out.permute({0, 2, 3, 1}).reshape({B, Fr, static_cast<std::int64_t>(grid_h) * grid_w, D});
}

}  // namespace crepa::alignment
