// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace crepa::dit {

/// Where the hidden-state tap is read inside the tapped block.
enum class TapPoint {
    post_residual,    // block output (input + attention + mlp branches)
    residual_branch,  // the block's branch sum, without the skip path
};

struct DiTConfig {
    int depth = 8;
    int d_model = 128;
    int heads = 4;
    int patch = 4;
    int tap_layer = 4;  // 1-based block index
    bool class_cond = true;
    int num_classes = 18;
    int frames = 8;
    int height = 32;
    int width = 32;
    int channels = 3;
    int max_frames = 16;
    bool temporal_pos = true;
    double mlp_ratio = 4.0;
    TapPoint tap_point = TapPoint::post_residual;
    std::uint64_t seed = 0;

    int grid_h() const { return height / patch; }
    int grid_w() const { return width / patch; }
    int tokens_per_frame() const { return grid_h() * grid_w(); }
    int patch_dim() const { return patch * patch * channels; }
    /// Label used for unconditional (dropped) conditioning.
    int null_class() const { return num_classes; }

    void validate() const;
};

void to_json(nlohmann::json& j, const DiTConfig& c);
void from_json(const nlohmann::json& j, DiTConfig& c);

/// Per-frame token grid of shape [B, F * N_tok, D]. Tokens are frame-major,
/// raster order inside a frame, so token n belongs to frame n / N_tok.
struct TokenGrid {
    torch::Tensor tokens;
    std::int64_t frames = 0;
    std::int64_t tokens_per_frame = 0;

    /// Reshaped view [B, F, N_tok, D].
    torch::Tensor per_frame() const;
};

inline std::int64_t frame_of_token(std::int64_t n, std::int64_t tokens_per_frame) {
    return n / tokens_per_frame;
}

/// [B, F, H, W, C] (or [F, H, W, C]) -> [B, F * (H/P) * (W/P), P * P * C].
torch::Tensor patchify(const torch::Tensor& video, int patch);
/// Inverse of patchify for the given frame geometry; returns [B, F, H, W, C].
torch::Tensor unpatchify(const torch::Tensor& tokens, int frames, int height, int width, int channels,
                         int patch);

// --- LoRA ----------------------------------------------------------------

class LoraAdapterImpl : public torch::nn::Module {
public:
    LoraAdapterImpl(std::int64_t d_in, std::int64_t d_out, int rank, double alpha,
                    torch::Generator& gen);

    torch::Tensor delta(const torch::Tensor& x) const;

    torch::Tensor A;  // [r, d_in]
    torch::Tensor B;  // [d_out, r], zero at init
    int rank;
    double alpha;
};
TORCH_MODULE(LoraAdapter);

/// Linear layer whose effective weight is W + (alpha / r) * B * A when an
/// adapter is attached. Without an adapter it is exactly F::linear(x, W, b).
class AdaptableLinearImpl : public torch::nn::Module {
public:
    AdaptableLinearImpl(std::int64_t d_in, std::int64_t d_out);

    torch::Tensor forward(const torch::Tensor& x);

    void attach(int rank, double alpha, torch::Generator& gen);
    void detach_adapter();
    bool has_adapter() const { return !adapter.is_empty(); }

    torch::Tensor weight;
    torch::Tensor bias;
    LoraAdapter adapter{nullptr};
    std::int64_t d_in, d_out;
};
TORCH_MODULE(AdaptableLinear);

class DiTBlockImpl : public torch::nn::Module {
public:
    DiTBlockImpl(int d_model, int heads, double mlp_ratio);

    struct Output {
        torch::Tensor out;
        torch::Tensor branch;
    };
    /// x: [B, T, D]; cond: [B, D].
    Output forward(const torch::Tensor& x, const torch::Tensor& cond);

    AdaptableLinear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};
    AdaptableLinear fc1{nullptr}, fc2{nullptr};
    torch::nn::Linear modulation{nullptr};
    int heads;
};
TORCH_MODULE(DiTBlock);

struct ForwardOutput {
    torch::Tensor eps_pred;  // [B, F, H, W, C]
    TokenGrid tap;           // at config.tap_layer
    std::vector<TokenGrid> layers;  // every block, only when requested
};

class VideoDiTImpl : public torch::nn::Module {
public:
    explicit VideoDiTImpl(const DiTConfig& config);

    /// xt: [B, F, H, W, C] in model space; t: [B] int64 timestep indices;
    /// labels: [B] int64 class ids (null_class() for unconditional).
    ForwardOutput forward_with_tap(const torch::Tensor& xt, const torch::Tensor& t,
                                   const torch::Tensor& labels, bool all_layers = false);

    torch::Tensor forward(const torch::Tensor& xt, const torch::Tensor& t, const torch::Tensor& labels) {
        return forward_with_tap(xt, t, labels).eps_pred;
    }

    const DiTConfig& config() const { return config_; }
    void set_tap_layer(int layer);

    torch::nn::Linear patch_embed{nullptr};
    torch::Tensor pos_spatial;   // [N_tok, D]
    torch::Tensor pos_temporal;  // [max_frames, D]
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Embedding class_embed{nullptr};
    torch::nn::ModuleList blocks{nullptr};
    torch::nn::Linear final_modulation{nullptr};
    torch::nn::Linear final_proj{nullptr};

private:
    torch::Tensor timestep_embedding(const torch::Tensor& t) const;

    DiTConfig config_;
};
TORCH_MODULE(VideoDiT);

/// Builds a model with weights drawn from `config.seed`.
VideoDiT make_dit(const DiTConfig& config);

/// Deep copy of the base (non-adapter) weights into a fresh model.
VideoDiT clone_base(const VideoDiT& model);

struct LoraSpec {
    std::vector<std::string> targets = {"q", "k", "v", "out"};
    int rank = 4;
    double alpha = 8.0;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const LoraSpec& s);
void from_json(const nlohmann::json& j, LoraSpec& s);

/// Attaches adapters to the targets and freezes every base parameter.
/// A target is either a short name applied to every block ("q", "k", "v",
/// "out", "fc1", "fc2") or a qualified one ("blocks.3.q").
void inject_lora(VideoDiT& model, const LoraSpec& spec);
/// Drops all adapters; the model then computes exactly the base function.
void remove_lora(VideoDiT& model);

std::vector<std::pair<std::string, torch::Tensor>> trainable_parameters(const torch::nn::Module& model);
std::vector<std::pair<std::string, torch::Tensor>> base_parameters(const torch::nn::Module& model);
std::vector<std::pair<std::string, torch::Tensor>> lora_parameters(const torch::nn::Module& model);

/// FNV-1a fingerprint over the base (non-adapter) weights.
std::uint64_t base_fingerprint(const VideoDiT& model);

void set_requires_grad(torch::nn::Module& module, bool flag);

// --- checkpoints ("CRPD") ---------------------------------------------------

struct CheckpointExtras {
    std::optional<LoraSpec> lora;
    std::vector<std::pair<std::string, torch::Tensor>> extra_sections;  // e.g. projection head
};

void save_checkpoint(const std::filesystem::path& path, const VideoDiT& model,
                     const CheckpointExtras& extras = {});

struct LoadedCheckpoint {
    VideoDiT model{nullptr};
    std::optional<LoraSpec> lora;
    std::vector<std::pair<std::string, torch::Tensor>> extra_sections;
};

/// Loads base weights and, if present, attaches and fills the LoRA sections.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Loads only the LoRA sections of `path` onto a matching base model.
void load_lora(const std::filesystem::path& path, VideoDiT& base);

}  // namespace crepa::dit
