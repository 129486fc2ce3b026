// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

#include "crepa/synth.hpp"
#include "json.hpp"

namespace crepa::encoder {

struct EncoderConfig {
    int grid = 8;    // G: tokens per side
    int d_enc = 32;  // feature width
    int height = 32;
    int width = 32;
    std::vector<int> channels = {16, 32, 32};  // three conv blocks
    bool post_norm = true;                     // LayerNorm on output tokens
    int num_classes = synth::kNumClasses;
    std::uint64_t seed = 0;

    // pretext training
    int steps = 600;
    int batch = 64;
    double lr = 2e-3;
    double target_accuracy = 0.80;
    double failure_accuracy = 0.60;

    int tokens() const { return grid * grid; }
    void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Per-video frozen features, [F, G*G, D_enc].
struct FeatureBank {
    torch::Tensor features;
    std::string video_id;
    std::uint64_t encoder_fingerprint = 0;
};

/// Conv tokenizer: three 3x3 conv blocks (stride 2 where needed to reach
/// the G x G grid), then a 1x1 per-token linear head. The pretext classifier
/// reads mean-pooled tokens.
class FrameEncoderNetImpl : public torch::nn::Module {
public:
    explicit FrameEncoderNetImpl(const EncoderConfig& config);

    /// frames: [N, H, W, 3] in [0, 1] -> tokens [N, G*G, D_enc].
    torch::Tensor tokens(const torch::Tensor& frames);
    /// frames -> class logits [N, num_classes].
    torch::Tensor logits(const torch::Tensor& frames);
    torch::Tensor classify_tokens(const torch::Tensor& tokens);

    const EncoderConfig& config() const { return config_; }

    torch::nn::Sequential trunk{nullptr};
    torch::nn::Conv2d token_head{nullptr};
    torch::nn::Linear classifier{nullptr};

private:
    EncoderConfig config_;
};
TORCH_MODULE(FrameEncoderNet);

/// A frozen encoder: weights are immutable once constructed, so every
/// method is safe to call concurrently.
class Encoder {
public:
    Encoder() = default;
    explicit Encoder(const EncoderConfig& config);  // random (untrained) weights
    /// Takes ownership of a trained network and freezes it.
    static Encoder freeze(FrameEncoderNet net);

    const EncoderConfig& config() const { return module_->config(); }
    std::uint64_t fingerprint() const;

    /// frame: [H, W, 3] -> [G*G, D_enc].
    torch::Tensor encode_frame(const torch::Tensor& frame) const;
    FeatureBank encode_video(const synth::VideoTensor& video, const std::string& video_id = {}) const;
    /// Batched features for videos [B, F, H, W, 3] -> [B, F, G*G, D_enc].
    torch::Tensor encode_batch(const torch::Tensor& videos) const;

    /// Predicted class per frame, frames [N, H, W, 3].
    torch::Tensor predict(const torch::Tensor& frames) const;
    double frame_accuracy(const std::vector<synth::LabeledVideo>& videos) const;

    void save(const std::filesystem::path& path) const;
    static Encoder load(const std::filesystem::path& path);

    bool valid() const { return !module_.is_empty(); }
    FrameEncoderNetImpl& module() const { return *module_; }

private:
    mutable FrameEncoderNet module_{nullptr};
};

struct PretrainResult {
    Encoder encoder;
    double heldout_accuracy = 0.0;
    std::vector<double> losses;
};

/// Trains the pretext classifier on single frames of the train split and
/// freezes the result. Throws TrainingFailure below `failure_accuracy`.
PretrainResult pretrain_encoder(const synth::Manifest& manifest, const EncoderConfig& config);
PretrainResult pretrain_encoder(const std::vector<synth::LabeledVideo>& train,
                                const std::vector<synth::LabeledVideo>& heldout, const EncoderConfig& config);

}  // namespace crepa::encoder
