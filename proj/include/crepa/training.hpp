// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "crepa/alignment.hpp"
#include "crepa/diffusion.hpp"
#include "crepa/dit.hpp"
#include "crepa/encoder.hpp"
#include "crepa/metrics.hpp"
#include "crepa/synth.hpp"
#include "json.hpp"

namespace crepa::training {

// --- base pretraining ------------------------------------------------------------

struct BaseConfig {
    int steps = 3000;
    int batch = 4;
    double lr = 1e-3;
    double class_drop = 0.1;  // probability of training on the null label
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const BaseConfig& c);
void from_json(const nlohmann::json& j, BaseConfig& c);

struct BaseResult {
    dit::VideoDiT model{nullptr};
    std::vector<double> losses;
    double initial_loss = 0;  // step 0
    double final_loss = 0;    // mean over the last 5% of steps
};

/// Trains every DiT weight with the epsilon objective on a mixture of all
/// classes.
BaseResult pretrain_base(const std::vector<synth::LabeledVideo>& dataset, const dit::DiTConfig& config,
                         const diffusion::NoiseSchedule& schedule, const BaseConfig& base);

// --- fine-tuning -------------------------------------------------------------------

struct TrainConfig {
    alignment::AlignmentConfig align;  // align.mode is the regime
    int steps = 2000;
    int batch = 4;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int eval_every = 250;  // 0 disables intermediate sweeps
    int checkpoint_every = 0;  // 0: final checkpoint only
    dit::LoraSpec lora;
    metrics::SweepConfig sweep;
    bool conditional = true;  // condition on the target class
    int sample_videos = 0;    // samples drawn for the encoder-probe accuracy
    diffusion::SampleMode sample_mode = diffusion::SampleMode::deterministic;
    bool final_sweep = true;

    alignment::Mode mode() const { return align.mode; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepRecord {
    int step = 0;
    double score = 0;
    double align = 0;
    double combined = 0;
};

/// Tap bookkeeping for one step: the digest of the tap as returned by the
/// forward pass and of the tensor handed to the projection head.
struct StepTrace {
    int step = 0;
    std::uint64_t forward_tap_digest = 0;
    std::uint64_t consumed_tap_digest = 0;
    const void* forward_tap_ptr = nullptr;
    const void* consumed_tap_ptr = nullptr;
    torch::Tensor xt, t, labels;  // inputs of the step, for recompute checks
};

struct RunRecord {
    nlohmann::json config;
    std::string run_id;
    alignment::Mode mode = alignment::Mode::vanilla;
    std::uint64_t seed = 0;
    int steps = 0;
    int target_class = 0;
    std::vector<StepRecord> curve;
    std::vector<std::pair<int, metrics::AlignmentReport>> reports;  // (step, report)
    std::optional<metrics::AlignmentReport> final_report;
    std::optional<double> sample_probe_accuracy;
    std::vector<std::string> checkpoints;
    double wall_clock_s = 0;
    std::uint64_t encoder_fingerprint = 0;
    std::uint64_t base_fingerprint = 0;
};

struct FinetuneData {
    int target_class = 0;
    std::vector<synth::LabeledVideo> train;    // the fine-tune subset
    std::vector<synth::LabeledVideo> heldout;  // sweep / evaluation videos
};

using FeatureCache = std::map<std::pair<std::string, std::uint64_t>, torch::Tensor>;

struct FinetuneResult {
    RunRecord record;
    dit::VideoDiT model{nullptr};  // base clone with trained adapters
    alignment::ProjectionHead head{nullptr};
};

/// Fine-tunes LoRA adapters (plus the projection head unless vanilla) on
/// top of a frozen copy of `base`. When `run_dir` is given the run layout
/// (config.json, curves.csv, reports/, checkpoints/, record.json) is written.
FinetuneResult finetune(const dit::VideoDiT& base, const encoder::Encoder& enc, const FinetuneData& data,
                        const diffusion::NoiseSchedule& schedule, const TrainConfig& config,
                        const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                        const std::function<void(const StepTrace&)>& on_step = {});

/// Frozen features per video, resampled to the DiT grid, keyed by
/// (video id, encoder fingerprint).
torch::Tensor feature_bank(FeatureCache& cache, const encoder::Encoder& enc, const synth::LabeledVideo& video,
                           int grid_h, int grid_w);

/// Fraction of sampled frames the frozen encoder assigns to `target_class`.
double sample_probe_accuracy(dit::VideoDiT& model, const encoder::Encoder& enc,
                             const diffusion::NoiseSchedule& schedule, int target_class, int count,
                             std::uint64_t seed, diffusion::SampleMode mode, bool conditional = true);

/// Samples `count` videos; returns [count, F, H, W, 3] in [0, 1].
torch::Tensor sample_videos(dit::VideoDiT& model, const diffusion::NoiseSchedule& schedule, int label, int count,
                            std::uint64_t seed, diffusion::SampleMode mode);

void write_curves_csv(const std::filesystem::path& path, const std::vector<StepRecord>& curve);
std::vector<StepRecord> read_curves_csv(const std::filesystem::path& path);

/// Reads a run directory written by finetune.
RunRecord load_run(const std::filesystem::path& run_dir);

// --- comparison ---------------------------------------------------------------------

struct ComparisonRow {
    std::string regime;
    std::string run_id;
    double cknna_prev = 0;  // offset -d
    double cknna_curr = 0;  // offset 0
    double cknna_next = 0;  // offset +d
    double score_final = 0;
    std::optional<double> align_final;  // absent for vanilla
    std::optional<double> sample_probe_accuracy;
};

struct Comparison {
    int d = 1;
    std::vector<ComparisonRow> rows;
    /// regime -> offset -> trimmed per-frame values (for plotting)
    std::map<std::string, std::map<int, std::vector<double>>> distributions;

    nlohmann::json to_json() const;
    void write(const std::filesystem::path& out_dir) const;
};

inline constexpr const char* kCompareCsvHeader =
    "regime,run_id,cknna_prev,cknna_curr,cknna_next,score_final,align_final,sample_probe_accuracy";

/// Mean of the last `window` recorded values of a curve column.
double tail_mean(const std::vector<StepRecord>& curve, double StepRecord::*field, int window = 50);

/// Validates matched seeds, budgets and targets, then tabulates.
Comparison compare_runs(const std::vector<RunRecord>& records);

}  // namespace crepa::training
