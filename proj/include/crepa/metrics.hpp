// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "crepa/diffusion.hpp"
#include "crepa/dit.hpp"
#include "crepa/encoder.hpp"
#include "crepa/synth.hpp"
#include "json.hpp"

namespace crepa::metrics {

// --- kernel alignment ---------------------------------------------------------

enum class HsicEstimator { biased, unbiased };

/// Inner-product Gram matrix X X^T in double precision.
torch::Tensor linear_kernel(const torch::Tensor& x);

/// biased: trace(K H L H) / (n - 1)^2. unbiased: the U-statistic on
/// zero-diagonal Gram matrices (needs n >= 4).
double hsic(const torch::Tensor& K, const torch::Tensor& L, HsicEstimator estimator = HsicEstimator::unbiased);

/// Linear CKA with the unbiased HSIC estimator.
double cka(const torch::Tensor& x, const torch::Tensor& y);

/// Top-k neighbour indicator per row (self excluded, ties broken by lower
/// index): M[i, j] = 1 iff j is among the k most similar rows to i.
torch::Tensor knn_mask(const torch::Tensor& K, int k);

/// Pairs (i, j) that are k-NN of each other under both kernels, symmetrised:
/// M = A or A^T with A = knn(K) and knn(L).
torch::Tensor mutual_knn_mask(const torch::Tensor& K, const torch::Tensor& L, int k);

/// CKA restricted to mutual k-NN pairs. Returns 0 when either masked
/// self-term is non-positive.
double cknna(const torch::Tensor& x, const torch::Tensor& y, int k);

// --- order statistics ------------------------------------------------------------

/// Drops floor(frac * n) values from each tail of the sorted sample.
std::vector<double> trim(std::vector<double> values, double frac = 0.03);

/// Type-7 (linear interpolation) quantile of an ascending-sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double p);

struct BoxStats {
    std::size_t n = 0;
    double mean = 0, q1 = 0, median = 0, q3 = 0;
    double whisker_lo = 0, whisker_hi = 0;  // most extreme data within 1.5 IQR
    double min = 0, max = 0;
};
BoxStats box_stats(std::vector<double> values);

// --- cross-frame alignment sweep -----------------------------------------------------

struct SweepConfig {
    int d = 1;
    int k = 10;
    int n_timesteps = 8;
    int t_max = -1;  // -1: T_steps / 2
    double trim_frac = 0.03;
    std::uint64_t seed = 0;
    bool conditional = true;  // condition the DiT on each video's label
};

void to_json(nlohmann::json& j, const SweepConfig& c);
void from_json(const nlohmann::json& j, SweepConfig& c);

struct Measurement {
    std::string video_id;
    int frame = 0;
    int offset = 0;
    int t_idx = 0;
    double cknna = 0;
};

struct AlignmentReport {
    std::string run_id;
    std::vector<int> offsets;                    // {-d, 0, +d}
    std::vector<int> t_indices;                  // the sampled window
    std::map<int, std::vector<double>> per_frame;  // offset -> one value per (video, frame)
    std::vector<Measurement> raw;                // one row per (video, frame, offset, t)
    bool trimmed = true;
    double trim_frac = 0.03;
    int videos = 0;

    /// Mean of the trimmed per-frame values at `offset`.
    double trimmed_mean(int offset) const;
    BoxStats stats(int offset) const;

    nlohmann::json to_json() const;
    static AlignmentReport from_json(const nlohmann::json& j);
    void write_csv(const std::filesystem::path& path) const;
    void write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

inline constexpr const char* kMeasurementCsvHeader = "run_id,video_id,frame,offset,t_idx,cknna";

/// Evenly spaced timestep indices over [1, t_max].
std::vector<int> sweep_timesteps(int t_max, int count);

/// Per video and timestep in the window: noise the clean video, collect the
/// tap tokens of each frame and compare them (CKNNA, tokens as samples)
/// with the frozen features of frames f - d, f, f + d.
AlignmentReport cross_frame_sweep(dit::VideoDiT& model, const encoder::Encoder& enc,
                                  const std::vector<synth::LabeledVideo>& videos,
                                  const diffusion::NoiseSchedule& schedule, const SweepConfig& config,
                                  const std::string& run_id = "run");

// --- linear probing ----------------------------------------------------------------------

struct ProbeConfig {
    std::vector<int> layers;  // empty: every block
    int steps = 500;
    double lr = 0.5;
    int samples_per_video = 2;
    int t_max = -1;  // -1: the full training window [1, T]
    std::uint64_t seed = 0;
    double tie_tolerance = 0.02;  // for the recommended tap
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

struct ProbeResult {
    std::vector<int> layers;
    std::vector<double> train_accuracy;
    std::vector<double> accuracy;  // held-out
    int peak_layer = 0;
    int recommended_tap = 0;
    double chance = 0;

    nlohmann::json to_json() const;
};

/// Multinomial logistic regression by full-batch gradient descent on
/// standardised features. Returns held-out accuracy; `train_acc` receives
/// the fit accuracy when non-null.
double train_linear_probe(const torch::Tensor& train_x, const torch::Tensor& train_y, const torch::Tensor& test_x,
                          const torch::Tensor& test_y, int num_classes, int steps, double lr,
                          double* train_acc = nullptr);

ProbeResult linear_probe_sweep(dit::VideoDiT& model, const std::vector<synth::LabeledVideo>& train,
                               const std::vector<synth::LabeledVideo>& test,
                               const diffusion::NoiseSchedule& schedule, const ProbeConfig& config);

}  // namespace crepa::metrics
