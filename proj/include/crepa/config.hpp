// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crepa/diffusion.hpp"
#include "crepa/dit.hpp"
#include "crepa/encoder.hpp"
#include "crepa/metrics.hpp"
#include "crepa/training.hpp"
#include "json.hpp"

namespace crepa::config {

struct DataConfig {
    int n_per_class = 4;
    int frames = 8;
    int height = 32;
    int width = 32;
    int patch = 4;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct FinetuneSection {
    training::TrainConfig train;
    int target_class = 0;
    int heldout_videos = 10;  // cap; held-out videos come from the test split of the target class
};

/// The experiment document. Every section is optional in the file; missing
/// keys take the library defaults.
struct Experiment {
    std::uint64_t seed = 0;  // top-level seed, mixed into every section that has none
    DataConfig data;
    encoder::EncoderConfig encoder;
    dit::DiTConfig dit;
    diffusion::NoiseSchedule schedule;
    training::BaseConfig base;
    FinetuneSection finetune;
    metrics::SweepConfig sweep;
    metrics::ProbeConfig probe;

    nlohmann::json to_json() const;
    static Experiment from_json(const nlohmann::json& j);
};

/// Sets `dotted.key=value` in a JSON document. The value is parsed as JSON
/// when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads the document (an empty path gives the defaults), applies the
/// overrides in order and parses it. Parse failures raise ConfigError.
Experiment load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
nlohmann::json load_document(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace crepa::config
