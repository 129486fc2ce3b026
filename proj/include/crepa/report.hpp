// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "crepa/metrics.hpp"

namespace crepa::report {

/// regime -> offset -> per-frame values.
using Distributions = std::map<std::string, std::map<int, std::vector<double>>>;

/// Box-plot SVG for one offset group, one box per regime (map order).
/// Every box carries its statistics as data-* attributes printed with 4
/// decimals, matching the CSV.
std::string box_plot_svg(int offset, const std::map<std::string, metrics::BoxStats>& boxes);

inline constexpr const char* kBoxCsvHeader = "offset,regime,n,mean,q1,median,q3,whisker_lo,whisker_hi";

/// Writes cknna_offset_<o>.svg per offset and box_stats.csv; returns the
/// written paths. Throws DomainError if any offset group has no values.
std::vector<std::filesystem::path> emit_plots(const Distributions& dist, const std::filesystem::path& out_dir);

/// Frames left to right, one row per video. videos: [N, F, H, W, 3] in [0, 1].
void write_png_grid(const std::filesystem::path& path, const torch::Tensor& videos, int gap = 2);

/// Reads an 8-bit RGB PNG back as [H, W, 3] uint8.
torch::Tensor read_png(const std::filesystem::path& path);

}  // namespace crepa::report
