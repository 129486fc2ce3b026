// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace crepa {

struct NamedTensor {
    std::string name;
    torch::Tensor value;
};

/// Generic weight container shared by encoder ("CRPE") and DiT ("CRPD")
/// files: magic, u32 version, JSON config echo, then named float32 blobs.
/// All integers and floats are little-endian.
struct WeightFile {
    std::string magic;
    std::uint32_t version = 1;
    nlohmann::json config;
    std::vector<NamedTensor> sections;
};

void write_weight_file(const std::filesystem::path& path, const WeightFile& file);
WeightFile read_weight_file(const std::filesystem::path& path, const std::string& expected_magic);

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state = kFnvOffset);

/// FNV-1a over the float32 bytes of every tensor, in the given order.
std::uint64_t fingerprint(const std::vector<NamedTensor>& tensors);

/// Content hash of a single tensor (float32 view of its values).
std::uint64_t tensor_digest(const torch::Tensor& t);

std::string hex64(std::uint64_t v);

}  // namespace crepa
