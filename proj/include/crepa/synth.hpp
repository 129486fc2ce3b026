// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace crepa::synth {

enum class Shape { circle, square, triangle };
enum class Motion { linear_bounce, circular_orbit };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumPalettes = 3;
inline constexpr int kNumMotions = 2;
inline constexpr int kNumClasses = kNumShapes * kNumPalettes * kNumMotions;
inline constexpr int kChannels = 3;

using Rgb = std::array<float, 3>;

/// One of the 18 style classes: id = (shape * 3 + palette) * 2 + motion.
struct StyleClass {
    int id = 0;
    Shape shape = Shape::circle;
    int palette = 0;
    Motion motion = Motion::linear_bounce;

    static StyleClass from_id(int id);
    Rgb sprite_color() const;
    /// Fixed per-class background gradient evaluated at pixel-space (x, y).
    Rgb background(double x, double y, int height, int width) const;
};

struct VideoSpec {
    int class_id = 0;
    int frames = 8;
    int height = 32;
    int width = 32;
    std::uint64_t seed = 0;
    /// When false the sprite stays at its frame-0 position (static scene).
    bool motion_enabled = true;
};

/// A clean video x0, shape [F, H, W, 3], float32 values in [0, 1].
struct VideoTensor {
    torch::Tensor data;

    std::int64_t frames() const { return data.size(0); }
    std::int64_t height() const { return data.size(1); }
    std::int64_t width() const { return data.size(2); }
    std::int64_t channels() const { return data.size(3); }
    torch::Tensor frame(std::int64_t f) const { return data[f]; }
};

/// Ground-truth sprite centre per frame, in pixel units (x right, y down).
struct SpriteTrack {
    std::vector<std::array<double, 2>> centers;
    double radius = 0.0;
};

SpriteTrack sprite_track(const VideoSpec& spec);

/// Renders the video described by `spec`. `patch` is the DiT patch size the
/// frame dimensions must be divisible by.
VideoTensor generate_video(const VideoSpec& spec, int patch = 4);

// --- storage -------------------------------------------------------------

void write_video(const std::filesystem::path& path, const VideoTensor& video);
VideoTensor read_video(const std::filesystem::path& path);

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    int class_id = 0;
    std::uint64_t seed = 0;

    /// Even seeds train, odd seeds test.
    bool is_train() const { return seed % 2 == 0; }
    std::string video_id() const;
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
};

struct DatasetTemplate {
    int frames = 8;
    int height = 32;
    int width = 32;
    int patch = 4;
};

/// Seed of the i-th video of a class. Parity of i decides the split.
std::uint64_t video_seed(std::uint64_t master_seed, int class_id, int index);

Manifest generate_dataset(int n_per_class, const DatasetTemplate& tmpl, std::uint64_t master_seed,
                          const std::filesystem::path& out_dir);

void write_manifest(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& manifest_path);

inline constexpr const char* kManifestName = "manifest.jsonl";

enum class Split { train, test, all };

struct LabeledVideo {
    VideoTensor video;
    int class_id = 0;
    std::uint64_t seed = 0;
    std::string id;
};

std::vector<LabeledVideo> load_videos(const Manifest& manifest, Split split,
                                      std::optional<int> class_filter = std::nullopt);

}  // namespace crepa::synth
