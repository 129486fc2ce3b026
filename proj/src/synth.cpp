// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>

#include "crepa/errors.hpp"
#include "crepa/rng.hpp"
#include "json.hpp"

namespace crepa::synth {

namespace {

constexpr std::array<Rgb, kNumPalettes> kPalettes = {{
    {0.95f, 0.15f, 0.10f},
    {0.10f, 0.80f, 0.20f},
    {0.15f, 0.30f, 0.95f},
}};

constexpr double kRadiusFrac = 0.15;

bool inside(Shape shape, double dx, double dy, double r) {
    switch (shape) {
        case Shape::circle:
            return dx * dx + dy * dy <= r * r;
        case Shape::square: {
            const double h = 0.7 * r;
            return std::abs(dx) <= h && std::abs(dy) <= h;
        }
        case Shape::triangle: {
            // Upward equilateral triangle inscribed in a circle of radius r.
            const double s3 = std::numbers::sqrt3;
            if (dy > 0.5 * r) return false;
            // Edges through the apex (0, -r) and the base corners (+-r*s3/2, r/2).
            return s3 * dx - dy <= r && -s3 * dx - dy <= r;
        }
    }
    return false;
}

double reflect(double q, double lo, double hi) {
    const double len = hi - lo;
    double m = std::fmod(q - lo, 2.0 * len);
    if (m < 0) m += 2.0 * len;
    return lo + (m <= len ? m : 2.0 * len - m);
}

void check_spec(const VideoSpec& spec, int patch) {
    if (spec.class_id < 0 || spec.class_id >= kNumClasses)
        throw DomainError("data-synth", "unknown class_id " + std::to_string(spec.class_id));
    if (spec.frames < 2) throw DimensionError("data-synth", "video needs F >= 2 frames");
    if (spec.height != spec.width || spec.height < 16)
        throw DimensionError("data-synth", "frames must be square with side >= 16");
    if (patch <= 0 || spec.height % patch != 0)
        throw DimensionError("data-synth", "frame side " + std::to_string(spec.height) +
                                               " not divisible by patch " + std::to_string(patch));
}

std::mutex& dir_mutex(const std::filesystem::path& dir) {
    static std::mutex registry_mutex;
    static std::map<std::string, std::mutex> per_dir;
    std::lock_guard lock(registry_mutex);
    return per_dir[std::filesystem::weakly_canonical(dir).string()];
}

}  // namespace

StyleClass StyleClass::from_id(int id) {
    if (id < 0 || id >= kNumClasses)
        throw DomainError("data-synth", "unknown class_id " + std::to_string(id));
    StyleClass c;
    c.id = id;
    c.motion = static_cast<Motion>(id % kNumMotions);
    c.palette = (id / kNumMotions) % kNumPalettes;
    c.shape = static_cast<Shape>(id / (kNumMotions * kNumPalettes));
    return c;
}

Rgb StyleClass::sprite_color() const { return kPalettes[static_cast<std::size_t>(palette)]; }

Rgb StyleClass::background(double x, double y, int height, int width) const {
    const double theta = 2.0 * std::numbers::pi * id / kNumClasses;
    const double u = x / width - 0.5;
    const double v = y / height - 0.5;
    const double g = 0.3 * (u * std::cos(theta) + v * std::sin(theta));
    const Rgb base = motion == Motion::linear_bounce ? Rgb{0.55f, 0.50f, 0.45f}
                                                     : Rgb{0.45f, 0.50f, 0.55f};
    return {static_cast<float>(base[0] + g), static_cast<float>(base[1] + g),
            static_cast<float>(base[2] + g)};
}

SpriteTrack sprite_track(const VideoSpec& spec) {
    const auto cls = StyleClass::from_id(spec.class_id);
    SplitMix64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.class_id)));
    const double w = spec.width, h = spec.height;
    SpriteTrack track;
    track.radius = kRadiusFrac * std::min(w, h);
    const double r = track.radius;
    track.centers.resize(static_cast<std::size_t>(spec.frames));

    if (cls.motion == Motion::linear_bounce) {
        const double x0 = rng.uniform(r, w - r), y0 = rng.uniform(r, h - r);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double speed = rng.uniform(0.06, 0.10) * w;
        const double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
        for (int f = 0; f < spec.frames; ++f) {
            const double t = spec.motion_enabled ? f : 0.0;
            track.centers[static_cast<std::size_t>(f)] = {reflect(x0 + vx * t, r, w - r),
                                                          reflect(y0 + vy * t, r, h - r)};
        }
    } else {
        const double cx = w / 2 + rng.uniform(-0.05, 0.05) * w;
        const double cy = h / 2 + rng.uniform(-0.05, 0.05) * h;
        const double orbit = rng.uniform(0.18, 0.25) * std::min(w, h);
        const double omega = rng.uniform(0.35, 0.70) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int f = 0; f < spec.frames; ++f) {
            const double a = phase + omega * (spec.motion_enabled ? f : 0.0);
            track.centers[static_cast<std::size_t>(f)] = {cx + orbit * std::cos(a),
                                                          cy + orbit * std::sin(a)};
        }
    }
    return track;
}

VideoTensor generate_video(const VideoSpec& spec, int patch) {
    check_spec(spec, patch);
    const auto cls = StyleClass::from_id(spec.class_id);
    const auto track = sprite_track(spec);
    const auto color = cls.sprite_color();
    const int F = spec.frames, H = spec.height, W = spec.width;

    auto data = torch::empty({F, H, W, kChannels}, torch::kFloat32);
    auto acc = data.accessor<float, 4>();
    constexpr std::array<double, 2> kSub = {0.25, 0.75};  // 2x2 supersampling
    for (int f = 0; f < F; ++f) {
        const auto [cx, cy] = track.centers[static_cast<std::size_t>(f)];
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                int hits = 0;
                for (double sy : kSub)
                    for (double sx : kSub)
                        hits += inside(cls.shape, j + sx - cx, i + sy - cy, track.radius) ? 1 : 0;
                const float a = static_cast<float>(hits) / 4.0f;
                const auto bg = cls.background(j + 0.5, i + 0.5, H, W);
                for (int c = 0; c < kChannels; ++c) {
                    const float v = bg[static_cast<std::size_t>(c)] * (1.0f - a) +
                                    color[static_cast<std::size_t>(c)] * a;
                    acc[f][i][j][c] = std::clamp(v, 0.0f, 1.0f);
                }
            }
        }
    }
    return {data};
}

// --- storage -------------------------------------------------------------

void write_video(const std::filesystem::path& path, const VideoTensor& video) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("data-synth", "cannot write " + path.string());
    out.write("CRPV", 4);
    const std::array<std::uint32_t, 5> header = {
        1u, static_cast<std::uint32_t>(video.frames()), static_cast<std::uint32_t>(video.height()),
        static_cast<std::uint32_t>(video.width()), static_cast<std::uint32_t>(video.channels())};
    out.write(reinterpret_cast<const char*>(header.data()), sizeof header);
    auto v = video.data.to(torch::kFloat32).contiguous();
    out.write(reinterpret_cast<const char*>(v.data_ptr<float>()),
              static_cast<std::streamsize>(v.numel() * sizeof(float)));
    if (!out) throw IoError("data-synth", "write failed for " + path.string());
}

VideoTensor read_video(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("data-synth", "cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "CRPV")
        throw IoError("data-synth", path.string() + ": not a CRPV video");
    std::array<std::uint32_t, 5> header{};
    in.read(reinterpret_cast<char*>(header.data()), sizeof header);
    if (!in || header[0] != 1u) throw IoError("data-synth", path.string() + ": unsupported version");
    auto data = torch::empty({header[1], header[2], header[3], header[4]}, torch::kFloat32);
    in.read(reinterpret_cast<char*>(data.data_ptr<float>()),
            static_cast<std::streamsize>(data.numel() * sizeof(float)));
    if (!in) throw IoError("data-synth", path.string() + ": truncated payload");
    return {data};
}

std::string ManifestEntry::video_id() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "c%02d_%016llx", class_id, static_cast<unsigned long long>(seed));
    return buf;
}

std::uint64_t video_seed(std::uint64_t master_seed, int class_id, int index) {
    const auto h = mix_seed(mix_seed(master_seed, static_cast<std::uint64_t>(class_id)),
                            static_cast<std::uint64_t>(index));
    return (h & ~1ULL) | static_cast<std::uint64_t>(index & 1);
}

Manifest generate_dataset(int n_per_class, const DatasetTemplate& tmpl, std::uint64_t master_seed,
                          const std::filesystem::path& out_dir) {
    if (n_per_class < 1) throw DomainError("data-synth", "n_per_class must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "videos", ec);
    if (ec) throw IoError("data-synth", "cannot create " + out_dir.string() + ": " + ec.message());

    std::lock_guard lock(dir_mutex(out_dir));
    Manifest manifest;
    manifest.root = out_dir;
    for (int c = 0; c < kNumClasses; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            ManifestEntry e;
            e.class_id = c;
            e.seed = video_seed(master_seed, c, i);
            e.path = "videos/" + e.video_id() + ".crpv";
            VideoSpec spec{c, tmpl.frames, tmpl.height, tmpl.width, e.seed, true};
            write_video(out_dir / e.path, generate_video(spec, tmpl.patch));
            manifest.entries.push_back(e);
        }
    }
    write_manifest(manifest);
    return manifest;
}

void write_manifest(const Manifest& manifest) {
    const auto path = manifest.root / kManifestName;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("data-synth", "cannot write " + path.string());
    for (const auto& e : manifest.entries) {
        nlohmann::ordered_json j;
        j["path"] = e.path;
        j["class_id"] = e.class_id;
        j["seed"] = e.seed;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("data-synth", "write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& manifest_path) {
    auto path = manifest_path;
    if (std::filesystem::is_directory(path)) path /= kManifestName;
    std::ifstream in(path);
    if (!in) throw IoError("data-synth", "cannot open manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        m.entries.push_back({j.at("path").get<std::string>(), j.at("class_id").get<int>(),
                             j.at("seed").get<std::uint64_t>()});
    }
    return m;
}

std::vector<LabeledVideo> load_videos(const Manifest& manifest, Split split,
                                      std::optional<int> class_filter) {
    std::vector<LabeledVideo> out;
    for (const auto& e : manifest.entries) {
        if (split == Split::train && !e.is_train()) continue;
        if (split == Split::test && e.is_train()) continue;
        if (class_filter && e.class_id != *class_filter) continue;
        out.push_back({read_video(manifest.root / e.path), e.class_id, e.seed, e.video_id()});
    }
    return out;
}

}  // namespace crepa::synth
