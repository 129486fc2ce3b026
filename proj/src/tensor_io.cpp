// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/tensor_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include "crepa/errors.hpp"

namespace crepa {

static_assert(std::endian::native == std::endian::little,
              "container formats are written with native little-endian layout");

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("io", "truncated file " + path.string());
    return v;
}

torch::Tensor as_f32(const torch::Tensor& t) {
    return t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
}

}  // namespace

void write_weight_file(const std::filesystem::path& path, const WeightFile& file) {
    if (file.magic.size() != 4) throw ConfigError("io", "magic must be 4 bytes");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("io", "cannot open " + path.string() + " for writing");
    out.write(file.magic.data(), 4);
    put<std::uint32_t>(out, file.version);
    const std::string cfg = file.config.dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(file.sections.size()));
    for (const auto& s : file.sections) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
        out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
        auto v = as_f32(s.value);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(v.dim()));
        for (auto d : v.sizes()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(v.data_ptr<float>()),
                  static_cast<std::streamsize>(v.numel() * sizeof(float)));
    }
    if (!out) throw IoError("io", "write failed for " + path.string());
}

WeightFile read_weight_file(const std::filesystem::path& path, const std::string& expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("io", "cannot open " + path.string());
    WeightFile file;
    file.magic.resize(4);
    in.read(file.magic.data(), 4);
    if (!in || file.magic != expected_magic)
        throw IoError("io", path.string() + ": bad magic, expected " + expected_magic);
    file.version = get<std::uint32_t>(in, path);
    const auto cfg_len = get<std::uint32_t>(in, path);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), cfg_len);
    if (!in) throw IoError("io", "truncated config in " + path.string());
    file.config = nlohmann::json::parse(cfg);
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor s;
        const auto name_len = get<std::uint32_t>(in, path);
        s.name.resize(name_len);
        in.read(s.name.data(), name_len);
        const auto ndim = get<std::uint32_t>(in, path);
        std::vector<std::int64_t> dims(ndim);
        for (auto& d : dims) d = static_cast<std::int64_t>(get<std::uint64_t>(in, path));
        s.value = torch::empty(dims, torch::kFloat32);
        in.read(reinterpret_cast<char*>(s.value.data_ptr<float>()),
                static_cast<std::streamsize>(s.value.numel() * sizeof(float)));
        if (!in) throw IoError("io", "truncated section " + s.name + " in " + path.string());
        file.sections.push_back(std::move(s));
    }
    return file;
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state) {
    for (auto b : bytes) {
        state ^= static_cast<std::uint64_t>(b);
        state *= kFnvPrime;
    }
    return state;
}

std::uint64_t fingerprint(const std::vector<NamedTensor>& tensors) {
    std::uint64_t h = kFnvOffset;
    for (const auto& t : tensors) {
        auto v = as_f32(t.value);
        h = fnv1a64({reinterpret_cast<const std::byte*>(v.data_ptr<float>()),
                     static_cast<std::size_t>(v.numel()) * sizeof(float)},
                    h);
    }
    return h;
}

std::uint64_t tensor_digest(const torch::Tensor& t) {
    return fingerprint({{"", t}});
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace crepa
