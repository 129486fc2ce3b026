// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/report.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>

#include "crepa/errors.hpp"

namespace crepa::report {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "report";

std::string f4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    std::string s = buf;
    return s == "-0.0000" ? "0.0000" : s;
}

std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string offset_tag(int offset) {
    if (offset < 0) return "m" + std::to_string(-offset);
    if (offset > 0) return "p" + std::to_string(offset);
    return "0";
}

std::string offset_label(int offset) {
    return offset > 0 ? "+" + std::to_string(offset) : std::to_string(offset);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(kModule, "cannot write " + path.string());
    out << text;
}

}  // namespace

std::string box_plot_svg(int offset, const std::map<std::string, metrics::BoxStats>& boxes) {
    if (boxes.empty()) throw DomainError(kModule, "no boxes for offset " + std::to_string(offset));
    constexpr double kTop = 40, kBottom = 260, kLeft = 60, kSlot = 110, kBoxW = 50;
    const double width = kLeft + kSlot * static_cast<double>(boxes.size()) + 20;
    double lo = 1e300, hi = -1e300;
    for (const auto& [name, b] : boxes) {
        lo = std::min(lo, b.min);
        hi = std::max(hi, b.max);
    }
    if (hi - lo < 1e-6) {
        lo -= 0.05;
        hi += 0.05;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto y = [&](double v) { return kBottom - (v - lo) / (hi - lo) * (kBottom - kTop); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(width) + "\" height=\"300\" data-offset=\"" +
         std::to_string(offset) + "\">\n";
    s += "<text x=\"" + px(width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">CKNNA, frame offset " + offset_label(offset) + "</text>\n";
    s += "<line x1=\"" + px(kLeft) + "\" y1=\"" + px(kTop) + "\" x2=\"" + px(kLeft) + "\" y2=\"" + px(kBottom) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = lo + (hi - lo) * i / 4.0;
        s += "<text x=\"" + px(kLeft - 5) + "\" y=\"" + px(y(v) + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + f4(v) + "</text>\n";
    }
    int slot = 0;
    for (const auto& [name, b] : boxes) {
        const double cx = kLeft + kSlot * (slot + 0.5);
        const double x0 = cx - kBoxW / 2, x1 = cx + kBoxW / 2;
        s += "<g class=\"box\" data-regime=\"" + name + "\" data-n=\"" + std::to_string(b.n) + "\" data-mean=\"" +
             f4(b.mean) + "\" data-q1=\"" + f4(b.q1) + "\" data-median=\"" + f4(b.median) + "\" data-q3=\"" +
             f4(b.q3) + "\" data-whisker-lo=\"" + f4(b.whisker_lo) + "\" data-whisker-hi=\"" + f4(b.whisker_hi) +
             "\">\n";
        s += "  <line x1=\"" + px(cx) + "\" y1=\"" + px(y(b.whisker_hi)) + "\" x2=\"" + px(cx) + "\" y2=\"" +
             px(y(b.q3)) + "\" stroke=\"black\"/>\n";
        s += "  <line x1=\"" + px(cx) + "\" y1=\"" + px(y(b.q1)) + "\" x2=\"" + px(cx) + "\" y2=\"" +
             px(y(b.whisker_lo)) + "\" stroke=\"black\"/>\n";
        for (double w : {b.whisker_lo, b.whisker_hi})
            s += "  <line x1=\"" + px(cx - kBoxW / 4) + "\" y1=\"" + px(y(w)) + "\" x2=\"" + px(cx + kBoxW / 4) +
                 "\" y2=\"" + px(y(w)) + "\" stroke=\"black\"/>\n";
        s += "  <rect x=\"" + px(x0) + "\" y=\"" + px(y(b.q3)) + "\" width=\"" + px(kBoxW) + "\" height=\"" +
             px(y(b.q1) - y(b.q3)) + "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
        s += "  <line x1=\"" + px(x0) + "\" y1=\"" + px(y(b.median)) + "\" x2=\"" + px(x1) + "\" y2=\"" +
             px(y(b.median)) + "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
        s += "  <text x=\"" + px(cx) + "\" y=\"" + px(kBottom + 18) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + name + "</text>\n";
        s += "</g>\n";
        ++slot;
    }
    s += "</svg>\n";
    return s;
}

std::vector<fs::path> emit_plots(const Distributions& dist, const fs::path& out_dir) {
    if (dist.empty()) throw DomainError(kModule, "empty report");
    std::set<int> offsets;
    for (const auto& [regime, per] : dist)
        for (const auto& [off, values] : per) offsets.insert(off);
    if (offsets.empty()) throw DomainError(kModule, "empty report");

    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    std::string csv = std::string(kBoxCsvHeader) + "\n";
    for (int off : offsets) {
        std::map<std::string, metrics::BoxStats> boxes;
        for (const auto& [regime, per] : dist) {
            auto it = per.find(off);
            if (it == per.end() || it->second.empty())
                throw DomainError(kModule, "regime " + regime + " has no values at offset " + std::to_string(off));
            boxes[regime] = metrics::box_stats(it->second);
        }
        for (const auto& [regime, b] : boxes)
            csv += std::to_string(off) + "," + regime + "," + std::to_string(b.n) + "," + f4(b.mean) + "," +
                   f4(b.q1) + "," + f4(b.median) + "," + f4(b.q3) + "," + f4(b.whisker_lo) + "," +
                   f4(b.whisker_hi) + "\n";
        const auto path = out_dir / ("cknna_offset_" + offset_tag(off) + ".svg");
        write_text(path, box_plot_svg(off, boxes));
        written.push_back(path);
    }
    const auto csv_path = out_dir / "box_stats.csv";
    write_text(csv_path, csv);
    written.push_back(csv_path);
    return written;
}

// --- PNG -----------------------------------------------------------------------------------

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png_grid(const fs::path& path, const torch::Tensor& videos, int gap) {
    auto v = videos.dim() == 4 ? videos.unsqueeze(0) : videos;
    if (v.dim() != 5 || v.size(4) != 3) throw DimensionError(kModule, "png grid expects [N, F, H, W, 3]");
    const auto N = v.size(0), Fr = v.size(1), H = v.size(2), W = v.size(3);
    const auto width = Fr * W + (Fr - 1) * gap, height = N * H + (N - 1) * gap;
    auto img = torch::full({height, width, 3}, 255, torch::kUInt8);
    auto pix = (v.to(torch::kFloat64).clamp(0, 1) * 255.0).round().to(torch::kUInt8);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t f = 0; f < Fr; ++f)
            img.slice(0, n * (H + gap), n * (H + gap) + H).slice(1, f * (W + gap), f * (W + gap) + W).copy_(pix[n][f]);
    img = img.contiguous();

    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError(kModule, "cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(kModule, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(kModule, "libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    auto* data = img.data_ptr<std::uint8_t>();
    for (std::int64_t r = 0; r < height; ++r) png_write_row(png, data + r * width * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

torch::Tensor read_png(const fs::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError(kModule, "cannot read " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(kModule, "libpng initialisation failed");
    }
    torch::Tensor img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(kModule, "libpng failed reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(kModule, path.string() + " is not 8-bit RGB");
    }
    const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    img = torch::empty({static_cast<std::int64_t>(h), static_cast<std::int64_t>(w), 3}, torch::kUInt8);
    auto* data = img.data_ptr<std::uint8_t>();
    for (png_uint_32 r = 0; r < h; ++r) png_read_row(png, data + static_cast<std::size_t>(r) * w * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace crepa::report
