// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "crepa/alignment.hpp"
#include "crepa/errors.hpp"
#include "crepa/rng.hpp"
#include "crepa/tensor_io.hpp"

namespace crepa::metrics {

namespace {

constexpr const char* kModule = "metrics";

torch::Tensor as_f64(const torch::Tensor& t) { return t.detach().to(torch::kCPU, torch::kFloat64).contiguous(); }

void check_square_pair(const torch::Tensor& K, const torch::Tensor& L) {
    if (K.dim() != 2 || K.size(0) != K.size(1) || K.sizes() != L.sizes())
        throw DimensionError(kModule, "Gram matrices must be square and of equal size");
}

void check_rows(const torch::Tensor& x, const torch::Tensor& y) {
    if (x.dim() != 2 || y.dim() != 2) throw DimensionError(kModule, "feature matrices must be [n, D]");
    if (x.size(0) != y.size(0)) throw DimensionError(kModule, "feature matrices need equal row counts");
}

std::uint64_t string_seed(const std::string& s) {
    return fnv1a64({reinterpret_cast<const std::byte*>(s.data()), s.size()});
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

// --- kernel alignment ---------------------------------------------------------

torch::Tensor linear_kernel(const torch::Tensor& x) {
    auto xd = as_f64(x);
    return xd.matmul(xd.t());
}

double hsic(const torch::Tensor& K_in, const torch::Tensor& L_in, HsicEstimator estimator) {
    check_square_pair(K_in, L_in);
    auto K = as_f64(K_in), L = as_f64(L_in);
    const double n = static_cast<double>(K.size(0));
    if (estimator == HsicEstimator::biased) {
        if (n < 2) throw DomainError(kModule, "biased HSIC needs n >= 2");
        auto H = torch::eye(K.size(0), torch::kFloat64) - 1.0 / n;
        return torch::trace(K.matmul(H).matmul(L).matmul(H)).item<double>() / ((n - 1) * (n - 1));
    }
    if (n < 4) throw DomainError(kModule, "unbiased HSIC needs n >= 4, got " + std::to_string(K.size(0)));
    auto Kt = K.clone();
    auto Lt = L.clone();
    Kt.fill_diagonal_(0.0);
    Lt.fill_diagonal_(0.0);
    const double term1 = (Kt * Lt.t()).sum().item<double>();
    const double term2 = Kt.sum().item<double>() * Lt.sum().item<double>() / ((n - 1) * (n - 2));
    const double term3 = 2.0 * Kt.matmul(Lt).sum().item<double>() / (n - 2);
    return (term1 + term2 - term3) / (n * (n - 3));
}

double cka(const torch::Tensor& x, const torch::Tensor& y) {
    check_rows(x, y);
    auto K = linear_kernel(x), L = linear_kernel(y);
    const double kl = hsic(K, L), kk = hsic(K, K), ll = hsic(L, L);
    if (!(kk > 0.0) || !(ll > 0.0)) throw DegenerateInput(kModule, "zero self-HSIC in CKA");
    return kl / std::sqrt(kk * ll);
}

torch::Tensor knn_mask(const torch::Tensor& K_in, int k) {
    auto K = as_f64(K_in).clone();
    const auto n = K.size(0);
    if (k < 1 || k > n - 1)
        throw DomainError(kModule, "k=" + std::to_string(k) + " outside [1, n-1] for n=" + std::to_string(n));
    K.fill_diagonal_(-std::numeric_limits<double>::infinity());
    // Stable descending sort: equal similarities keep ascending index order.
    auto order = std::get<1>(K.sort(/*stable=*/true, /*dim=*/1, /*descending=*/true));
    auto idx = order.slice(1, 0, k);
    return torch::zeros({n, n}, torch::kFloat64).scatter_(1, idx, 1.0);
}

torch::Tensor mutual_knn_mask(const torch::Tensor& K, const torch::Tensor& L, int k) {
    check_square_pair(K, L);
    auto a = knn_mask(K, k) * knn_mask(L, k);
    return torch::maximum(a, a.t());
}

double cknna(const torch::Tensor& x, const torch::Tensor& y, int k) {
    check_rows(x, y);
    const auto n = x.size(0);
    if (k < 1 || k > n - 1)
        throw DomainError(kModule, "k=" + std::to_string(k) + " outside [1, n-1] for n=" + std::to_string(n));
    auto K = linear_kernel(x), L = linear_kernel(y);
    auto masked = [k](const torch::Tensor& A, const torch::Tensor& B) {
        auto m = mutual_knn_mask(A, B, k);
        return hsic(m * A, m * B);
    };
    const double kl = masked(K, L), kk = masked(K, K), ll = masked(L, L);
    if (!(kk > 0.0) || !(ll > 0.0)) return 0.0;
    return kl / std::sqrt(kk * ll);
}

// --- order statistics ------------------------------------------------------------

std::vector<double> trim(std::vector<double> values, double frac) {
    if (frac < 0.0 || frac >= 0.5) throw DomainError(kModule, "trim fraction must lie in [0, 0.5)");
    std::sort(values.begin(), values.end());
    const auto cut = static_cast<std::size_t>(std::floor(frac * static_cast<double>(values.size())));
    return {values.begin() + static_cast<std::ptrdiff_t>(cut), values.end() - static_cast<std::ptrdiff_t>(cut)};
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw DomainError(kModule, "quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BoxStats box_stats(std::vector<double> values) {
    if (values.empty()) throw DomainError(kModule, "box statistics of an empty sample");
    std::sort(values.begin(), values.end());
    BoxStats s;
    s.n = values.size();
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
    s.q1 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.5);
    s.q3 = quantile_sorted(values, 0.75);
    const double iqr = s.q3 - s.q1;
    const double lo_fence = s.q1 - 1.5 * iqr, hi_fence = s.q3 + 1.5 * iqr;
    s.whisker_lo = *std::find_if(values.begin(), values.end(), [&](double v) { return v >= lo_fence; });
    s.whisker_hi = *std::find_if(values.rbegin(), values.rend(), [&](double v) { return v <= hi_fence; });
    s.min = values.front();
    s.max = values.back();
    return s;
}

// --- reports -------------------------------------------------------------------------

void to_json(nlohmann::json& j, const SweepConfig& c) {
    j = nlohmann::json{{"d", c.d},
                       {"k", c.k},
                       {"n_timesteps", c.n_timesteps},
                       {"t_max", c.t_max},
                       {"trim_frac", c.trim_frac},
                       {"seed", c.seed},
                       {"conditional", c.conditional}};
}

void from_json(const nlohmann::json& j, SweepConfig& c) {
    SweepConfig d;
    c.d = j.value("d", d.d);
    c.k = j.value("k", d.k);
    c.n_timesteps = j.value("n_timesteps", d.n_timesteps);
    c.t_max = j.value("t_max", d.t_max);
    c.trim_frac = j.value("trim_frac", d.trim_frac);
    c.seed = j.value("seed", d.seed);
    c.conditional = j.value("conditional", d.conditional);
}

double AlignmentReport::trimmed_mean(int offset) const {
    auto it = per_frame.find(offset);
    if (it == per_frame.end() || it->second.empty())
        throw DomainError(kModule, "no measurements at offset " + std::to_string(offset));
    auto kept = trimmed ? trim(it->second, trim_frac) : it->second;
    if (kept.empty()) throw DomainError(kModule, "trimming removed every measurement");
    return std::accumulate(kept.begin(), kept.end(), 0.0) / static_cast<double>(kept.size());
}

BoxStats AlignmentReport::stats(int offset) const {
    auto it = per_frame.find(offset);
    if (it == per_frame.end()) throw DomainError(kModule, "no measurements at offset " + std::to_string(offset));
    return box_stats(trimmed ? trim(it->second, trim_frac) : it->second);
}

nlohmann::json AlignmentReport::to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["offsets"] = offsets;
    j["t_indices"] = t_indices;
    j["trimmed"] = trimmed;
    j["trim_frac"] = trim_frac;
    j["videos"] = videos;
    nlohmann::ordered_json per;
    nlohmann::ordered_json summary;
    for (int o : offsets) {
        const auto key = std::to_string(o);
        per[key] = per_frame.at(o);
        const auto s = stats(o);
        summary[key] = {{"count", per_frame.at(o).size()},
                        {"trimmed_count", s.n},
                        {"trimmed_mean", trimmed_mean(o)},
                        {"median", s.median},
                        {"q1", s.q1},
                        {"q3", s.q3}};
    }
    j["per_frame"] = per;
    j["summary"] = summary;
    return j;
}

AlignmentReport AlignmentReport::from_json(const nlohmann::json& j) {
    AlignmentReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.offsets = j.at("offsets").get<std::vector<int>>();
    r.t_indices = j.at("t_indices").get<std::vector<int>>();
    r.trimmed = j.at("trimmed").get<bool>();
    r.trim_frac = j.at("trim_frac").get<double>();
    r.videos = j.value("videos", 0);
    for (int o : r.offsets) r.per_frame[o] = j.at("per_frame").at(std::to_string(o)).get<std::vector<double>>();
    return r;
}

void AlignmentReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(kModule, "cannot write " + path.string());
    out << kMeasurementCsvHeader << '\n';
    for (const auto& m : raw)
        out << run_id << ',' << m.video_id << ',' << m.frame << ',' << m.offset << ',' << m.t_idx << ','
            << fmt(m.cknna) << '\n';
    if (!out) throw IoError(kModule, "write failed for " + path.string());
}

void AlignmentReport::write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const {
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError(kModule, "cannot write " + json_path.string());
    out << to_json().dump(2) << '\n';
    write_csv(csv_path);
}

// --- sweep ---------------------------------------------------------------------------

std::vector<int> sweep_timesteps(int t_max, int count) {
    if (t_max < 1 || count < 1) throw DomainError(kModule, "empty timestep window");
    std::vector<int> out;
    for (int i = 0; i < count; ++i) {
        const double u = count == 1 ? 1.0 : static_cast<double>(i) / (count - 1);
        out.push_back(static_cast<int>(std::lround(1.0 + u * (t_max - 1))));
    }
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

AlignmentReport cross_frame_sweep(dit::VideoDiT& model, const encoder::Encoder& enc,
                                  const std::vector<synth::LabeledVideo>& videos,
                                  const diffusion::NoiseSchedule& schedule, const SweepConfig& config,
                                  const std::string& run_id) {
    if (videos.empty()) throw DomainError(kModule, "sweep needs at least one video");
    const auto& mc = model->config();
    const int frames = static_cast<int>(videos.front().video.frames());
    if (frames <= config.d)
        throw DomainError(kModule, "F=" + std::to_string(frames) + " must exceed d=" + std::to_string(config.d));

    AlignmentReport report;
    report.run_id = run_id;
    report.offsets = {-config.d, 0, config.d};
    report.t_indices =
        sweep_timesteps(config.t_max > 0 ? config.t_max : schedule.steps() / 2, config.n_timesteps);
    report.trim_frac = config.trim_frac;
    report.trimmed = config.trim_frac > 0.0;
    report.videos = static_cast<int>(videos.size());
    for (int o : report.offsets) report.per_frame[o] = {};

    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    const auto n_t = static_cast<std::int64_t>(report.t_indices.size());
    for (const auto& v : videos) {
        if (v.video.frames() != frames) throw DimensionError(kModule, "sweep videos differ in frame count");
        auto gen = make_generator(mix_seed(config.seed, string_seed(v.id)));
        auto x0 = diffusion::to_model_space(v.video.data).unsqueeze(0).expand({n_t, -1, -1, -1, -1});
        auto t = torch::tensor(std::vector<std::int64_t>(report.t_indices.begin(), report.t_indices.end()));
        auto eps = torch::randn(x0.sizes(), gen, torch::kFloat32);
        auto xt = diffusion::forward_noise(x0, t, eps, schedule);
        const int label = config.conditional ? v.class_id : mc.null_class();
        auto out = model->forward_with_tap(xt, t, torch::full({n_t}, label, torch::kLong));
        auto hidden = out.tap.per_frame();  // [n_t, F, N, D]
        auto bank = alignment::match_grid(enc.encode_batch(v.video.data.unsqueeze(0)), mc.grid_h(), mc.grid_w())[0];

        for (int f = 0; f < frames; ++f) {
            for (int o : report.offsets) {
                const int kf = f + o;
                if (kf < 0 || kf >= frames) continue;
                double acc = 0.0;
                for (std::int64_t ti = 0; ti < n_t; ++ti) {
                    const double value = cknna(hidden[ti][f], bank[kf], config.k);
                    report.raw.push_back({v.id, f, o, report.t_indices[static_cast<std::size_t>(ti)], value});
                    acc += value;
                }
                report.per_frame[o].push_back(acc / static_cast<double>(n_t));
            }
        }
    }
    if (was_training) model->train();
    return report;
}

// --- linear probing ---------------------------------------------------------------------

void to_json(nlohmann::json& j, const ProbeConfig& c) {
    j = nlohmann::json{{"layers", c.layers},   {"steps", c.steps}, {"lr", c.lr},
                       {"samples_per_video", c.samples_per_video}, {"t_max", c.t_max},
                       {"seed", c.seed},       {"tie_tolerance", c.tie_tolerance}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
    ProbeConfig d;
    c.layers = j.value("layers", d.layers);
    c.steps = j.value("steps", d.steps);
    c.lr = j.value("lr", d.lr);
    c.samples_per_video = j.value("samples_per_video", d.samples_per_video);
    c.t_max = j.value("t_max", d.t_max);
    c.seed = j.value("seed", d.seed);
    c.tie_tolerance = j.value("tie_tolerance", d.tie_tolerance);
}

nlohmann::json ProbeResult::to_json() const {
    nlohmann::ordered_json j;
    j["layers"] = layers;
    j["accuracy"] = accuracy;
    j["train_accuracy"] = train_accuracy;
    j["peak_layer"] = peak_layer;
    j["recommended_tap"] = recommended_tap;
    j["chance"] = chance;
    return j;
}

double train_linear_probe(const torch::Tensor& train_x_in, const torch::Tensor& train_y,
                          const torch::Tensor& test_x_in, const torch::Tensor& test_y, int num_classes, int steps,
                          double lr, double* train_acc) {
    auto train_x = as_f64(train_x_in), test_x = as_f64(test_x_in);
    auto mean = train_x.mean(0, true);
    auto std = train_x.std(0, false, true).clamp_min(1e-6);
    train_x = (train_x - mean) / std;
    test_x = (test_x - mean) / std;

    const auto n = static_cast<double>(train_x.size(0));
    auto W = torch::zeros({train_x.size(1), num_classes}, torch::kFloat64);
    auto b = torch::zeros({num_classes}, torch::kFloat64);
    auto Y = torch::one_hot(train_y.to(torch::kLong), num_classes).to(torch::kFloat64);
    for (int s = 0; s < steps; ++s) {
        auto P = torch::softmax(train_x.matmul(W) + b, 1);
        auto G = (P - Y) / n;
        W -= lr * train_x.t().matmul(G);
        b -= lr * G.sum(0);
    }
    auto accuracy = [&](const torch::Tensor& x, const torch::Tensor& y) {
        return (x.matmul(W) + b).argmax(1).eq(y.to(torch::kLong)).to(torch::kFloat64).mean().item<double>();
    };
    if (train_acc) *train_acc = accuracy(train_x, train_y);
    return accuracy(test_x, test_y);
}

ProbeResult linear_probe_sweep(dit::VideoDiT& model, const std::vector<synth::LabeledVideo>& train,
                               const std::vector<synth::LabeledVideo>& test,
                               const diffusion::NoiseSchedule& schedule, const ProbeConfig& config) {
    auto distinct = [](const std::vector<synth::LabeledVideo>& vs) {
        std::vector<int> ids;
        for (const auto& v : vs) ids.push_back(v.class_id);
        std::sort(ids.begin(), ids.end());
        return static_cast<int>(std::unique(ids.begin(), ids.end()) - ids.begin());
    };
    if (train.empty() || test.empty()) throw DomainError(kModule, "probe needs train and test videos");
    if (distinct(train) < 2) throw DomainError(kModule, "linear probing needs at least two classes");

    const auto& mc = model->config();
    ProbeResult result;
    result.layers = config.layers;
    if (result.layers.empty())
        for (int l = 1; l <= mc.depth; ++l) result.layers.push_back(l);
    for (int l : result.layers)
        if (l < 1 || l > mc.depth) throw ConfigError(kModule, "probe layer " + std::to_string(l) + " out of range");
    const int t_max = config.t_max > 0 ? config.t_max : schedule.steps();

    torch::NoGradGuard guard;
    const bool was_training = model->is_training();
    model->eval();
    auto gen = make_generator(mix_seed(config.seed, 0x9a0be));

    // [samples, depth, D] mean-pooled activations, plus labels.
    auto collect = [&](const std::vector<synth::LabeledVideo>& videos) {
        std::vector<torch::Tensor> feats;
        std::vector<std::int64_t> labels;
        constexpr std::size_t kChunk = 8;
        for (int rep = 0; rep < config.samples_per_video; ++rep) {
            for (std::size_t s = 0; s < videos.size(); s += kChunk) {
                const auto e = std::min(videos.size(), s + kChunk);
                std::vector<torch::Tensor> clips;
                for (auto i = s; i < e; ++i) {
                    clips.push_back(videos[i].video.data);
                    labels.push_back(videos[i].class_id);
                }
                auto x0 = diffusion::to_model_space(torch::stack(clips));
                const auto B = x0.size(0);
                auto t = torch::randint(1, t_max + 1, {B}, gen, torch::kLong);
                auto eps = torch::randn(x0.sizes(), gen, torch::kFloat32);
                auto xt = diffusion::forward_noise(x0, t, eps, schedule);
                auto out = model->forward_with_tap(xt, t, torch::full({B}, mc.null_class(), torch::kLong), true);
                std::vector<torch::Tensor> per_layer;
                for (const auto& g : out.layers) per_layer.push_back(g.tokens.mean(1));
                feats.push_back(torch::stack(per_layer, 1));
            }
        }
        return std::make_pair(torch::cat(feats, 0), torch::tensor(labels, torch::kLong));
    };
    auto [train_f, train_y] = collect(train);
    auto [test_f, test_y] = collect(test);
    if (was_training) model->train();

    const int num_classes = mc.num_classes;
    result.chance = 1.0 / num_classes;
    for (int l : result.layers) {
        double tr = 0.0;
        const double acc = train_linear_probe(train_f.select(1, l - 1), train_y, test_f.select(1, l - 1), test_y,
                                              num_classes, config.steps, config.lr, &tr);
        result.accuracy.push_back(acc);
        result.train_accuracy.push_back(tr);
    }
    const auto peak = std::max_element(result.accuracy.begin(), result.accuracy.end()) - result.accuracy.begin();
    result.peak_layer = result.layers[static_cast<std::size_t>(peak)];
    result.recommended_tap = result.peak_layer;
    for (std::size_t i = 0; i < result.layers.size(); ++i) {
        if (result.layers[i] > result.peak_layer) break;
        if (result.accuracy[i] >= result.accuracy[static_cast<std::size_t>(peak)] - config.tie_tolerance) {
            result.recommended_tap = result.layers[i];
            break;
        }
    }
    return result;
}

}  // namespace crepa::metrics
