// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "crepa/errors.hpp"
#include "crepa/rng.hpp"
#include "crepa/tensor_io.hpp"

namespace crepa::training {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "training";

std::string sample_mode_name(diffusion::SampleMode m) {
    return m == diffusion::SampleMode::ancestral ? "ancestral" : "deterministic";
}

diffusion::SampleMode sample_mode_from(const std::string& s) {
    if (s == "ancestral") return diffusion::SampleMode::ancestral;
    if (s == "deterministic") return diffusion::SampleMode::deterministic;
    throw ConfigError(kModule, "unknown sample mode '" + s + "'");
}

torch::Tensor stack_videos(const std::vector<synth::LabeledVideo>& videos) {
    std::vector<torch::Tensor> data;
    data.reserve(videos.size());
    for (const auto& v : videos) data.push_back(v.video.data.to(torch::kFloat32));
    return torch::stack(data);
}

void check_finite(double v, int step, const char* what) {
    if (!std::isfinite(v))
        throw NumericError(kModule, std::string("non-finite ") + what + " at step " + std::to_string(step));
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(kModule, "cannot write " + path.string());
    out << text;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(kModule, "cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(kModule, path.string() + ": " + e.what());
    }
}

std::vector<std::pair<std::string, torch::Tensor>> head_sections(alignment::ProjectionHead& head) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : head->named_parameters()) out.emplace_back("head." + p.key(), p.value().detach());
    return out;
}

}  // namespace

// --- configs -----------------------------------------------------------------------

void to_json(json& j, const BaseConfig& c) {
    j = json{{"steps", c.steps}, {"batch", c.batch}, {"lr", c.lr}, {"class_drop", c.class_drop}, {"seed", c.seed}};
}

void from_json(const json& j, BaseConfig& c) {
    BaseConfig d;
    c.steps = j.value("steps", d.steps);
    c.batch = j.value("batch", d.batch);
    c.lr = j.value("lr", d.lr);
    c.class_drop = j.value("class_drop", d.class_drop);
    c.seed = j.value("seed", d.seed);
    if (c.steps < 1 || c.batch < 1 || !(c.lr > 0) || c.class_drop < 0 || c.class_drop > 1)
        throw ConfigError(kModule, "invalid base pretraining config");
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"mode", alignment::to_string(c.mode())},
             {"steps", c.steps},
             {"batch", c.batch},
             {"lr", c.lr},
             {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
             {"seed", c.seed},
             {"eval_every", c.eval_every},
             {"checkpoint_every", c.checkpoint_every},
             {"align", c.align},
             {"lora", c.lora},
             {"sweep", c.sweep},
             {"conditional", c.conditional},
             {"sample_videos", c.sample_videos},
             {"sample_mode", sample_mode_name(c.sample_mode)},
             {"final_sweep", c.final_sweep}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    if (j.contains("align")) c.align = j.at("align").get<alignment::AlignmentConfig>();
    if (j.contains("mode")) {
        const auto m = alignment::mode_from_string(j.at("mode").get<std::string>());
        if (j.contains("align") && j.at("align").contains("mode") && m != c.align.mode)
            throw ConfigError(kModule, "mode disagrees with align.mode");
        c.align.mode = m;
    }
    c.steps = j.value("steps", d.steps);
    c.batch = j.value("batch", d.batch);
    c.lr = j.value("lr", d.lr);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam_beta1 = a.value("beta1", d.adam_beta1);
        c.adam_beta2 = a.value("beta2", d.adam_beta2);
        c.adam_eps = a.value("eps", d.adam_eps);
    }
    c.seed = j.value("seed", d.seed);
    c.eval_every = j.value("eval_every", d.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    if (j.contains("lora")) c.lora = j.at("lora").get<dit::LoraSpec>();
    if (j.contains("sweep")) c.sweep = j.at("sweep").get<metrics::SweepConfig>();
    c.conditional = j.value("conditional", d.conditional);
    c.sample_videos = j.value("sample_videos", d.sample_videos);
    c.sample_mode = sample_mode_from(j.value("sample_mode", sample_mode_name(d.sample_mode)));
    c.final_sweep = j.value("final_sweep", d.final_sweep);
    if (c.steps < 1 || c.batch < 1 || !(c.lr > 0) || c.eval_every < 0 || c.checkpoint_every < 0 ||
        c.sample_videos < 0)
        throw ConfigError(kModule, "invalid fine-tune config");
    c.align.validate();
}

// --- base pretraining --------------------------------------------------------------------

BaseResult pretrain_base(const std::vector<synth::LabeledVideo>& dataset, const dit::DiTConfig& config,
                         const diffusion::NoiseSchedule& schedule, const BaseConfig& base) {
    config.validate();
    std::set<int> classes;
    for (const auto& v : dataset) classes.insert(v.class_id);
    for (int c = 0; c < config.num_classes; ++c)
        if (!classes.count(c))
            throw DomainError(kModule, "base dataset lacks class " + std::to_string(c));

    auto videos = diffusion::to_model_space(stack_videos(dataset));
    std::vector<std::int64_t> label_list;
    for (const auto& v : dataset) label_list.push_back(v.class_id);
    auto labels = torch::tensor(label_list, torch::kLong);

    BaseResult result;
    result.model = dit::make_dit(config);
    auto& model = result.model;
    model->train();
    auto gen = make_generator(mix_seed(base.seed, 0xba5e));
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(base.lr));

    for (int step = 0; step < base.steps; ++step) {
        auto idx = torch::randint(videos.size(0), {base.batch}, gen, torch::kLong);
        auto batch = diffusion::make_batch(videos.index_select(0, idx), schedule, gen);
        auto y = labels.index_select(0, idx);
        auto drop = torch::rand({base.batch}, gen) < base.class_drop;
        y = torch::where(drop, torch::full_like(y, config.null_class()), y);
        auto loss = diffusion::score_loss(model->forward(batch.xt, batch.t, y), batch.eps);
        const double value = loss.item<double>();
        check_finite(value, step, "score loss");
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.losses.push_back(value);
    }
    const auto tail = std::max<std::size_t>(1, result.losses.size() / 20);
    result.initial_loss = result.losses.front();
    double sum = 0;
    for (auto it = result.losses.end() - static_cast<std::ptrdiff_t>(tail); it != result.losses.end(); ++it)
        sum += *it;
    result.final_loss = sum / static_cast<double>(tail);
    model->eval();
    return result;
}

// --- fine-tuning --------------------------------------------------------------------------

torch::Tensor feature_bank(FeatureCache& cache, const encoder::Encoder& enc, const synth::LabeledVideo& video,
                           int grid_h, int grid_w) {
    const auto key = std::make_pair(video.id, enc.fingerprint());
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto bank = enc.encode_video(video.video, video.id).features.unsqueeze(0);
    auto matched = alignment::match_grid(bank, grid_h, grid_w)[0].contiguous();
    cache.emplace(key, matched);
    return matched;
}

torch::Tensor sample_videos(dit::VideoDiT& model, const diffusion::NoiseSchedule& schedule, int label, int count,
                            std::uint64_t seed, diffusion::SampleMode mode) {
    const auto& c = model->config();
    torch::NoGradGuard guard;
    model->eval();
    auto labels = torch::full({count}, label, torch::kLong);
    diffusion::Denoiser fn = [&](const torch::Tensor& xt, const torch::Tensor& t) {
        return model->forward(xt, t, labels);
    };
    return diffusion::sample(fn, schedule, {count, c.frames, c.height, c.width, c.channels}, seed, mode);
}

double sample_probe_accuracy(dit::VideoDiT& model, const encoder::Encoder& enc,
                             const diffusion::NoiseSchedule& schedule, int target_class, int count,
                             std::uint64_t seed, diffusion::SampleMode mode, bool conditional) {
    if (count < 1) throw DomainError(kModule, "sample count must be >= 1");
    const int label = conditional ? target_class : model->config().null_class();
    auto videos = sample_videos(model, schedule, label, count, seed, mode);
    auto frames = videos.reshape({-1, videos.size(2), videos.size(3), videos.size(4)});
    auto pred = enc.predict(frames);
    return pred.eq(target_class).to(torch::kFloat64).mean().item<double>();
}

FinetuneResult finetune(const dit::VideoDiT& base, const encoder::Encoder& enc, const FinetuneData& data,
                        const diffusion::NoiseSchedule& schedule, const TrainConfig& config,
                        const std::optional<fs::path>& run_dir,
                        const std::function<void(const StepTrace&)>& on_step) {
    if (data.train.empty()) throw DomainError(kModule, "fine-tune subset is empty");
    if (!enc.valid()) throw DomainError(kModule, "encoder not loaded");
    const auto t0 = std::chrono::steady_clock::now();
    const auto& dcfg = base->config();
    config.align.validate_for(dcfg.frames);
    const auto mode = config.mode();
    const bool aligned = mode != alignment::Mode::vanilla;

    const auto base_fp = dit::base_fingerprint(base);
    const auto enc_fp = enc.fingerprint();

    FinetuneResult result;
    auto& rec = result.record;
    rec.config = config;
    rec.mode = mode;
    rec.seed = config.seed;
    rec.steps = config.steps;
    rec.target_class = data.target_class;
    rec.run_id = alignment::to_string(mode) + "-s" + std::to_string(config.seed);
    rec.encoder_fingerprint = enc_fp;
    rec.base_fingerprint = base_fp;

    result.model = dit::clone_base(base);
    auto& model = result.model;
    model->set_tap_layer(config.align.tap_layer);
    if (dit::base_fingerprint(model) != base_fp)
        throw IntegrityError(kModule, "base copy differs from the loaded base");
    auto lora = config.lora;
    lora.seed = mix_seed(config.seed, lora.seed);
    dit::inject_lora(model, lora);

    std::vector<torch::Tensor> params;
    for (auto& [name, p] : dit::lora_parameters(*model)) params.push_back(p);
    if (aligned) {
        result.head = alignment::make_head(dcfg.d_model, enc.config().d_enc, mix_seed(config.seed, 0x4ead));
        for (auto& p : result.head->parameters()) params.push_back(p);
    }
    torch::optim::Adam opt(params, torch::optim::AdamOptions(config.lr)
                                       .betas({config.adam_beta1, config.adam_beta2})
                                       .eps(config.adam_eps));

    auto videos = diffusion::to_model_space(stack_videos(data.train));
    torch::Tensor banks;
    if (aligned) {
        FeatureCache cache;
        std::vector<torch::Tensor> list;
        for (const auto& v : data.train) list.push_back(feature_bank(cache, enc, v, dcfg.grid_h(), dcfg.grid_w()));
        banks = torch::stack(list);
    }
    const int label = config.conditional ? data.target_class : dcfg.null_class();

    if (run_dir) {
        fs::create_directories(*run_dir / "reports");
        fs::create_directories(*run_dir / "checkpoints");
        write_text(*run_dir / "config.json", json(config).dump(2) + "\n");
    }

    auto sweep = [&](int step) {
        auto report = metrics::cross_frame_sweep(model, enc, data.heldout, schedule, config.sweep, rec.run_id);
        model->train();
        if (run_dir) {
            const auto stem = "step-" + std::to_string(step);
            report.write(*run_dir / "reports" / (stem + ".json"), *run_dir / "reports" / (stem + ".csv"));
        }
        return report;
    };
    auto checkpoint = [&](int step) {
        if (!run_dir) return;
        const auto path = *run_dir / "checkpoints" / ("step-" + std::to_string(step) + ".crpd");
        dit::CheckpointExtras extras;
        extras.lora = lora;
        if (aligned) extras.extra_sections = head_sections(result.head);
        dit::save_checkpoint(path, model, extras);
        rec.checkpoints.push_back(fs::relative(path, *run_dir).string());
    };

    auto gen = make_generator(mix_seed(config.seed, 0xf17e));
    model->train();
    if (aligned) result.head->train();
    const auto labels = torch::full({config.batch}, label, torch::kLong);
    for (int step = 0; step < config.steps; ++step) {
        auto idx = torch::randint(videos.size(0), {config.batch}, gen, torch::kLong);
        auto batch = diffusion::make_batch(videos.index_select(0, idx), schedule, gen);
        auto out = model->forward_with_tap(batch.xt, batch.t, labels);
        auto score = diffusion::score_loss(out.eps_pred, batch.eps);
        torch::Tensor align;
        torch::Tensor consumed;
        if (aligned) {
            consumed = out.tap.tokens;
            align = alignment::alignment_loss(banks.index_select(0, idx), alignment::project(result.head, out.tap),
                                              config.align);
        } else {
            align = torch::zeros({}, score.options());
        }
        auto combined = alignment::combined_loss(score, align, config.align.lambda);

        StepRecord sr{step, score.item<double>(), align.item<double>(), combined.item<double>()};
        check_finite(sr.combined, step, "combined loss");
        if (on_step) {
            StepTrace tr;
            tr.step = step;
            tr.forward_tap_digest = tensor_digest(out.tap.tokens);
            tr.forward_tap_ptr = out.tap.tokens.data_ptr();
            if (consumed.defined()) {
                tr.consumed_tap_digest = tensor_digest(consumed);
                tr.consumed_tap_ptr = consumed.data_ptr();
            }
            tr.xt = batch.xt;
            tr.t = batch.t;
            tr.labels = labels;
            on_step(tr);
        }
        opt.zero_grad();
        combined.backward();
        opt.step();
        rec.curve.push_back(sr);

        const int done = step + 1;
        if (config.eval_every > 0 && done % config.eval_every == 0 && done < config.steps && !data.heldout.empty())
            rec.reports.emplace_back(done, sweep(done));
        if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps)
            checkpoint(done);
    }
    model->eval();
    if (aligned) result.head->eval();

    if (dit::base_fingerprint(model) != base_fp || dit::base_fingerprint(base) != base_fp)
        throw IntegrityError(kModule, "frozen base weights changed during fine-tuning");
    if (enc.fingerprint() != enc_fp) throw IntegrityError(kModule, "frozen encoder changed during fine-tuning");

    if (config.final_sweep && !data.heldout.empty()) {
        auto report = sweep(config.steps);
        model->eval();
        rec.reports.emplace_back(config.steps, report);
        rec.final_report = report;
    }
    checkpoint(config.steps);
    if (config.sample_videos > 0)
        rec.sample_probe_accuracy =
            sample_probe_accuracy(model, enc, schedule, data.target_class, config.sample_videos,
                                  mix_seed(config.seed, 0x5a3e), config.sample_mode, config.conditional);
    rec.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (run_dir) {
        write_curves_csv(*run_dir / "curves.csv", rec.curve);
        json reports = json::array();
        for (const auto& [step, r] : rec.reports) reports.push_back({{"step", step}, {"path", "reports/step-" + std::to_string(step) + ".json"}});
        json j{{"run_id", rec.run_id},
               {"mode", alignment::to_string(rec.mode)},
               {"seed", rec.seed},
               {"steps", rec.steps},
               {"target_class", rec.target_class},
               {"config", rec.config},
               {"reports", reports},
               {"final_report", rec.final_report ? json("reports/step-" + std::to_string(config.steps) + ".json")
                                                 : json(nullptr)},
               {"sample_probe_accuracy",
                rec.sample_probe_accuracy ? json(*rec.sample_probe_accuracy) : json(nullptr)},
               {"checkpoints", rec.checkpoints},
               {"wall_clock_s", rec.wall_clock_s},
               {"encoder_fingerprint", hex64(rec.encoder_fingerprint)},
               {"base_fingerprint", hex64(rec.base_fingerprint)}};
        write_text(*run_dir / "record.json", j.dump(2) + "\n");
    }
    return result;
}

// --- curves and run loading -------------------------------------------------------------

void write_curves_csv(const fs::path& path, const std::vector<StepRecord>& curve) {
    std::string text = "step,score,align,combined\n";
    for (const auto& r : curve)
        text += std::to_string(r.step) + "," + fmt(r.score) + "," + fmt(r.align) + "," + fmt(r.combined) + "\n";
    write_text(path, text);
}

std::vector<StepRecord> read_curves_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(kModule, "cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "step,score,align,combined") throw IoError(kModule, path.string() + ": unexpected header");
    std::vector<StepRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        StepRecord r;
        char c1, c2, c3;
        std::istringstream ss(line);
        if (!(ss >> r.step >> c1 >> r.score >> c2 >> r.align >> c3 >> r.combined))
            throw IoError(kModule, path.string() + ": malformed row '" + line + "'");
        out.push_back(r);
    }
    return out;
}

RunRecord load_run(const fs::path& run_dir) {
    const auto j = read_json_file(run_dir / "record.json");
    RunRecord rec;
    try {
        rec.run_id = j.at("run_id").get<std::string>();
        rec.mode = alignment::mode_from_string(j.at("mode").get<std::string>());
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.steps = j.at("steps").get<int>();
        rec.target_class = j.at("target_class").get<int>();
        rec.config = j.at("config");
        for (const auto& r : j.at("reports"))
            rec.reports.emplace_back(r.at("step").get<int>(),
                                     metrics::AlignmentReport::from_json(
                                         read_json_file(run_dir / r.at("path").get<std::string>())));
        if (!j.at("final_report").is_null())
            rec.final_report = metrics::AlignmentReport::from_json(
                read_json_file(run_dir / j.at("final_report").get<std::string>()));
        if (!j.at("sample_probe_accuracy").is_null())
            rec.sample_probe_accuracy = j.at("sample_probe_accuracy").get<double>();
        rec.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
        rec.wall_clock_s = j.at("wall_clock_s").get<double>();
        rec.encoder_fingerprint = std::stoull(j.at("encoder_fingerprint").get<std::string>(), nullptr, 16);
        rec.base_fingerprint = std::stoull(j.at("base_fingerprint").get<std::string>(), nullptr, 16);
    } catch (const json::exception& e) {
        throw IoError(kModule, (run_dir / "record.json").string() + ": " + e.what());
    }
    rec.curve = read_curves_csv(run_dir / "curves.csv");
    if (static_cast<int>(rec.curve.size()) != rec.steps)
        throw IntegrityError(kModule, run_dir.string() + ": curve length differs from the step budget");
    return rec;
}

// --- comparison ----------------------------------------------------------------------------

double tail_mean(const std::vector<StepRecord>& curve, double StepRecord::*field, int window) {
    if (curve.empty()) throw DomainError(kModule, "empty curve");
    const auto n = std::min<std::size_t>(curve.size(), static_cast<std::size_t>(std::max(1, window)));
    double sum = 0;
    for (std::size_t i = curve.size() - n; i < curve.size(); ++i) sum += curve[i].*field;
    return sum / static_cast<double>(n);
}

Comparison compare_runs(const std::vector<RunRecord>& records) {
    if (records.empty()) throw ComparisonInvalid(kModule, "no runs to compare");
    const auto& ref = records.front();
    auto same_section = [](const RunRecord& a, const RunRecord& b, const char* key) {
        return a.config.value(key, json()) == b.config.value(key, json());
    };
    std::set<alignment::Mode> seen;
    for (const auto& r : records) {
        if (r.seed != ref.seed)
            throw ComparisonInvalid(kModule, "seed mismatch: " + r.run_id + " has " + std::to_string(r.seed) +
                                                 ", " + ref.run_id + " has " + std::to_string(ref.seed));
        if (r.steps != ref.steps)
            throw ComparisonInvalid(kModule, "step budget mismatch between " + r.run_id + " and " + ref.run_id);
        if (r.target_class != ref.target_class)
            throw ComparisonInvalid(kModule, "target class mismatch between " + r.run_id + " and " + ref.run_id);
        for (const char* key : {"batch", "lr", "sweep", "lora", "conditional"})
            if (!same_section(r, ref, key))
                throw ComparisonInvalid(kModule, std::string("config '") + key + "' differs between " + r.run_id +
                                                     " and " + ref.run_id);
        if (r.base_fingerprint != ref.base_fingerprint || r.encoder_fingerprint != ref.encoder_fingerprint)
            throw ComparisonInvalid(kModule, "runs use different base or encoder weights");
        if (!r.final_report) throw ComparisonInvalid(kModule, r.run_id + " has no final alignment report");
        if (!seen.insert(r.mode).second)
            throw ComparisonInvalid(kModule, "regime " + alignment::to_string(r.mode) + " appears twice");
    }

    Comparison cmp;
    cmp.d = ref.config.value("sweep", json::object()).value("d", 1);
    auto ordered = records;
    std::sort(ordered.begin(), ordered.end(), [](const RunRecord& a, const RunRecord& b) { return a.mode < b.mode; });
    for (const auto& r : ordered) {
        const auto& rep = *r.final_report;
        ComparisonRow row;
        row.regime = alignment::to_string(r.mode);
        row.run_id = r.run_id;
        row.cknna_prev = rep.trimmed_mean(-cmp.d);
        row.cknna_curr = rep.trimmed_mean(0);
        row.cknna_next = rep.trimmed_mean(cmp.d);
        row.score_final = tail_mean(r.curve, &StepRecord::score);
        if (r.mode != alignment::Mode::vanilla) row.align_final = tail_mean(r.curve, &StepRecord::align);
        row.sample_probe_accuracy = r.sample_probe_accuracy;
        cmp.rows.push_back(row);
        for (int off : rep.offsets) {
            const auto& values = rep.per_frame.at(off);
            cmp.distributions[row.regime][off] = rep.trimmed ? metrics::trim(values, rep.trim_frac) : values;
        }
    }
    return cmp;
}

json Comparison::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"regime", r.regime},
                          {"run_id", r.run_id},
                          {"cknna_prev", r.cknna_prev},
                          {"cknna_curr", r.cknna_curr},
                          {"cknna_next", r.cknna_next},
                          {"score_final", r.score_final},
                          {"align_final", r.align_final ? json(*r.align_final) : json(nullptr)},
                          {"sample_probe_accuracy",
                           r.sample_probe_accuracy ? json(*r.sample_probe_accuracy) : json(nullptr)}});
    json dist = json::object();
    for (const auto& [regime, per] : distributions)
        for (const auto& [off, values] : per) dist[regime][std::to_string(off)] = values;
    return json{{"d", d}, {"rows", rows_j}, {"distributions", dist}};
}

void Comparison::write(const fs::path& out_dir) const {
    fs::create_directories(out_dir);
    write_text(out_dir / "compare.json", to_json().dump(2) + "\n");
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("null"); };
    std::string csv = std::string(kCompareCsvHeader) + "\n";
    for (const auto& r : rows)
        csv += r.regime + "," + r.run_id + "," + fmt(r.cknna_prev) + "," + fmt(r.cknna_curr) + "," +
               fmt(r.cknna_next) + "," + fmt(r.score_final) + "," + opt(r.align_final) + "," +
               opt(r.sample_probe_accuracy) + "\n";
    write_text(out_dir / "compare.csv", csv);
}

}  // namespace crepa::training
