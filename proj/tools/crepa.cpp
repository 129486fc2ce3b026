// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// crepa: command-line driver for the toy video diffusion experiments.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "crepa/config.hpp"
#include "crepa/errors.hpp"
#include "crepa/report.hpp"
#include "crepa/rng.hpp"
#include "crepa/synth.hpp"
#include "crepa/tensor_io.hpp"
#include "crepa/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crepa;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    int threads = 0;
};

struct Inputs {
    std::string data, encoder, base, checkpoint, compare, mode;
    std::vector<std::string> runs;
    int label = -1;
    int count = 4;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cli", "cannot write " + path.string());
    out << text;
}

std::string fmt4(double v, int digits = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

synth::Manifest need_manifest(const Inputs& in) {
    if (in.data.empty()) throw ConfigError("cli", "--data is required");
    return synth::read_manifest(in.data);
}

encoder::Encoder need_encoder(const Inputs& in) {
    if (in.encoder.empty()) throw ConfigError("cli", "--encoder is required");
    return encoder::Encoder::load(in.encoder);
}

dit::VideoDiT need_model(const std::string& path, const char* flag) {
    if (path.empty()) throw ConfigError("cli", std::string(flag) + " is required");
    return dit::load_checkpoint(path).model;
}

std::vector<synth::LabeledVideo> heldout_of(const synth::Manifest& m, const config::Experiment& e) {
    auto v = synth::load_videos(m, synth::Split::test, e.finetune.target_class);
    if (static_cast<int>(v.size()) > e.finetune.heldout_videos) v.resize(e.finetune.heldout_videos);
    return v;
}

int run_verb(const std::string& verb, const Common& c, const Inputs& in) {
    auto doc = config::load_document(c.config, c.overrides);
    if (verb == "finetune" && !in.mode.empty()) config::apply_override(doc, "finetune.mode=\"" + in.mode + "\"");
    const auto exp = config::Experiment::from_json(doc);
    const fs::path out = c.out;
    fs::create_directories(out);

    if (verb == "gen-data") {
        synth::DatasetTemplate tmpl;
        tmpl.frames = exp.data.frames;
        tmpl.height = exp.data.height;
        tmpl.width = exp.data.width;
        tmpl.patch = exp.data.patch;
        auto m = synth::generate_dataset(exp.data.n_per_class, tmpl, exp.data.seed, out);
        std::cout << "gen-data: " << m.entries.size() << " videos -> " << (out / "manifest.jsonl").string() << "\n";
    } else if (verb == "pretrain-encoder") {
        auto r = encoder::pretrain_encoder(need_manifest(in), exp.encoder);
        r.encoder.save(out / "encoder.crpe");
        std::cout << "pretrain-encoder: held-out frame accuracy " << fmt4(r.heldout_accuracy) << " -> "
                  << (out / "encoder.crpe").string() << "\n";
    } else if (verb == "pretrain-base") {
        auto videos = synth::load_videos(need_manifest(in), synth::Split::all);
        auto r = training::pretrain_base(videos, exp.dit, exp.schedule, exp.base);
        dit::save_checkpoint(out / "base.crpd", r.model);
        std::string csv = "step,score\n";
        for (std::size_t i = 0; i < r.losses.size(); ++i) {
            char buf[48];
            std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, r.losses[i]);
            csv += buf;
        }
        write_text(out / "base_losses.csv", csv);
        std::cout << "pretrain-base: score loss " << fmt4(r.initial_loss) << " -> " << fmt4(r.final_loss) << " -> "
                  << (out / "base.crpd").string() << "\n";
    } else if (verb == "finetune") {
        auto m = need_manifest(in);
        auto enc = need_encoder(in);
        auto base = need_model(in.base, "--base");
        training::FinetuneData data;
        data.target_class = exp.finetune.target_class;
        data.train = synth::load_videos(m, synth::Split::train, data.target_class);
        data.heldout = heldout_of(m, exp);
        auto r = training::finetune(base, enc, data, exp.schedule, exp.finetune.train, out);
        std::cout << "finetune: " << r.record.run_id << " final score "
                  << fmt4(training::tail_mean(r.record.curve, &training::StepRecord::score));
        if (r.record.final_report)
            std::cout << ", cknna(+1) " << fmt4(r.record.final_report->trimmed_mean(exp.sweep.d));
        std::cout << " -> " << out.string() << "\n";
    } else if (verb == "sweep-alignment") {
        auto m = need_manifest(in);
        auto enc = need_encoder(in);
        auto model = need_model(in.checkpoint, "--checkpoint");
        model->set_tap_layer(exp.finetune.train.align.tap_layer);
        auto r = metrics::cross_frame_sweep(model, enc, heldout_of(m, exp), exp.schedule, exp.sweep,
                                            fs::path(in.checkpoint).stem().string());
        r.write(out / "alignment.json", out / "alignment.csv");
        std::cout << "sweep-alignment: cknna(-d/0/+d) " << fmt4(r.trimmed_mean(-exp.sweep.d)) << "/"
                  << fmt4(r.trimmed_mean(0)) << "/" << fmt4(r.trimmed_mean(exp.sweep.d)) << " -> "
                  << (out / "alignment.csv").string() << "\n";
    } else if (verb == "probe") {
        auto m = need_manifest(in);
        auto model = need_model(in.checkpoint, "--checkpoint");
        auto r = metrics::linear_probe_sweep(model, synth::load_videos(m, synth::Split::train),
                                             synth::load_videos(m, synth::Split::test), exp.schedule, exp.probe);
        write_text(out / "probe.json", r.to_json().dump(2) + "\n");
        double best = 0;
        for (double a : r.accuracy) best = std::max(best, a);
        std::cout << "probe: peak layer " << r.peak_layer << " accuracy " << fmt4(best) << ", recommended tap "
                  << r.recommended_tap << " -> " << (out / "probe.json").string() << "\n";
    } else if (verb == "sample") {
        auto model = need_model(in.checkpoint, "--checkpoint");
        const int label = in.label >= 0 ? in.label : exp.finetune.target_class;
        if (label > model->config().num_classes) throw ConfigError("cli", "--label out of range");
        auto videos = training::sample_videos(model, exp.schedule, label, in.count,
                                              mix_seed(exp.seed, 0x5a3e), exp.finetune.train.sample_mode);
        report::write_png_grid(out / "samples.png", videos);
        std::string line = "sample: " + std::to_string(in.count) + " videos of class " + std::to_string(label);
        if (!in.encoder.empty()) {
            auto enc = need_encoder(in);
            auto pred = enc.predict(videos.reshape({-1, videos.size(2), videos.size(3), videos.size(4)}));
            line += ", encoder accuracy " + fmt4(pred.eq(label).to(torch::kFloat64).mean().item<double>());
        }
        std::cout << line << " -> " << (out / "samples.png").string() << "\n";
    } else if (verb == "compare") {
        if (in.runs.empty()) throw ConfigError("cli", "--runs is required");
        std::vector<training::RunRecord> records;
        for (const auto& r : in.runs) records.push_back(training::load_run(r));
        auto cmp = training::compare_runs(records);
        cmp.write(out);
        std::cout << "compare: " << cmp.rows.size() << " regimes";
        for (const auto& row : cmp.rows) std::cout << ", " << row.regime << " cknna(+d) " << fmt4(row.cknna_next);
        std::cout << " -> " << (out / "compare.csv").string() << "\n";
    } else if (verb == "report") {
        if (in.compare.empty()) throw ConfigError("cli", "--compare is required");
        std::ifstream f(fs::path(in.compare) / "compare.json");
        if (!f) throw IoError("cli", "no compare.json in " + in.compare);
        const auto j = json::parse(f);
        report::Distributions dist;
        for (const auto& [regime, per] : j.at("distributions").items())
            for (const auto& [off, values] : per.items()) dist[regime][std::stoi(off)] = values.get<std::vector<double>>();
        auto files = report::emit_plots(dist, out);
        std::cout << "report: " << files.size() - 1 << " box plots -> " << (out / "box_stats.csv").string() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-frame representation alignment experiments on a toy video DiT"};
    app.require_subcommand(1);
    Common common;
    Inputs in;
    const std::vector<std::string> verbs = {"gen-data", "pretrain-encoder", "pretrain-base", "finetune",
                                            "sweep-alignment", "probe", "sample", "compare", "report"};
    for (const auto& v : verbs) {
        auto* sub = app.add_subcommand(v);
        sub->add_option("--config,-c", common.config, "experiment JSON")->check(CLI::ExistingFile);
        sub->add_option("--out,-o", common.out, "output directory")->required();
        sub->add_option("--set,-s", common.overrides, "dotted.key=value override (repeatable)");
        sub->add_option("--threads", common.threads, "intra-op thread cap");
        if (v != "gen-data" && v != "compare" && v != "report" && v != "sample")
            sub->add_option("--data", in.data, "dataset directory or manifest");
        if (v == "finetune" || v == "sweep-alignment" || v == "sample")
            sub->add_option("--encoder", in.encoder, "frozen encoder (.crpe)");
        if (v == "finetune") {
            sub->add_option("--base", in.base, "base checkpoint (.crpd)");
            sub->add_option("--mode", in.mode, "vanilla | repa | crepa");
        }
        if (v == "sweep-alignment" || v == "probe" || v == "sample")
            sub->add_option("--checkpoint", in.checkpoint, "model checkpoint (.crpd)");
        if (v == "sample") {
            sub->add_option("--label", in.label, "class label (default: finetune.target_class)");
            sub->add_option("--count", in.count, "number of videos")->check(CLI::PositiveNumber);
        }
        if (v == "compare") sub->add_option("--runs", in.runs, "run directories")->expected(1, -1);
        if (v == "report") sub->add_option("--compare", in.compare, "directory written by compare");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    int threads = common.threads;
    if (threads <= 0)
        if (const char* env = std::getenv("CREPA_THREADS")) threads = std::atoi(env);
    if (threads > 0) {
        torch::set_num_threads(threads);
        torch::set_num_interop_threads(threads);
    }

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        return run_verb(verb, common, in);
    } catch (const ConfigError& e) {
        std::cerr << "crepa " << verb << ": " << e.module() << ": " << e.kind() << ": " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "crepa " << verb << ": " << e.module() << ": " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "crepa " << verb << ": json: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "crepa " << verb << ": " << e.what() << "\n";
        return 1;
    }
}
