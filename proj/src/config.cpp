// Copyright 2026 The crepa-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crepa/config.hpp"

#include <fstream>

#include "crepa/errors.hpp"

namespace crepa::config {

using nlohmann::json;

namespace {

constexpr const char* kModule = "config";

json section(const json& doc, const char* key, std::uint64_t seed) {
    json s = doc.contains(key) ? doc.at(key) : json::object();
    if (!s.is_object()) throw ConfigError(kModule, std::string("section '") + key + "' must be an object");
    if (!s.contains("seed")) s["seed"] = seed;
    return s;
}

}  // namespace

void to_json(json& j, const DataConfig& c) {
    j = json{{"n_per_class", c.n_per_class}, {"frames", c.frames}, {"height", c.height},
             {"width", c.width},             {"patch", c.patch},   {"seed", c.seed}};
}

void from_json(const json& j, DataConfig& c) {
    DataConfig d;
    c.n_per_class = j.value("n_per_class", d.n_per_class);
    c.frames = j.value("frames", d.frames);
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.patch = j.value("patch", d.patch);
    c.seed = j.value("seed", d.seed);
    if (c.n_per_class < 1) throw ConfigError(kModule, "data.n_per_class must be >= 1");
}

json Experiment::to_json() const {
    json ft = finetune.train;
    ft.erase("sweep");
    ft["target_class"] = finetune.target_class;
    ft["heldout_videos"] = finetune.heldout_videos;
    return json{{"seed", seed},         {"data", data},   {"encoder", encoder}, {"dit", dit},
                {"schedule", schedule}, {"base", base},   {"finetune", ft},     {"sweep", sweep},
                {"probe", probe}};
}

Experiment Experiment::from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError(kModule, "config document must be a JSON object");
    Experiment e;
    try {
        e.seed = doc.value("seed", std::uint64_t{0});
        e.data = section(doc, "data", e.seed).get<DataConfig>();
        e.encoder = section(doc, "encoder", e.seed).get<encoder::EncoderConfig>();
        e.dit = section(doc, "dit", e.seed).get<dit::DiTConfig>();
        if (doc.contains("schedule")) e.schedule = doc.at("schedule").get<diffusion::NoiseSchedule>();
        e.base = section(doc, "base", e.seed).get<training::BaseConfig>();
        e.sweep = section(doc, "sweep", e.seed).get<metrics::SweepConfig>();
        e.probe = section(doc, "probe", e.seed).get<metrics::ProbeConfig>();

        auto ft = section(doc, "finetune", e.seed);
        if (!ft.contains("align")) ft["align"] = json::object();
        if (!ft["align"].contains("tap_layer")) ft["align"]["tap_layer"] = e.dit.tap_layer;
        if (ft.contains("mode") && !ft["align"].contains("mode")) ft["align"]["mode"] = ft["mode"];
        e.finetune.target_class = ft.value("target_class", 0);
        e.finetune.heldout_videos = ft.value("heldout_videos", 10);
        e.finetune.train = ft.get<training::TrainConfig>();
        e.finetune.train.sweep = e.sweep;
    } catch (const json::exception& ex) {
        throw ConfigError(kModule, ex.what());
    }
    e.dit.validate();
    e.encoder.validate();
    if (e.dit.frames != e.data.frames || e.dit.height != e.data.height || e.dit.width != e.data.width)
        throw ConfigError(kModule, "dit geometry must match the data geometry");
    if (e.finetune.target_class < 0 || e.finetune.target_class >= e.dit.num_classes)
        throw ConfigError(kModule, "finetune.target_class out of range");
    if (e.finetune.heldout_videos < 1) throw ConfigError(kModule, "finetune.heldout_videos must be >= 1");
    return e;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError(kModule, "override '" + assignment + "' is not key=value");
    const auto key = assignment.substr(0, eq);
    const auto raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(kModule, "override key '" + key + "' has an empty component");
        if (!node->is_object()) throw ConfigError(kModule, "override '" + key + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

json load_document(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json doc = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError(kModule, "cannot open config " + path.string());
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError(kModule, path.string() + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return doc;
}

Experiment load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    return Experiment::from_json(load_document(path, overrides));
}

}  // namespace crepa::config
