#pragma once

// Run configuration: one JSON document with sections graph1, graph2,
// network, flow, train and data plus a global seed. Unknown keys are errors,
// omitted keys keep their defaults, and the resolved form (every value
// explicit, graph seeds included) reproduces the run when fed back in.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgcn/data.hpp"
#include "sgcn/json_fields.hpp"
#include "sgcn/model.hpp"
#include "sgcn/train.hpp"

namespace sgcn {

struct DataConfig {
    std::string source_dir;       // empty: synthetic source set
    std::string target_dir;       // empty: synthetic target set
    std::string target_test_dir;  // empty: split target_dir by test_fraction
    Index samples_per_class = 40;
    Index frames = 16;
    std::vector<std::pair<double, double>> amplitude;
    std::pair<double, double> intensity{0.6, 1.0};
    std::vector<double> source_class_ratios;
    std::vector<double> target_class_ratios;
    double noise_sigma = 0.01;
    double micro_noise = 0.02;
    double micro_scale = 0.25;
    double blob_width = 2.0;
    double start_jitter = 0.5;
    double test_fraction = 0.2;
    Variant source_variant = Variant::macro;
    Variant target_variant = Variant::micro;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    FrameOptions frames;
    TrainConfig source;
    TrainConfig target;
    Branches branches = Branches::fused;
    int folds = 0;  // 0: fixed train/test split; k >= 2: stratified k-fold over the target set
    int threads = 1;
    DataConfig data;

    /// Synthetic spec of one domain, tied to the network resolution and class count.
    SyntheticSpec synthetic(bool source_domain) const {
        SyntheticSpec s;
        s.n_classes = source_domain ? model.source_classes : model.n_classes;
        s.samples_per_class = data.samples_per_class;
        s.height = model.height;
        s.width = model.width;
        s.frames = data.frames;
        s.amplitude = data.amplitude;
        s.intensity = data.intensity;
        s.class_ratios = source_domain ? data.source_class_ratios : data.target_class_ratios;
        s.noise_sigma = data.noise_sigma;
        s.micro_noise = data.micro_noise;
        s.micro_scale = data.micro_scale;
        s.blob_width = data.blob_width;
        s.start_jitter = data.start_jitter;
        s.test_fraction = data.test_fraction;
        s.variant = source_domain ? data.source_variant : data.target_variant;
        s.seed = sub_seed(sub_seed(seed, SeedStream::data), source_domain ? 1u : 2u);
        return s;
    }

    void validate() const {
        model.validate();
        source.validate();
        target.validate();
        require<InvalidConfig>(frames.spatial_frames >= 1 && frames.temporal_frames >= 1,
                               "config key 'flow': spatial_frames and temporal_frames must be >= 1");
        require<InvalidConfig>(frames.flow.smoothness > 0.0 && frames.flow.iterations >= 1,
                               "config key 'flow': smoothness must be > 0 and iterations >= 1");
        require<InvalidConfig>(folds == 0 || folds >= 2, "config key 'train.folds' must be 0 or >= 2");
        require<InvalidConfig>(threads >= 1, "config key 'train.threads' must be >= 1");
        require<InvalidConfig>(data.test_fraction > 0.0 && data.test_fraction < 1.0,
                               "config key 'data.test_fraction' must be in (0, 1)");
        if (data.source_dir.empty()) synthetic(true).validate();
        if (data.target_dir.empty()) synthetic(false).validate();
    }
};

inline Branches branches_from_string(const std::string& s) {
    if (s == "spatial") return Branches::spatial;
    if (s == "temporal") return Branches::temporal;
    if (s == "fused") return Branches::fused;
    throw InvalidConfig("branches must be spatial, temporal or fused, got '" + s + "'");
}

// -----------------------------------------------------------------------------
// JSON
// -----------------------------------------------------------------------------

inline nlohmann::json train_to_json(const TrainConfig& t) {
    return {{"max_epochs", t.max_epochs},   {"patience", t.patience},       {"min_delta", t.min_delta},
            {"batch_size", t.batch_size},   {"loss", to_string(t.loss)},    {"focal_alpha", t.focal.alpha},
            {"focal_gamma", t.focal.gamma}, {"lr", t.adam.lr},              {"decay", t.adam.decay},
            {"decay_mode", to_string(t.adam.mode)}, {"unfreeze", t.unfreeze}, {"frozen", t.frozen}};
}

inline void train_from_json(const nlohmann::json& j, const std::string& s, TrainConfig& t) {
    json::reject_unknown(j,
                         {"max_epochs", "patience", "min_delta", "batch_size", "loss", "focal_alpha", "focal_gamma",
                          "lr", "decay", "decay_mode", "unfreeze", "frozen"},
                         s);
    json::read(j, "max_epochs", t.max_epochs, s);
    json::read(j, "patience", t.patience, s);
    json::read(j, "min_delta", t.min_delta, s);
    json::read(j, "batch_size", t.batch_size, s);
    std::string loss = to_string(t.loss), mode = to_string(t.adam.mode);
    json::read(j, "loss", loss, s);
    t.loss = loss_kind_from_string(loss);
    json::read(j, "focal_alpha", t.focal.alpha, s);
    json::read(j, "focal_gamma", t.focal.gamma, s);
    json::read(j, "lr", t.adam.lr, s);
    json::read(j, "decay", t.adam.decay, s);
    json::read(j, "decay_mode", mode, s);
    t.adam.mode = decay_mode_from_string(mode);
    json::read(j, "unfreeze", t.unfreeze, s);
    json::read(j, "frozen", t.frozen, s);
}

/// Resolved form: every knob explicit.
inline nlohmann::json run_config_to_json(const RunConfig& c) {
    const auto& d = c.data;
    nlohmann::json amp = nlohmann::json::array();
    for (const auto& [lo, hi] : d.amplitude) amp.push_back({lo, hi});
    auto model = model_config_to_json(c.model);
    return {{"seed", c.seed},
            {"graph1", model["graph1"]},
            {"graph2", model["graph2"]},
            {"network", model["network"]},
            {"flow",
             {{"smoothness", c.frames.flow.smoothness},
              {"iterations", c.frames.flow.iterations},
              {"spatial_frames", c.frames.spatial_frames},
              {"temporal_frames", c.frames.temporal_frames}}},
            {"train",
             {{"source", train_to_json(c.source)},
              {"target", train_to_json(c.target)},
              {"branches", to_string(c.branches)},
              {"folds", c.folds},
              {"threads", c.threads}}},
            {"data",
             {{"source_dir", d.source_dir},
              {"target_dir", d.target_dir},
              {"target_test_dir", d.target_test_dir},
              {"samples_per_class", d.samples_per_class},
              {"frames", d.frames},
              {"amplitude", amp},
              {"intensity", {d.intensity.first, d.intensity.second}},
              {"source_class_ratios", d.source_class_ratios},
              {"target_class_ratios", d.target_class_ratios},
              {"noise_sigma", d.noise_sigma},
              {"micro_noise", d.micro_noise},
              {"micro_scale", d.micro_scale},
              {"blob_width", d.blob_width},
              {"start_jitter", d.start_jitter},
              {"test_fraction", d.test_fraction},
              {"source_variant", to_string(d.source_variant)},
              {"target_variant", to_string(d.target_variant)}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    json::reject_unknown(j, {"seed", "graph1", "graph2", "network", "flow", "train", "data"}, "config");
    RunConfig c;
    json::read(j, "seed", c.seed, "config");

    // Graph seeds left out fan out from the global seed.
    c.model.graph1.seed = sub_seed(c.seed, SeedStream::graph1);
    c.model.graph2.seed = sub_seed(c.seed, SeedStream::graph2);
    c.model.graph1 = graph_from_json(json::section(j, "graph1"), "graph1", c.model.graph1);
    c.model.graph2 = graph_from_json(json::section(j, "graph2"), "graph2", c.model.graph2);
    network_from_json(json::section(j, "network"), c.model);

    const auto flow = json::section(j, "flow");
    json::reject_unknown(flow, {"smoothness", "iterations", "spatial_frames", "temporal_frames"}, "flow");
    json::read(flow, "smoothness", c.frames.flow.smoothness, "flow");
    json::read(flow, "iterations", c.frames.flow.iterations, "flow");
    json::read(flow, "spatial_frames", c.frames.spatial_frames, "flow");
    json::read(flow, "temporal_frames", c.frames.temporal_frames, "flow");

    const auto train = json::section(j, "train");
    json::reject_unknown(train, {"source", "target", "branches", "folds", "threads"}, "train");
    train_from_json(json::section(train, "source"), "train.source", c.source);
    train_from_json(json::section(train, "target"), "train.target", c.target);
    std::string branches = to_string(c.branches);
    json::read(train, "branches", branches, "train");
    c.branches = branches_from_string(branches);
    json::read(train, "folds", c.folds, "train");
    json::read(train, "threads", c.threads, "train");

    const auto data = json::section(j, "data");
    const std::string s = "data";
    json::reject_unknown(data,
                         {"source_dir", "target_dir", "target_test_dir", "samples_per_class", "frames", "amplitude",
                          "intensity", "source_class_ratios", "target_class_ratios", "noise_sigma", "micro_noise",
                          "micro_scale", "blob_width", "start_jitter", "test_fraction", "source_variant",
                          "target_variant"},
                         s);
    auto& d = c.data;
    json::read(data, "source_dir", d.source_dir, s);
    json::read(data, "target_dir", d.target_dir, s);
    json::read(data, "target_test_dir", d.target_test_dir, s);
    json::read(data, "samples_per_class", d.samples_per_class, s);
    json::read(data, "frames", d.frames, s);
    json::read(data, "amplitude", d.amplitude, s);
    json::read(data, "intensity", d.intensity, s);
    json::read(data, "source_class_ratios", d.source_class_ratios, s);
    json::read(data, "target_class_ratios", d.target_class_ratios, s);
    json::read(data, "noise_sigma", d.noise_sigma, s);
    json::read(data, "micro_noise", d.micro_noise, s);
    json::read(data, "micro_scale", d.micro_scale, s);
    json::read(data, "blob_width", d.blob_width, s);
    json::read(data, "start_jitter", d.start_jitter, s);
    json::read(data, "test_fraction", d.test_fraction, s);
    std::string sv = to_string(d.source_variant), tv = to_string(d.target_variant);
    json::read(data, "source_variant", sv, s);
    json::read(data, "target_variant", tv, s);
    d.source_variant = variant_from_string(sv);
    d.target_variant = variant_from_string(tv);

    // Phase seeds and threads are derived, never configured per phase.
    c.source.seed = sub_seed(c.seed, SeedStream::train_source);
    c.target.seed = sub_seed(c.seed, SeedStream::train_target);
    c.source.threads = c.target.threads = c.threads;
    c.validate();
    return c;
}

/// Applies "a.b.c=value" to the document. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    require<InvalidConfig>(eq != std::string::npos && eq > 0, "override '" + assignment + "' must look like key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        require<InvalidConfig>(!key.empty(), "override '" + assignment + "' has an empty key segment");
        if (!node->is_object()) *node = nlohmann::json::object();
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const auto doc = nlohmann::json::parse(buf.str(), nullptr, false);
    if (doc.is_discarded()) throw InvalidConfig("config file '" + path + "' is not valid JSON");
    return doc;
}

/// Config file (optional) plus overrides, resolved and validated.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json doc = path.empty() ? nlohmann::json::object() : read_json_file(path);
    for (const auto& o : overrides) apply_override(doc, o);
    return run_config_from_json(doc);
}

}  // namespace sgcn
