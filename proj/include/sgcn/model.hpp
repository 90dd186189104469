#pragma once

// The transfer model: a dual SGCN feature extractor shared by the source and
// target phases, the source classifier and the target fusion head, plus the
// "SGCM" checkpoint container.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgcn/binary_io.hpp"
#include "sgcn/cheb_conv.hpp"
#include "sgcn/grid_graph.hpp"
#include "sgcn/json_fields.hpp"
#include "sgcn/network.hpp"

namespace sgcn {

struct ModelConfig {
    Index height = 32;
    Index width = 32;
    Index input_channels = 2;  // spatial rows: (intensity, 0); temporal rows: (u, v)
    GraphParams graph1{8, 2, 2.0 * std::sqrt(2.0), 0};
    GraphParams graph2{4, 0, 2.0 * std::sqrt(2.0), 0};
    SgcnConfig sgcn;
    Index fusion_width = 256;
    Index n_classes = 4;
    Index source_classes = 4;
    RowVote vote = RowVote::mean;
    bool separate_temporal = false;

    void validate() const {
        require<InvalidConfig>(height >= 1 && width >= 1 && height * width >= 2, "model: resolution too small");
        require<InvalidConfig>(input_channels >= 1, "model: input_channels must be >= 1");
        require<InvalidConfig>(fusion_width >= 1, "model: fusion_width must be >= 1");
        require<InvalidConfig>(n_classes >= 2 && source_classes >= 2, "model: need at least 2 classes");
        graph1.validate();
        graph2.validate();
        sgcn.validate();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// -----------------------------------------------------------------------------
// JSON
// -----------------------------------------------------------------------------

inline nlohmann::json graph_to_json(const GraphParams& g) {
    return {{"p", g.p}, {"q", g.q}, {"threshold", g.threshold}, {"seed", g.seed}};
}

inline GraphParams graph_from_json(const nlohmann::json& j, const std::string& name, GraphParams g) {
    json::reject_unknown(j, {"p", "q", "threshold", "seed"}, name);
    json::read(j, "p", g.p, name);
    json::read(j, "q", g.q, name);
    json::read(j, "threshold", g.threshold, name);
    json::read(j, "seed", g.seed, name);
    g.validate();
    return g;
}

inline nlohmann::json network_to_json(const ModelConfig& c) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : c.sgcn.layers) layers.push_back({l.order, l.channels, l.pool_levels});
    return {{"height", c.height},
            {"width", c.width},
            {"input_channels", c.input_channels},
            {"layers", layers},
            {"fc_width", c.sgcn.fc_width},
            {"dropout", c.sgcn.dropout},
            {"use_bias", c.sgcn.use_bias},
            {"fusion_width", c.fusion_width},
            {"n_classes", c.n_classes},
            {"source_classes", c.source_classes},
            {"row_vote", to_string(c.vote)},
            {"separate_temporal_weights", c.separate_temporal}};
}

/// Reads the "network" section into `c`, keeping defaults for omitted keys.
inline void network_from_json(const nlohmann::json& j, ModelConfig& c) {
    const std::string s = "network";
    json::reject_unknown(j,
                         {"height", "width", "input_channels", "layers", "fc_width", "dropout", "use_bias",
                          "fusion_width", "n_classes", "source_classes", "row_vote", "separate_temporal_weights"},
                         s);
    json::read(j, "height", c.height, s);
    json::read(j, "width", c.width, s);
    json::read(j, "input_channels", c.input_channels, s);
    if (j.contains("layers")) {
        std::vector<std::vector<Index>> raw;
        json::read(j, "layers", raw, s);
        c.sgcn.layers.clear();
        for (const auto& l : raw) {
            require<InvalidConfig>(l.size() == 3, "config key 'network.layers' entries must be [K, d, s]");
            c.sgcn.layers.push_back({static_cast<int>(l[0]), l[1], static_cast<int>(l[2])});
        }
    }
    json::read(j, "fc_width", c.sgcn.fc_width, s);
    json::read(j, "dropout", c.sgcn.dropout, s);
    json::read(j, "use_bias", c.sgcn.use_bias, s);
    json::read(j, "fusion_width", c.fusion_width, s);
    json::read(j, "n_classes", c.n_classes, s);
    json::read(j, "source_classes", c.source_classes, s);
    std::string vote = to_string(c.vote);
    json::read(j, "row_vote", vote, s);
    c.vote = row_vote_from_string(vote);
    json::read(j, "separate_temporal_weights", c.separate_temporal, s);
}

/// Canonical form: sections graph1, graph2 and network with sorted keys.
inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"graph1", graph_to_json(c.graph1)}, {"graph2", graph_to_json(c.graph2)}, {"network", network_to_json(c)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    json::reject_unknown(j, {"graph1", "graph2", "network"}, "model");
    ModelConfig c;
    c.graph1 = graph_from_json(json::section(j, "graph1"), "graph1", c.graph1);
    c.graph2 = graph_from_json(json::section(j, "graph2"), "graph2", c.graph2);
    network_from_json(json::section(j, "network"), c);
    c.validate();
    return c;
}

// -----------------------------------------------------------------------------
// Transfer model
// -----------------------------------------------------------------------------

struct TransferModel {
    ModelConfig config;
    std::uint64_t init_seed = 0;
    DualModel dual;
    std::optional<DualModel> temporal;  // only with separate temporal weights
    ChebLayer source_head;              // linear source classifier on dual features
    FusionHead head;

    const DualModel& temporal_dual() const { return temporal ? *temporal : dual; }
    Index feature_width() const { return dual.feature_width(); }
};

/// Builds both graphs and initializes every layer from `init_seed`.
inline TransferModel make_transfer_model(const ModelConfig& config, std::uint64_t init_seed) {
    config.validate();
    const GridGraph g1 = build_stochastic_graph(config.height, config.width, config.graph1);
    const GridGraph g2 = build_stochastic_graph(config.height, config.width, config.graph2);
    std::mt19937_64 rng(init_seed);
    TransferModel m;
    m.config = config;
    m.init_seed = init_seed;
    m.dual.sgcn1 = SgcnModel(g1, config.sgcn, config.input_channels, rng);
    m.dual.sgcn2 = SgcnModel(g2, config.sgcn, config.input_channels, rng);
    m.source_head = make_cheb_layer(1, m.dual.feature_width(), config.source_classes, rng, config.sgcn.use_bias);
    m.head = FusionHead::make(m.dual.feature_width(), config.fusion_width, config.n_classes, config.vote, rng,
                              config.sgcn.use_bias);
    return m;
}

/// Fresh fusion head, e.g. to restart the target phase from a new seed.
inline void reset_head(TransferModel& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    m.head = FusionHead::make(m.feature_width(), m.config.fusion_width, m.config.n_classes, m.config.vote, rng,
                              m.config.sgcn.use_bias);
}

// -----------------------------------------------------------------------------
// "SGCM" checkpoint
// -----------------------------------------------------------------------------

inline constexpr std::uint16_t kModelFormatVersion = 1;

inline std::vector<char> serialize_model(const TransferModel& m) {
    io::Writer w;
    w.magic("SGCM");
    w.put<std::uint16_t>(kModelFormatVersion);
    w.str(model_config_to_json(m.config).dump());
    w.put<std::uint64_t>(m.init_seed);
    w.put<std::uint64_t>(m.config.graph1.seed);
    w.put<std::uint64_t>(m.config.graph2.seed);
    w.blob(serialize_graph(m.dual.sgcn1.graph()));
    w.blob(serialize_graph(m.dual.sgcn2.graph()));
    w.blob(serialize_weights(m.dual.parameters()));
    w.put<std::uint8_t>(m.temporal ? 1 : 0);
    if (m.temporal) w.blob(serialize_weights(m.temporal->parameters()));
    const ChebLayer* source[1] = {&m.source_head};
    w.blob(serialize_weights(source));
    w.blob(serialize_weights(m.head.parameters()));
    return w.take();
}

inline TransferModel deserialize_model(const std::vector<char>& bytes) {
    io::Reader r(bytes);
    r.expect_magic("SGCM");
    const auto version = r.get<std::uint16_t>();
    if (version != kModelFormatVersion) throw FormatError("unsupported SGCM version " + std::to_string(version));
    ModelConfig config;
    try {
        config = model_config_from_json(nlohmann::json::parse(r.str()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("SGCM: bad config JSON: ") + e.what());
    }
    TransferModel m;
    m.config = config;
    m.init_seed = r.get<std::uint64_t>();
    const auto seed1 = r.get<std::uint64_t>();
    const auto seed2 = r.get<std::uint64_t>();
    require<FormatError>(seed1 == config.graph1.seed && seed2 == config.graph2.seed, "SGCM: graph seeds disagree");
    const GridGraph g1 = deserialize_graph(r.blob(), config.width);
    const GridGraph g2 = deserialize_graph(r.blob(), config.width);
    std::mt19937_64 rng(m.init_seed);
    m.dual.sgcn1 = SgcnModel(g1, config.sgcn, config.input_channels, rng);
    m.dual.sgcn2 = SgcnModel(g2, config.sgcn, config.input_channels, rng);
    m.source_head = make_cheb_layer(1, m.dual.feature_width(), config.source_classes, rng, config.sgcn.use_bias);
    m.head = FusionHead::make(m.dual.feature_width(), config.fusion_width, config.n_classes, config.vote, rng,
                              config.sgcn.use_bias);
    deserialize_weights(r.blob(), m.dual.parameters());
    if (r.get<std::uint8_t>()) {
        m.temporal = m.dual;
        deserialize_weights(r.blob(), m.temporal->parameters());
    }
    ChebLayer* source[1] = {&m.source_head};
    deserialize_weights(r.blob(), source);
    deserialize_weights(r.blob(), m.head.parameters());
    require<FormatError>(r.at_end(), "SGCM: trailing bytes");
    return m;
}

}  // namespace sgcn
