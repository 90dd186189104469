// Command-line front end: graph construction, synthetic data, flow
// statistics, both training phases, evaluation and ablation.
//
// Exit codes: 0 ok, 1 other failure, 2 bad config, 3 data error,
// 4 numeric failure. Failures print one line to stderr:
//   error kind=<kind> exit=<code> message="<text>"

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgcn/binary_io.hpp"
#include "sgcn/config.hpp"
#include "sgcn/grid_graph.hpp"
#include "sgcn/optical_flow.hpp"
#include "sgcn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sgcn;

namespace {

constexpr const char* kToolVersion = "0.1.0";

int exit_code(const Error& e) {
    if (dynamic_cast<const InvalidConfig*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

void report_error(const std::string& kind, int code, std::string message) {
    for (char& ch : message)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::cerr << "error kind=" << kind << " exit=" << code << " message=" << nlohmann::json(message).dump() << "\n";
}

std::string version_text() {
    std::ostringstream out;
    out << "sgcn " << kToolVersion << "\n"
        << "SGCN graph format " << kGraphFormatVersion << "\n"
        << "SGCW weight format " << kWeightFormatVersion << "\n"
        << "SGCF flow format " << kFlowFormatVersion << "\n"
        << "SGCM model format " << kModelFormatVersion << "\n";
    return out.str();
}

/// Options shared by the config-driven commands.
struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out = "out";
    int threads = 0;
    bool no_bias = false;
    bool separate_temporal = false;
    std::string row_vote;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "run configuration (JSON)");
        cmd->add_option("--set", overrides, "override one key, e.g. --set train.target.lr=1e-3")->take_all();
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--threads", threads, "worker threads for per-sample work (default 1)");
        cmd->add_flag("--no-bias", no_bias, "drop every layer bias (network.use_bias=false)");
        cmd->add_flag("--separate-temporal-weights", separate_temporal,
                      "give the temporal branch its own copy of the transferred stacks");
        cmd->add_option("--row-vote", row_vote, "per-video vote over row logits (mean|max)");
    }

    RunConfig resolve(std::vector<std::string> extra = {}) const {
        auto all = overrides;
        if (threads > 0) all.push_back("train.threads=" + std::to_string(threads));
        if (no_bias) all.push_back("network.use_bias=false");
        if (separate_temporal) all.push_back("network.separate_temporal_weights=true");
        if (!row_vote.empty()) all.push_back("network.row_vote=" + row_vote);
        all.insert(all.end(), extra.begin(), extra.end());
        const RunConfig c = load_run_config(config, all);
        const std::string echo = run_config_to_json(c).dump(2);
        std::cout << echo << "\n";
        write_text(fs::path(out) / "config.json", echo + "\n");
        return c;
    }
};

void log(const std::string& line) { std::cerr << line << "\n"; }

std::vector<VideoInput> videos_of(const RunConfig& c, const Dataset& d) {
    return make_video_inputs(d, c.frames, c.model.input_channels, c.threads);
}

/// Loads a checkpoint and checks that it was built for this configuration's
/// network and graphs.
TransferModel load_model(const std::string& path, const RunConfig& c) {
    TransferModel m = deserialize_model(io::read_file(path));
    if (!(m.config == c.model))
        throw InvalidConfig("model '" + path + "' was built with a different graph/network configuration");
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual stochastic graph convolutional network for image-sequence classification"};
    app.require_subcommand(0, 1);
    bool show_version = false;
    app.add_flag("--version", show_version, "print format versions of all binary containers");

    // build-graph
    auto* build = app.add_subcommand("build-graph", "build a stochastic p+q grid graph");
    Index gh = 32, gw = 32;
    GraphParams gp;
    std::string graph_out = "graph.sgcn";
    build->add_option("--height", gh, "grid height")->capture_default_str();
    build->add_option("--width", gw, "grid width")->capture_default_str();
    build->add_option("--p", gp.p, "fixed nearest neighbours")->capture_default_str();
    build->add_option("--q", gp.q, "stochastic neighbours")->capture_default_str();
    build->add_option("--threshold", gp.threshold, "distance threshold T (pixels)")->capture_default_str();
    build->add_option("--seed", gp.seed, "RNG seed")->capture_default_str();
    build->add_option("--out", graph_out, "output graph file")->capture_default_str();

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "write the synthetic source and target sets as PGM trees");
    Common gen_opts;
    gen_opts.attach(gen);
    std::vector<std::string> gen_flags;
    Index spc = 0, frames = 0;
    double noise = -1.0;
    std::string target_variant, ratios;
    gen->add_option("--samples-per-class", spc, "samples per class");
    gen->add_option("--frames", frames, "frames per sequence");
    gen->add_option("--noise-sigma", noise, "additive noise sigma");
    gen->add_option("--variant", target_variant, "target variant (macro|micro)");
    gen->add_option("--class-ratios", ratios, "target class ratios, e.g. 1,1,1,0.333");

    // flow-stats
    auto* flow = app.add_subcommand("flow-stats", "optical-flow magnitude statistics per sequence");
    Common flow_opts;
    flow_opts.attach(flow);
    std::string flow_data;
    flow->add_option("--data", flow_data, "dataset root (default: synthetic target set)");

    // train-source
    auto* src = app.add_subcommand("train-source", "pre-train both stacks on the source set");
    Common src_opts;
    src_opts.attach(src);

    // fine-tune
    auto* ft = app.add_subcommand("fine-tune", "fine-tune on the target set");
    Common ft_opts;
    ft_opts.attach(ft);
    std::string ft_model, unfreeze;
    ft->add_option("--model", ft_model, "pre-trained checkpoint (default: fresh random model)");
    ft->add_option("--unfreeze", unfreeze, "'all' to train the transferred stacks too");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the target test set");
    Common ev_opts;
    ev_opts.attach(ev);
    std::string ev_model;
    ev->add_option("--model", ev_model, "checkpoint")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "branch/loss ablation from one pre-trained checkpoint");
    Common ab_opts;
    ab_opts.attach(ab);
    std::string ab_model, ab_rows = "spatial_ce,temporal_ce,fused_fl";
    ab->add_option("--model", ab_model, "pre-trained checkpoint (default: fresh random model)");
    ab->add_option("--rows", ab_rows, "comma-separated <spatial|temporal|fused>_<ce|fl>")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("invalid-config", 2, e.what());
        return 2;
    }

    try {
        if (show_version) {
            std::cout << version_text();
            return 0;
        }
        if (*build) {
            const GridGraph g = build_stochastic_graph(gh, gw, gp);
            const nlohmann::json echo = {{"height", gh}, {"width", gw}, {"graph", graph_to_json(gp)}};
            std::cout << echo.dump(2) << "\n";
            if (fs::path(graph_out).has_parent_path()) fs::create_directories(fs::path(graph_out).parent_path());
            io::write_file(graph_out, serialize_graph(g));
            log("wrote " + graph_out + " (" + std::to_string(g.n_vertices()) + " vertices, " +
                std::to_string(g.adjacency.nonZeros() / 2) + " edges)");
        } else if (*gen) {
            std::vector<std::string> extra;
            if (spc > 0) extra.push_back("data.samples_per_class=" + std::to_string(spc));
            if (frames > 0) extra.push_back("data.frames=" + std::to_string(frames));
            if (noise >= 0.0) extra.push_back("data.noise_sigma=" + nlohmann::json(noise).dump());
            if (!target_variant.empty()) extra.push_back("data.target_variant=" + target_variant);
            if (!ratios.empty()) extra.push_back("data.target_class_ratios=[" + ratios + "]");
            const RunConfig c = gen_opts.resolve(extra);
            const PhaseData d = prepare_data(c);
            const fs::path out(gen_opts.out);
            save_dataset(d.source_train, (out / "source" / "train").string());
            save_dataset(d.source_test, (out / "source" / "test").string());
            save_dataset(d.target_train, (out / "target" / "train").string());
            save_dataset(d.target_test, (out / "target" / "test").string());
            nlohmann::json summary;
            for (const auto& [name, set] : {std::pair<std::string, const Dataset*>{"source_train", &d.source_train},
                                            {"source_test", &d.source_test},
                                            {"target_train", &d.target_train},
                                            {"target_test", &d.target_test}}) {
                const auto prof = imbalance_profile(*set);
                summary[name] = {{"counts", prof.counts}, {"imbalance_ratio", prof.ratio}};
            }
            write_text(out / "summary.json", summary.dump(2) + "\n");
        } else if (*flow) {
            const RunConfig c = flow_opts.resolve();
            const Dataset data = flow_data.empty() ? prepare_data(c, false, true).target_train : load_dataset(flow_data);
            std::vector<FlowStats> stats(data.size());
            run_parallel(
                [&](std::size_t begin, std::size_t step) {
                    for (std::size_t i = begin; i < data.size(); i += step)
                        stats[i] = flow_magnitude_stats(data.samples[i].frames, c.frames.flow);
                },
                c.threads);
            std::ostringstream csv;
            csv.precision(17);
            csv << "id,label,mean,variance,selected_frames\n";
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto& s = data.samples[i];
                const Index keep = std::min<Index>(c.frames.spatial_frames, static_cast<Index>(s.frames.size()));
                std::string sel;
                for (Index f : select_frames(stats[i].pair_means, keep)) sel += (sel.empty() ? "" : " ") + std::to_string(f);
                csv << s.id << "," << data.class_names[static_cast<std::size_t>(s.label)] << "," << stats[i].mean << ","
                    << stats[i].variance << "," << sel << "\n";
            }
            write_text(fs::path(flow_opts.out) / "flow_stats.csv", csv.str());
        } else if (*src) {
            const RunConfig c = src_opts.resolve();
            const PhaseData d = prepare_data(c, true, false);
            log("source phase: " + std::to_string(d.source_train.size()) + " sequences");
            const SourceRun r = run_source_phase(c, d.source_train, d.source_test);
            const fs::path out(src_opts.out);
            io::write_file((out / "source.sgcm").string(), serialize_model(r.model));
            write_text(out / "source_history.csv", r.history.to_csv());
            if (r.test) write_report(out, "source_eval", *r.test);
        } else if (*ft) {
            std::vector<std::string> extra;
            if (!unfreeze.empty()) {
                if (unfreeze != "all") throw InvalidConfig("--unfreeze accepts only 'all'");
                extra.push_back("train.target.unfreeze=true");
            }
            const RunConfig c = ft_opts.resolve(extra);
            const PhaseData d = prepare_data(c, false, true);
            TransferModel m = ft_model.empty() ? fresh_model(c) : load_model(ft_model, c);
            const auto train = videos_of(c, d.target_train);
            const auto test = videos_of(c, d.target_test);
            const fs::path out(ft_opts.out);
            if (c.folds >= 2) {
                std::vector<VideoInput> all = train;
                all.insert(all.end(), test.begin(), test.end());
                const auto acc = run_kfold(c, m, all, c.folds);
                std::ostringstream csv;
                csv.precision(17);
                csv << "fold,accuracy\n";
                for (std::size_t f = 0; f < acc.size(); ++f) csv << f << "," << acc[f] << "\n";
                write_text(out / "kfold.csv", csv.str());
            }
            const TargetRun r = run_target_phase(c, m, train, test, d.target_train.class_names, c.target, c.branches);
            io::write_file((out / "target.sgcm").string(), serialize_model(m));
            write_text(out / "target_history.csv", r.history.to_csv());
            write_report(out, "eval", r.report);
            log("test accuracy " + std::to_string(r.report.accuracy));
        } else if (*ev) {
            const RunConfig c = ev_opts.resolve();
            const PhaseData d = prepare_data(c, false, true);
            const TransferModel m = load_model(ev_model, c);
            const EvalReport r = evaluate(m, videos_of(c, d.target_test), c.branches, d.target_test.class_names, c.threads);
            write_report(fs::path(ev_opts.out), "eval", r);
            log("test accuracy " + std::to_string(r.accuracy));
        } else if (*ab) {
            const auto rows = parse_ablation_rows(ab_rows);
            const RunConfig c = ab_opts.resolve();
            const PhaseData d = prepare_data(c, false, true);
            const TransferModel m = ab_model.empty() ? fresh_model(c) : load_model(ab_model, c);
            const auto results = run_ablation(c, m, videos_of(c, d.target_train), videos_of(c, d.target_test),
                                              d.target_train.class_names, rows);
            write_text(fs::path(ab_opts.out) / "ablation.csv", ablation_csv(results));
        } else {
            std::cout << app.help();
        }
    } catch (const Error& e) {
        const int code = exit_code(e);
        report_error(e.kind(), code, e.what());
        return code;
    } catch (const std::exception& e) {
        report_error("internal", 1, e.what());
        return 1;
    }
    return 0;
}
