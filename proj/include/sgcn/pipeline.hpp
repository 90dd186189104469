#pragma once

// End-to-end runs shared by the command-line tool and the acceptance
// experiments: data preparation, source pre-training, target fine-tuning,
// ablation rows and k-fold evaluation.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgcn/config.hpp"
#include "sgcn/data.hpp"
#include "sgcn/model.hpp"
#include "sgcn/train.hpp"

namespace sgcn {

struct PhaseData {
    Dataset source_train, source_test;
    Dataset target_train, target_test;
};

namespace detail {

inline void check_dataset(const Dataset& d, Index n_classes, const ModelConfig& m, const std::string& what) {
    require<DataError>(!d.empty(), what + " set is empty");
    require<DataError>(d.n_classes() == n_classes, what + " set has " + std::to_string(d.n_classes()) +
                                                       " classes but the network expects " + std::to_string(n_classes));
    const Image& f = d.samples.front().frames.front();
    require<DataError>(f.rows() == m.height && f.cols() == m.width,
                       what + " frames are " + std::to_string(f.rows()) + "x" + std::to_string(f.cols()) +
                           " but the network expects " + std::to_string(m.height) + "x" + std::to_string(m.width));
}

}  // namespace detail

/// Synthetic sets unless directories are configured. A loaded source set is
/// used whole for training; a loaded target set is split unless a separate
/// test directory is given.
inline PhaseData prepare_data(const RunConfig& c, bool need_source = true, bool need_target = true) {
    PhaseData out;
    const std::uint64_t split_seed = sub_seed(sub_seed(c.seed, SeedStream::data), 3u);
    if (need_source) {
        if (c.data.source_dir.empty()) {
            auto s = generate_synthetic(c.synthetic(true));
            out.source_train = std::move(s.train);
            out.source_test = std::move(s.test);
        } else {
            out.source_train = load_dataset(c.data.source_dir);
        }
        detail::check_dataset(out.source_train, c.model.source_classes, c.model, "source");
    }
    if (need_target) {
        if (c.data.target_dir.empty()) {
            auto s = generate_synthetic(c.synthetic(false));
            out.target_train = std::move(s.train);
            out.target_test = std::move(s.test);
        } else if (!c.data.target_test_dir.empty()) {
            out.target_train = load_dataset(c.data.target_dir);
            out.target_test = load_dataset(c.data.target_test_dir);
        } else {
            auto s = stratified_split(load_dataset(c.data.target_dir), c.data.test_fraction, split_seed);
            out.target_train = std::move(s.train);
            out.target_test = std::move(s.test);
        }
        detail::check_dataset(out.target_train, c.model.n_classes, c.model, "target training");
        detail::check_dataset(out.target_test, c.model.n_classes, c.model, "target test");
    }
    return out;
}

inline TransferModel fresh_model(const RunConfig& c) {
    return make_transfer_model(c.model, sub_seed(c.seed, SeedStream::init));
}

struct SourceRun {
    TransferModel model;
    History history;
    std::optional<EvalReport> test;  // held-out source frames, when there are any
};

inline SourceRun run_source_phase(const RunConfig& c, const Dataset& train, const Dataset& test) {
    SourceRun r{fresh_model(c), {}, std::nullopt};
    const SourceData data = make_source_data(train, c.frames, c.model.input_channels, c.threads);
    r.history = train_source(r.model, data, c.source);
    if (!test.empty()) r.test = evaluate_source(r.model, make_source_data(test, c.frames, c.model.input_channels, c.threads));
    return r;
}

struct TargetRun {
    History history;
    EvalReport report;
};

/// Fine-tunes `m` in place and evaluates it on the test videos.
inline TargetRun run_target_phase(const RunConfig& c, TransferModel& m, std::span<const VideoInput> train,
                                  std::span<const VideoInput> test, const std::vector<std::string>& class_names,
                                  const TrainConfig& cfg, Branches branches) {
    TargetRun r;
    r.history = fine_tune_target(m, train, branches, cfg);
    r.report = evaluate(m, test, branches, class_names, c.threads);
    return r;
}

// -----------------------------------------------------------------------------
// Ablation
// -----------------------------------------------------------------------------

struct AblationRow {
    std::string name;  // e.g. "spatial_ce"
    Branches branches = Branches::fused;
    LossKind loss = LossKind::cross_entropy;
};

inline AblationRow parse_ablation_row(const std::string& name) {
    const auto cut = name.rfind('_');
    require<InvalidConfig>(cut != std::string::npos, "ablation row '" + name + "' must look like <branches>_<ce|fl>");
    const std::string loss = name.substr(cut + 1);
    require<InvalidConfig>(loss == "ce" || loss == "fl", "ablation row '" + name + "': loss must be ce or fl");
    return {name, branches_from_string(name.substr(0, cut)), loss == "fl" ? LossKind::focal : LossKind::cross_entropy};
}

inline std::vector<AblationRow> parse_ablation_rows(const std::string& list) {
    std::vector<AblationRow> rows;
    std::stringstream in(list);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) rows.push_back(parse_ablation_row(item));
    require<InvalidConfig>(!rows.empty(), "ablation needs at least one row");
    return rows;
}

struct AblationResult {
    AblationRow row;
    History history;
    EvalReport report;
};

/// Every row restarts from `pretrained` with the same fresh head, so rows
/// differ only in branches and loss.
inline std::vector<AblationResult> run_ablation(const RunConfig& c, const TransferModel& pretrained,
                                                std::span<const VideoInput> train, std::span<const VideoInput> test,
                                                const std::vector<std::string>& class_names,
                                                const std::vector<AblationRow>& rows) {
    std::vector<AblationResult> out;
    std::map<Branches, std::pair<VideoFeatures, VideoFeatures>> cache;
    const std::uint64_t head_seed = sub_seed(c.target.seed, 0xAB1Au);
    for (const auto& row : rows) {
        TransferModel m = pretrained;
        reset_head(m, head_seed);
        TrainConfig cfg = c.target;
        cfg.loss = row.loss;
        AblationResult res{row, {}, {}};
        if (cfg.unfreeze) {
            const auto tr = run_target_phase(c, m, train, test, class_names, cfg, row.branches);
            res.history = tr.history;
            res.report = tr.report;
        } else {
            auto it = cache.find(row.branches);
            if (it == cache.end())
                it = cache.emplace(row.branches, std::make_pair(extract_features(m, train, row.branches, c.threads),
                                                                extract_features(m, test, row.branches, c.threads)))
                         .first;
            res.history = train_head(m.head, it->second.first, cfg);
            res.report = evaluate_head(m.head, it->second.second, class_names);
        }
        out.push_back(std::move(res));
    }
    return out;
}

inline std::string ablation_csv(const std::vector<AblationResult>& results) {
    std::ostringstream out;
    out.precision(17);
    out << "row,branches,loss,epochs,accuracy\n";
    for (const auto& r : results)
        out << r.row.name << "," << to_string(r.row.branches) << "," << to_string(r.row.loss) << ","
            << r.history.epochs.size() << "," << r.report.accuracy << "\n";
    return out.str();
}

// -----------------------------------------------------------------------------
// k-fold
// -----------------------------------------------------------------------------

/// Stratified k-fold over `videos`: each fold trains a fresh head (same seed)
/// on the remaining folds and reports its accuracy.
inline std::vector<double> run_kfold(const RunConfig& c, const TransferModel& pretrained,
                                     std::span<const VideoInput> videos, int k) {
    std::vector<int> labels;
    for (const auto& v : videos) labels.push_back(v.label);
    const auto folds = stratified_kfold(labels, k, sub_seed(c.target.seed, 0xF01Du));
    std::vector<double> acc;
    for (const auto& held : folds) {
        std::vector<VideoInput> train, test;
        std::size_t h = 0;
        for (std::size_t i = 0; i < videos.size(); ++i) {
            if (h < held.size() && held[h] == i) {
                test.push_back(videos[i]);
                ++h;
            } else {
                train.push_back(videos[i]);
            }
        }
        TransferModel m = pretrained;
        reset_head(m, sub_seed(c.target.seed, 0xAB1Au));
        acc.push_back(run_target_phase(c, m, train, test, {}, c.target, c.branches).report.accuracy);
    }
    return acc;
}

// -----------------------------------------------------------------------------
// Artifacts
// -----------------------------------------------------------------------------

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
}

inline void write_report(const std::filesystem::path& dir, const std::string& stem, const EvalReport& r) {
    write_text(dir / (stem + ".json"), r.to_json().dump(2) + "\n");
    write_text(dir / (stem + "_confusion.csv"), r.confusion_csv());
}

}  // namespace sgcn
