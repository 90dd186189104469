#pragma once

// Labeled image sequences: the synthetic moving-blob generator, PGM frame
// I/O and the on-disk dataset layout root/<class>/<sample>/frame_0001.pgm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgcn/core.hpp"
#include "sgcn/optical_flow.hpp"

namespace sgcn {

struct SequenceSample {
    std::string id;
    std::vector<Image> frames;
    int label = 0;

    friend bool operator==(const SequenceSample&, const SequenceSample&) = default;
};

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<SequenceSample> samples;

    Index n_classes() const noexcept { return static_cast<Index>(class_names.size()); }
    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// -----------------------------------------------------------------------------
// PGM (P5, 8-bit)
// -----------------------------------------------------------------------------

inline std::uint8_t quantize(double x) noexcept {
    return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
}

inline double dequantize(std::uint8_t q) noexcept { return static_cast<double>(q) / 255.0; }

inline void write_pgm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
    std::vector<char> px(static_cast<std::size_t>(img.size()));
    for (Index i = 0; i < img.size(); ++i) px[static_cast<std::size_t>(i)] = static_cast<char>(quantize(img.data()[i]));
    out.write(px.data(), static_cast<std::streamsize>(px.size()));
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open frame '" + path + "'");
    auto token = [&]() {
        std::string t;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                t.push_back(c);
                break;
            }
        }
        while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
        return t;
    };
    if (token() != "P5") throw DataError("'" + path + "' is not a binary PGM (P5) file");
    long w = 0, h = 0, maxval = 0;
    try {
        w = std::stol(token());
        h = std::stol(token());
        maxval = std::stol(token());
    } catch (const std::exception&) {
        throw DataError("malformed PGM header in '" + path + "'");
    }
    if (w <= 0 || h <= 0) throw DataError("invalid PGM dimensions in '" + path + "'");
    if (maxval != 255) throw DataError("unsupported PGM maxval " + std::to_string(maxval) + " in '" + path + "'");
    std::vector<char> px(static_cast<std::size_t>(w * h));
    in.read(px.data(), static_cast<std::streamsize>(px.size()));
    if (in.gcount() != static_cast<std::streamsize>(px.size())) throw DataError("truncated pixel data in '" + path + "'");
    Image img(h, w);
    for (Index i = 0; i < img.size(); ++i)
        img.data()[i] = dequantize(static_cast<std::uint8_t>(px[static_cast<std::size_t>(i)]));
    return img;
}

// -----------------------------------------------------------------------------
// Synthetic generator
// -----------------------------------------------------------------------------

enum class Variant { macro, micro };

inline std::string to_string(Variant v) { return v == Variant::macro ? "macro" : "micro"; }

inline Variant variant_from_string(const std::string& s) {
    if (s == "macro") return Variant::macro;
    if (s == "micro") return Variant::micro;
    throw InvalidConfig("variant must be 'macro' or 'micro', got '" + s + "'");
}

/// Each class moves a Gaussian blob from the image centre in its own
/// direction (angle 2*pi*c/n_classes) at a per-frame speed drawn from its own
/// amplitude range.
struct SyntheticSpec {
    Index n_classes = 4;
    Index samples_per_class = 40;
    Index height = 32;
    Index width = 32;
    Index frames = 16;
    std::vector<std::pair<double, double>> amplitude;  // px/frame per class; empty = default ladder
    std::pair<double, double> intensity{0.6, 1.0};     // blob peak
    std::vector<double> class_ratios;                  // count multiplier per class; empty = balanced
    double noise_sigma = 0.01;
    double micro_noise = 0.02;     // extra noise for the micro variant
    double micro_scale = 0.25;     // amplitude factor for the micro variant
    double blob_width = 2.0;
    double start_jitter = 0.5;
    double test_fraction = 0.2;
    Variant variant = Variant::macro;
    std::uint64_t seed = 0;

    std::vector<std::pair<double, double>> amplitudes() const {
        if (!amplitude.empty()) return amplitude;
        std::vector<std::pair<double, double>> out;
        const double step = 0.4 / static_cast<double>(std::max<Index>(n_classes, 1));
        for (Index c = 0; c < n_classes; ++c) {
            const double lo = 0.35 + step * static_cast<double>(c);
            out.emplace_back(lo, lo + 0.5 * step);
        }
        return out;
    }

    std::vector<Index> class_counts() const {
        std::vector<Index> out;
        for (Index c = 0; c < n_classes; ++c) {
            const double r = class_ratios.empty() ? 1.0 : class_ratios[static_cast<std::size_t>(c)];
            out.push_back(std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(samples_per_class) * r))));
        }
        return out;
    }

    double scale() const noexcept { return variant == Variant::micro ? micro_scale : 1.0; }
    double noise() const noexcept { return variant == Variant::micro ? noise_sigma + micro_noise : noise_sigma; }

    void validate() const {
        require<InvalidConfig>(n_classes >= 1, "synthetic: n_classes must be >= 1");
        require<InvalidConfig>(samples_per_class >= 1, "synthetic: samples_per_class must be >= 1");
        require<InvalidConfig>(frames >= 2, "synthetic: need at least 2 frames");
        require<InvalidConfig>(height >= 4 && width >= 4, "synthetic: resolution must be at least 4x4");
        require<InvalidConfig>(class_ratios.empty() || static_cast<Index>(class_ratios.size()) == n_classes,
                               "synthetic: class_ratios needs one entry per class");
        for (double r : class_ratios) require<InvalidConfig>(r > 0.0, "synthetic: class ratios must be positive");
        const auto amps = amplitudes();
        require<InvalidConfig>(static_cast<Index>(amps.size()) == n_classes,
                               "synthetic: amplitude needs one range per class");
        for (std::size_t a = 0; a < amps.size(); ++a) {
            require<InvalidConfig>(amps[a].first >= 0.0 && amps[a].first <= amps[a].second,
                                   "synthetic: amplitude range must satisfy 0 <= lo <= hi");
            for (std::size_t b = 0; b < a; ++b)
                require<InvalidConfig>(amps[a].second < amps[b].first || amps[b].second < amps[a].first,
                                       "synthetic: amplitude ranges of classes " + std::to_string(b) + " and " +
                                           std::to_string(a) + " overlap");
        }
        require<InvalidConfig>(intensity.first > 0.0 && intensity.first <= intensity.second && intensity.second <= 1.0,
                               "synthetic: intensity range must lie in (0, 1]");
        require<InvalidConfig>(noise_sigma >= 0.0 && micro_noise >= 0.0, "synthetic: noise must be >= 0");
        require<InvalidConfig>(micro_scale > 0.0, "synthetic: micro_scale must be > 0");
        require<InvalidConfig>(blob_width > 0.0 && start_jitter >= 0.0, "synthetic: invalid blob geometry");
        require<InvalidConfig>(test_fraction >= 0.0 && test_fraction < 1.0, "synthetic: test_fraction must be in [0, 1)");
        double hi = 0.0;
        for (const auto& r : amps) hi = std::max(hi, r.second);
        const double reach = hi * scale() * static_cast<double>(frames - 1) + start_jitter + 1.5 * blob_width;
        const double room = 0.5 * static_cast<double>(std::min(height, width) - 1);
        require<InvalidConfig>(reach <= room, "synthetic: a " + std::to_string(height) + "x" + std::to_string(width) +
                                                  " frame is too small for the blob to travel " +
                                                  std::to_string(reach) + " px from the centre");
    }
};

/// Frame `f` of a blob starting at (x0, y0) and moving by (dx, dy) per frame.
inline Image render_blob(Index height, Index width, double x0, double y0, double dx, double dy, Index f, double peak,
                         double blob_width, double noise, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double cx = x0 + dx * static_cast<double>(f);
    const double cy = y0 + dy * static_cast<double>(f);
    const double inv = 1.0 / (2.0 * blob_width * blob_width);
    Image img(height, width);
    for (Index r = 0; r < height; ++r)
        for (Index c = 0; c < width; ++c) {
            const double d2 = (static_cast<double>(c) - cx) * (static_cast<double>(c) - cx) +
                              (static_cast<double>(r) - cy) * (static_cast<double>(r) - cy);
            double v = peak * std::exp(-d2 * inv);
            if (noise > 0.0) v += noise * gauss(rng);
            img(r, c) = dequantize(quantize(v));
        }
    return img;
}

/// Class-`label` sequence number `index`; fully determined by (spec, label, index).
inline SequenceSample synthetic_sample(const SyntheticSpec& spec, int label, Index index) {
    const auto amps = spec.amplitudes();
    std::mt19937_64 rng(sub_seed(sub_seed(spec.seed, SeedStream::data),
                                 static_cast<std::uint64_t>(label) * 1000003ull + static_cast<std::uint64_t>(index)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto [lo, hi] = amps[static_cast<std::size_t>(label)];
    const double amp = (lo + (hi - lo) * unit(rng)) * spec.scale();
    const double peak = spec.intensity.first + (spec.intensity.second - spec.intensity.first) * unit(rng);
    const double x0 = 0.5 * static_cast<double>(spec.width - 1) + spec.start_jitter * (2.0 * unit(rng) - 1.0);
    const double y0 = 0.5 * static_cast<double>(spec.height - 1) + spec.start_jitter * (2.0 * unit(rng) - 1.0);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(spec.n_classes);
    const double dx = amp * std::cos(angle);
    const double dy = amp * std::sin(angle);

    SequenceSample s;
    s.id = to_string(spec.variant) + "_c" + std::to_string(label) + "_" + std::to_string(index);
    s.label = label;
    for (Index f = 0; f < spec.frames; ++f)
        s.frames.push_back(render_blob(spec.height, spec.width, x0, y0, dx, dy, f, peak, spec.blob_width, spec.noise(), rng));
    return s;
}

inline std::vector<std::string> synthetic_class_names(Index n_classes) {
    std::vector<std::string> names;
    const int digits = static_cast<int>(std::to_string(std::max<Index>(n_classes - 1, 0)).size());
    for (Index c = 0; c < n_classes; ++c) {
        std::string num = std::to_string(c);
        names.push_back("class" + std::string(static_cast<std::size_t>(digits) - num.size(), '0') + num);
    }
    return names;
}

struct SplitDataset {
    Dataset train;
    Dataset test;
};

/// Stratified split: per class, round(test_fraction * count) samples chosen
/// by a seeded shuffle go to the test set. Sample order is kept.
inline SplitDataset stratified_split(const Dataset& data, double test_fraction, std::uint64_t seed) {
    require<InvalidConfig>(test_fraction >= 0.0 && test_fraction < 1.0, "split: test_fraction must be in [0, 1)");
    SplitDataset out{{data.class_names, {}}, {data.class_names, {}}};
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> is_test(data.samples.size(), 0);
    for (Index c = 0; c < data.n_classes(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < data.samples.size(); ++i)
            if (data.samples[i].label == c) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < n_test; ++k) is_test[members[k]] = 1;
    }
    for (std::size_t i = 0; i < data.samples.size(); ++i)
        (is_test[i] ? out.test : out.train).samples.push_back(data.samples[i]);
    return out;
}

inline SplitDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Dataset all{synthetic_class_names(spec.n_classes), {}};
    const auto counts = spec.class_counts();
    for (Index c = 0; c < spec.n_classes; ++c)
        for (Index i = 0; i < counts[static_cast<std::size_t>(c)]; ++i)
            all.samples.push_back(synthetic_sample(spec, static_cast<int>(c), i));
    return stratified_split(all, spec.test_fraction, sub_seed(sub_seed(spec.seed, SeedStream::data), 0x5B117ull));
}

// -----------------------------------------------------------------------------
// Disk layout
// -----------------------------------------------------------------------------

namespace detail {

inline std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool directories) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Writes root/<class>/<id>/frame_0001.pgm ... plus labels.json with the
/// class order.
inline void save_dataset(const Dataset& data, const std::string& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw DataError("cannot create directory '" + root + "': " + ec.message());
    for (const auto& name : data.class_names) fs::create_directories(fs::path(root) / name);
    for (const auto& s : data.samples) {
        require<DataError>(s.label >= 0 && s.label < data.n_classes(), "save: sample '" + s.id + "' has an invalid label");
        const fs::path dir = fs::path(root) / data.class_names[static_cast<std::size_t>(s.label)] / s.id;
        fs::create_directories(dir);
        for (std::size_t f = 0; f < s.frames.size(); ++f) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%04zu.pgm", f + 1);
            write_pgm((dir / name).string(), s.frames[f]);
        }
    }
    nlohmann::json manifest;
    manifest["classes"] = data.class_names;
    std::ofstream out(fs::path(root) / "labels.json");
    out << manifest.dump(2) << "\n";
}

/// Reads the layout written by save_dataset. Classes are the sorted class
/// directories unless labels.json lists them ("classes"); labels.json may
/// also map sample ids to class names ("labels").
inline Dataset load_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset root '" + root + "' is not a directory");
    Dataset data;
    std::vector<fs::path> class_dirs = detail::sorted_entries(root, true);
    for (const auto& d : class_dirs) data.class_names.push_back(d.filename().string());

    nlohmann::json overrides = nlohmann::json::object();
    const fs::path manifest = fs::path(root) / "labels.json";
    if (fs::exists(manifest)) {
        try {
            std::ifstream in(manifest);
            const auto j = nlohmann::json::parse(in);
            if (j.contains("classes")) data.class_names = j.at("classes").get<std::vector<std::string>>();
            if (j.contains("labels")) overrides = j.at("labels");
        } catch (const nlohmann::json::exception& e) {
            throw DataError("cannot parse '" + manifest.string() + "': " + e.what());
        }
    }
    auto label_of = [&](const std::string& name) {
        const auto it = std::find(data.class_names.begin(), data.class_names.end(), name);
        if (it == data.class_names.end()) throw DataError("class '" + name + "' is not listed in '" + manifest.string() + "'");
        return static_cast<int>(it - data.class_names.begin());
    };

    Index height = -1, width = -1;
    for (const auto& cdir : class_dirs) {
        const auto sample_dirs = detail::sorted_entries(cdir, true);
        if (sample_dirs.empty()) throw DataError("class directory '" + cdir.string() + "' contains no samples");
        for (const auto& sdir : sample_dirs) {
            SequenceSample s;
            s.id = sdir.filename().string();
            s.label = overrides.contains(s.id) ? label_of(overrides.at(s.id).get<std::string>())
                                               : label_of(cdir.filename().string());
            for (const auto& file : detail::sorted_entries(sdir, false)) {
                if (file.extension() != ".pgm") continue;
                Image img = read_pgm(file.string());
                if (height < 0) {
                    height = img.rows();
                    width = img.cols();
                } else if (img.rows() != height || img.cols() != width) {
                    throw DataError("frame '" + file.string() + "' is " + std::to_string(img.rows()) + "x" +
                                    std::to_string(img.cols()) + ", expected " + std::to_string(height) + "x" +
                                    std::to_string(width));
                }
                s.frames.push_back(std::move(img));
            }
            if (s.frames.size() < 2)
                throw DataError("sample directory '" + sdir.string() + "' has fewer than 2 frames");
            data.samples.push_back(std::move(s));
        }
    }
    if (data.samples.empty()) throw DataError("dataset root '" + root + "' contains no samples");
    return data;
}

// -----------------------------------------------------------------------------
// Class balance
// -----------------------------------------------------------------------------

struct ImbalanceProfile {
    std::vector<Index> counts;
    double ratio = 1.0;  // max count / min count
};

inline ImbalanceProfile imbalance_profile(std::vector<Index> counts) {
    require(!counts.empty(), "imbalance_profile: no classes");
    ImbalanceProfile p;
    p.counts = std::move(counts);
    const auto [lo, hi] = std::minmax_element(p.counts.begin(), p.counts.end());
    p.ratio = *lo > 0 ? static_cast<double>(*hi) / static_cast<double>(*lo) : std::numeric_limits<double>::infinity();
    return p;
}

inline ImbalanceProfile imbalance_profile(const Dataset& data) {
    require(!data.empty(), "imbalance_profile: empty dataset");
    std::vector<Index> counts(static_cast<std::size_t>(std::max<Index>(data.n_classes(), 1)), 0);
    for (const auto& s : data.samples) ++counts[static_cast<std::size_t>(s.label)];
    return imbalance_profile(std::move(counts));
}

}  // namespace sgcn
