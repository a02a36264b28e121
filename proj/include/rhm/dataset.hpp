#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rhm/dsp.hpp"
#include "rhm/io.hpp"
#include "rhm/rng.hpp"

namespace rhm {

constexpr int kNumClasses = 4;
constexpr char kDatasetMagic[9] = "RHMDAT01";

/// A labeled collection of range-spectrum matrices with uniform dimensions.
struct Dataset {
    int n_frames = 0;
    int n_bins = 0;
    std::vector<SpectrumMatrix> samples;

    int size() const { return static_cast<int>(samples.size()); }

    std::vector<int> class_counts() const {
        std::vector<int> counts(kNumClasses, 0);
        for (const auto& s : samples) counts.at(static_cast<std::size_t>(s.label)) += 1;
        return counts;
    }

    /// Sample indices grouped by class label, in dataset order.
    std::vector<std::vector<int>> indices_by_class() const {
        std::vector<std::vector<int>> by(kNumClasses);
        for (int i = 0; i < size(); ++i)
            by.at(static_cast<std::size_t>(samples[static_cast<std::size_t>(i)].label))
                .push_back(i);
        return by;
    }

    void validate() const {
        for (const auto& s : samples) {
            if (s.label < 0 || s.label >= kNumClasses)
                throw FormatError("dataset: label out of range");
            if (s.n_frames != n_frames || s.n_bins != n_bins)
                throw FormatError("dataset: inconsistent matrix dimensions");
            if (s.data.size() != static_cast<std::size_t>(n_frames) * static_cast<std::size_t>(n_bins))
                throw FormatError("dataset: matrix size does not match dimensions");
        }
    }
};

struct DatasetSplits {
    Dataset train, val, test;
};

namespace detail {

/// Global split totals: floor each fraction, leftover samples go to train.
inline std::array<std::int64_t, 3> split_totals(std::int64_t n, double train_frac, double val_frac,
                                                double test_frac) {
    const auto t = static_cast<std::int64_t>(std::floor(train_frac * static_cast<double>(n)));
    const auto v = static_cast<std::int64_t>(std::floor(val_frac * static_cast<double>(n)));
    const auto e = static_cast<std::int64_t>(std::floor(test_frac * static_cast<double>(n)));
    return {t + (n - t - v - e), v, e};
}

/// Distributes a total across classes proportionally to class sizes:
/// each class gets floor(total * n_c / n), and the shortfall is handed to
/// the classes with the largest fractional parts (ties to the lower class
/// index). Every class ends within one sample of its exact share.
inline std::vector<int> apportion(const std::vector<int>& class_sizes, std::int64_t total) {
    const std::int64_t n = std::accumulate(class_sizes.begin(), class_sizes.end(), std::int64_t{0});
    if (n == 0) throw std::invalid_argument("apportion: empty dataset");
    std::vector<int> out(class_sizes.size());
    std::vector<std::pair<double, int>> rema;  // (-remainder, class) for stable sort
    std::int64_t assigned = 0;
    for (std::size_t c = 0; c < class_sizes.size(); ++c) {
        const double ideal = static_cast<double>(total) * class_sizes[c] / static_cast<double>(n);
        out[c] = static_cast<int>(std::floor(ideal));
        assigned += out[c];
        rema.emplace_back(-(ideal - std::floor(ideal)), static_cast<int>(c));
    }
    std::sort(rema.begin(), rema.end());
    for (std::int64_t k = 0; k < total - assigned; ++k)
        out[static_cast<std::size_t>(rema[static_cast<std::size_t>(k)].second)] += 1;
    return out;
}

inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.index(i)]);
}

}  // namespace detail

/// Splits into train/validation/test with per-class proportions preserved.
/// Totals follow floor-then-remainder-to-train; each split's total is then
/// apportioned across classes by largest remainder, and samples are drawn
/// from a seeded per-class shuffle. Deterministic for a given seed.
inline DatasetSplits stratified_split(const Dataset& ds, double train_frac, double val_frac,
                                      double test_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0) || !(val_frac >= 0.0) || !(test_frac >= 0.0))
        throw std::invalid_argument("stratified_split: fractions must be non-negative, train positive");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw std::invalid_argument("stratified_split: fractions must sum to 1");
    if (ds.size() == 0) throw std::invalid_argument("stratified_split: empty dataset");

    const auto totals = detail::split_totals(ds.size(), train_frac, val_frac, test_frac);
    const std::vector<int> counts = ds.class_counts();
    std::vector<int> val_per = detail::apportion(counts, totals[1]);
    std::vector<int> test_per = detail::apportion(counts, totals[2]);
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (val_per[c] + test_per[c] > counts[c])
            throw std::invalid_argument("stratified_split: class too small for requested fractions");

    DatasetSplits out;
    for (Dataset* part : {&out.train, &out.val, &out.test}) {
        part->n_frames = ds.n_frames;
        part->n_bins = ds.n_bins;
    }
    auto by_class = ds.indices_by_class();
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        detail::shuffle_indices(by_class[c], rng);
        const int nv = val_per[c], nt = test_per[c];
        const int ntr = counts[c] - nv - nt;
        int k = 0;
        for (int i = 0; i < ntr; ++i)
            out.train.samples.push_back(ds.samples[static_cast<std::size_t>(by_class[c][static_cast<std::size_t>(k++)])]);
        for (int i = 0; i < nv; ++i)
            out.val.samples.push_back(ds.samples[static_cast<std::size_t>(by_class[c][static_cast<std::size_t>(k++)])]);
        for (int i = 0; i < nt; ++i)
            out.test.samples.push_back(ds.samples[static_cast<std::size_t>(by_class[c][static_cast<std::size_t>(k++)])]);
    }
    return out;
}

/// Keeps a stratified fraction of the dataset: round(f*n) samples overall,
/// floor(f*n_c) or ceil(f*n_c) per class, drawn from a seeded per-class
/// shuffle.
inline Dataset stratified_subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("stratified_subsample: fraction must lie in (0, 1]");
    const std::vector<int> counts = ds.class_counts();
    const auto total = static_cast<std::int64_t>(
        std::llround(fraction * static_cast<double>(ds.size())));
    std::vector<int> keep = detail::apportion(counts, std::max<std::int64_t>(total, 1));

    Dataset out;
    out.n_frames = ds.n_frames;
    out.n_bins = ds.n_bins;
    auto by_class = ds.indices_by_class();
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (keep[c] > counts[c]) throw std::invalid_argument("stratified_subsample: class too small");
        Rng rng(derive_seed(seed, 0x5ab5a317ULL + static_cast<std::uint64_t>(c)));
        detail::shuffle_indices(by_class[c], rng);
        for (int i = 0; i < keep[c]; ++i)
            out.samples.push_back(ds.samples[static_cast<std::size_t>(by_class[c][static_cast<std::size_t>(i)])]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary dataset file
//
// Layout: 8-byte magic, u32 little-endian JSON header length, the UTF-8
// JSON header, one unsigned byte label per sample, then all matrices as
// 32-bit little-endian floats, row-major, frame-major within each sample.
// ---------------------------------------------------------------------------

inline std::string encode_dataset(const Dataset& ds) {
    ds.validate();
    nlohmann::json header;
    header["class_counts"] = ds.class_counts();
    header["format_version"] = 1;
    header["n_bins"] = ds.n_bins;
    header["n_classes"] = kNumClasses;
    header["n_frames"] = ds.n_frames;
    header["n_samples"] = ds.size();
    const std::string hj = header.dump();

    std::string out;
    out.reserve(8 + 4 + hj.size() + ds.samples.size() * (1 + static_cast<std::size_t>(ds.n_frames) *
                                                                 static_cast<std::size_t>(ds.n_bins) * 4));
    out.append(kDatasetMagic, 8);
    io::put_u32(out, static_cast<std::uint32_t>(hj.size()));
    out += hj;
    for (const auto& s : ds.samples) out.push_back(static_cast<char>(s.label));
    for (const auto& s : ds.samples)
        for (double v : s.data) io::put_f32(out, static_cast<float>(v));
    return out;
}

inline Dataset decode_dataset(const std::string& bytes) {
    io::Reader r(bytes);
    if (r.bytes(8) != std::string(kDatasetMagic, 8)) throw FormatError("dataset: bad magic");
    const std::uint32_t hlen = r.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: malformed header: ") + e.what());
    }

    Dataset ds;
    int n_samples = 0;
    try {
        if (header.at("format_version").get<int>() != 1)
            throw FormatError("dataset: unsupported format version");
        if (header.at("n_classes").get<int>() != kNumClasses)
            throw FormatError("dataset: unsupported class count");
        ds.n_frames = header.at("n_frames").get<int>();
        ds.n_bins = header.at("n_bins").get<int>();
        n_samples = header.at("n_samples").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: incomplete header: ") + e.what());
    }
    if (ds.n_frames <= 0 || ds.n_bins <= 0 || n_samples < 0)
        throw FormatError("dataset: non-positive dimensions");

    std::vector<int> labels(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        labels[static_cast<std::size_t>(i)] = r.u8();
        if (labels[static_cast<std::size_t>(i)] >= kNumClasses)
            throw FormatError("dataset: label out of range");
    }
    const std::size_t cells = static_cast<std::size_t>(ds.n_frames) * static_cast<std::size_t>(ds.n_bins);
    if (r.remaining() != static_cast<std::size_t>(n_samples) * cells * 4)
        throw FormatError("dataset: payload length does not match header");
    ds.samples.reserve(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        SpectrumMatrix m;
        m.n_frames = ds.n_frames;
        m.n_bins = ds.n_bins;
        m.label = labels[static_cast<std::size_t>(i)];
        m.norm_min = 0.0;
        m.norm_max = 1.0;
        m.data.resize(cells);
        for (std::size_t k = 0; k < cells; ++k) m.data[k] = static_cast<double>(r.f32());
        ds.samples.push_back(std::move(m));
    }

    const std::vector<int> declared = header.value("class_counts", std::vector<int>{});
    if (!declared.empty() && declared != ds.class_counts())
        throw FormatError("dataset: class counts in header do not match labels");
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    io::atomic_write_file(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    return decode_dataset(io::read_file(path));
}

}  // namespace rhm
