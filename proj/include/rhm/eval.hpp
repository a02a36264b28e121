#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rhm/dataset.hpp"
#include "rhm/siamese.hpp"

namespace rhm {

/// First index of the maximum value: ties resolve to the lowest index.
inline int argmax_lowest(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("argmax_lowest: empty scores");
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
    return best;
}

/// Exactly one support sample per class, labels covering {0,1,2,3}.
struct SupportSet {
    std::vector<SpectrumMatrix> entries;

    void validate() const {
        if (entries.size() != static_cast<std::size_t>(kNumClasses))
            throw std::invalid_argument("SupportSet: need one entry per class");
        std::array<int, kNumClasses> seen{};
        for (const auto& e : entries) {
            if (e.label < 0 || e.label >= kNumClasses)
                throw std::invalid_argument("SupportSet: label out of range");
            seen[static_cast<std::size_t>(e.label)] += 1;
        }
        for (int c : seen)
            if (c != 1) throw std::invalid_argument("SupportSet: labels must cover every class once");
    }
};

/// One-shot decision: the class of the support sample most similar to the
/// query, ties to the lowest class index.
inline int classify_one_shot(SiameseModel& model, const SpectrumMatrix& query,
                             const SupportSet& support) {
    support.validate();
    const std::vector<double> q = embed(model, query, Mode::infer);
    std::vector<double> scores(kNumClasses, 0.0);
    for (const auto& s : support.entries) {
        const std::vector<double> e = embed(model, s, Mode::infer);
        scores[static_cast<std::size_t>(s.label)] = score_from_embeddings(model, q, e);
    }
    return argmax_lowest(scores);
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths) {
    if (predictions.empty() || predictions.size() != truths.size())
        throw std::invalid_argument("accuracy: need equal-length non-empty inputs");
    int ok = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) ok += predictions[i] == truths[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(predictions.size());
}

/// Episode-averaged one-shot results. The confusion matrix accumulates
/// counts over all episodes (rows = true class), so trace/total equals
/// the reported accuracy exactly.
struct EvalReport {
    double accuracy = 0.0;
    double accuracy_std = 0.0;  // population std over per-episode accuracies
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> confusion{};
    std::array<double, kNumClasses> per_class_accuracy{};
    std::vector<double> episode_accuracy;
    int episodes = 0;
    std::uint64_t seed = 0;
};

/// Runs seeded one-shot episodes: each draws one support sample per class
/// uniformly from the test set, classifies every remaining test sample
/// against that support, and accumulates confusion counts. Test-set
/// embeddings are computed once and shared across episodes.
inline EvalReport evaluate_episodes(SiameseModel& model, const Dataset& test_set, int episodes,
                                    std::uint64_t seed) {
    if (episodes < 1) throw std::invalid_argument("evaluate_episodes: need at least one episode");
    const auto by_class = test_set.indices_by_class();
    for (const auto& idx : by_class)
        if (idx.size() < 2)
            throw std::invalid_argument("evaluate_episodes: every class needs at least 2 samples");

    const auto emb = embed_all(model, test_set);
    const int dim = distance_dim(model.spec, model.distance);

    EvalReport rep;
    rep.episodes = episodes;
    rep.seed = seed;

    for (int e = 0; e < episodes; ++e) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
        std::array<int, kNumClasses> support{};
        for (int c = 0; c < kNumClasses; ++c) {
            const auto& idx = by_class[static_cast<std::size_t>(c)];
            support[static_cast<std::size_t>(c)] = idx[rng.index(idx.size())];
        }

        std::vector<int> queries;
        queries.reserve(test_set.samples.size());
        for (int i = 0; i < test_set.size(); ++i) {
            bool is_support = false;
            for (int s : support) is_support = is_support || s == i;
            if (!is_support) queries.push_back(i);
        }

        // All query-support distances scored by the head in one batch.
        Tensor dist({static_cast<int>(queries.size()) * kNumClasses, dim});
        for (std::size_t q = 0; q < queries.size(); ++q)
            for (int c = 0; c < kNumClasses; ++c) {
                const auto d = distance_vector(model.distance,
                                               emb[static_cast<std::size_t>(queries[q])],
                                               emb[static_cast<std::size_t>(support[static_cast<std::size_t>(c)])]);
                std::copy(d.begin(), d.end(),
                          dist.data.begin() + static_cast<std::ptrdiff_t>((q * kNumClasses + static_cast<std::size_t>(c)) * static_cast<std::size_t>(dim)));
            }
        const Tensor probs = model.head.forward(dist, Mode::infer, nullptr, nullptr);

        std::int64_t correct = 0;
        for (std::size_t q = 0; q < queries.size(); ++q) {
            std::vector<double> scores(kNumClasses);
            for (int c = 0; c < kNumClasses; ++c)
                scores[static_cast<std::size_t>(c)] =
                    probs.data[q * kNumClasses + static_cast<std::size_t>(c)];
            const int pred = argmax_lowest(scores);
            const int truth = test_set.samples[static_cast<std::size_t>(queries[q])].label;
            rep.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)] += 1;
            correct += pred == truth ? 1 : 0;
        }
        rep.episode_accuracy.push_back(static_cast<double>(correct) /
                                       static_cast<double>(queries.size()));
    }

    std::int64_t trace = 0, total = 0;
    for (int t = 0; t < kNumClasses; ++t) {
        std::int64_t row = 0;
        for (int p = 0; p < kNumClasses; ++p) {
            row += rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            if (t == p) trace += rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
        }
        total += row;
        rep.per_class_accuracy[static_cast<std::size_t>(t)] =
            row > 0 ? static_cast<double>(rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(t)]) /
                          static_cast<double>(row)
                    : 0.0;
    }
    rep.accuracy = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;

    double mean = 0.0;
    for (double a : rep.episode_accuracy) mean += a;
    mean /= static_cast<double>(rep.episode_accuracy.size());
    double var = 0.0;
    for (double a : rep.episode_accuracy) var += (a - mean) * (a - mean);
    rep.accuracy_std = std::sqrt(var / static_cast<double>(rep.episode_accuracy.size()));
    return rep;
}

/// Plain argmax evaluation of the baseline on a labeled set.
inline EvalReport evaluate_cnn(CnnModel& model, const Dataset& test_set) {
    if (test_set.size() == 0) throw std::invalid_argument("evaluate_cnn: empty test set");
    const std::vector<int> pred = cnn_predict(model, test_set);
    EvalReport rep;
    rep.episodes = 1;
    std::int64_t trace = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int t = test_set.samples[i].label;
        rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(pred[i])] += 1;
        trace += pred[i] == t ? 1 : 0;
    }
    for (int t = 0; t < kNumClasses; ++t) {
        std::int64_t row = 0;
        for (int p = 0; p < kNumClasses; ++p)
            row += rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
        rep.per_class_accuracy[static_cast<std::size_t>(t)] =
            row > 0 ? static_cast<double>(rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(t)]) /
                          static_cast<double>(row)
                    : 0.0;
    }
    rep.accuracy = static_cast<double>(trace) / static_cast<double>(pred.size());
    rep.episode_accuracy = {rep.accuracy};
    return rep;
}

struct AblationRow {
    double fraction = 0.0;
    int sample_count = 0;
    double siamese_accuracy = 0.0;
    double baseline_accuracy = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    int episodes = 0;
    std::uint64_t seed = 0;
};

/// Trains both models from scratch on stratified subsamples of the
/// training split (validation and test splits stay fixed) and reports
/// paired accuracies per fraction. All hyperparameters are shared.
inline AblationReport run_ablation(const Dataset& ds, std::vector<double> fractions,
                                   const TrainConfig& cfg, int episodes, std::uint64_t seed,
                                   DistanceKind distance = DistanceKind::elementwise_abs,
                                   const BackboneSpec& spec = default_backbone_spec()) {
    if (fractions.empty()) throw std::invalid_argument("run_ablation: no fractions");
    std::sort(fractions.begin(), fractions.end());
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0.0) || fractions[i] > 1.0)
            throw std::invalid_argument("run_ablation: fractions must lie in (0, 1]");
        if (i > 0 && fractions[i] == fractions[i - 1])
            throw std::invalid_argument("run_ablation: duplicate fraction");
    }

    const DatasetSplits splits = stratified_split(ds, 0.72, 0.08, 0.20, derive_seed(seed, 0x5711));

    AblationReport rep;
    rep.episodes = episodes;
    rep.seed = seed;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double f = fractions[i];
        const std::uint64_t fs = derive_seed(derive_seed(seed, 0xF12A), static_cast<std::uint64_t>(i));
        const Dataset sub =
            f < 1.0 ? stratified_subsample(splits.train, f, derive_seed(fs, 0)) : splits.train;

        SiameseModel sm = make_siamese(spec, distance, derive_seed(fs, 1));
        TrainConfig sc = cfg;
        sc.seed = derive_seed(fs, 2);
        train_siamese(sm, sub, splits.val, sc);
        const EvalReport se = evaluate_episodes(sm, splits.test, episodes, derive_seed(fs, 3));

        CnnModel cm = make_cnn(spec, derive_seed(fs, 4));
        TrainConfig cc = cfg;
        cc.seed = derive_seed(fs, 5);
        train_cnn(cm, sub, splits.val, cc);
        const EvalReport ce = evaluate_cnn(cm, splits.test);

        rep.rows.push_back(AblationRow{f, sub.size(), se.accuracy, ce.accuracy});
    }
    return rep;
}

}  // namespace rhm
