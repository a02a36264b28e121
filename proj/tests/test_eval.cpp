// One-shot evaluation protocol tests. A hand-rigged model (identity
// backbone, negative-unit distance head) classifies the banded synthetic
// set perfectly without training, which pins the episode bookkeeping,
// confusion accounting, and determinism contracts exactly.

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rhm/dataset.hpp"
#include "rhm/eval.hpp"
#include "rhm/siamese.hpp"

using namespace rhm;

namespace {

SpectrumMatrix band_matrix(int label, Rng& rng) {
    SpectrumMatrix m;
    m.n_frames = 5;
    m.n_bins = 6;
    m.label = label;
    m.norm_min = 0.0;
    m.norm_max = 1.0;
    m.data.assign(30, 0.0);
    for (double& v : m.data) v = 0.1 * rng.uniform();
    for (int f = 0; f < 5; ++f)
        m.data[static_cast<std::size_t>(f) * 6 + static_cast<std::size_t>(label) + 1] =
            0.85 + 0.1 * rng.uniform();
    return m;
}

Dataset band_dataset(int per_class, std::uint64_t seed) {
    Dataset ds;
    ds.n_frames = 5;
    ds.n_bins = 6;
    Rng rng(seed);
    for (int c = 0; c < kNumClasses; ++c)
        for (int i = 0; i < per_class; ++i) ds.samples.push_back(band_matrix(c, rng));
    return ds;
}

// Small trainable recipe matching the band matrices' geometry, for the
// ablation runs.
BackboneSpec band_spec() {
    BackboneSpec spec;
    spec.input_h = 6;
    spec.input_w = 5;
    spec.layers = {LayerSpec::conv(2, 2, 1, 4), LayerSpec::batchnorm(), LayerSpec::dropout(0.1),
                   LayerSpec::flatten(), LayerSpec::dense(8)};
    return spec;
}

// Identity backbone plus a fixed head: score = sigmoid(-L1(x, y)), a
// strictly decreasing function of the distance. Same-class band pairs are
// always closer than cross-class pairs, so one-shot accuracy is 1.
SiameseModel rigged_model() {
    BackboneSpec spec;
    spec.input_h = 6;
    spec.input_w = 5;
    spec.layers = {LayerSpec::flatten()};
    SiameseModel m = make_siamese(spec, DistanceKind::elementwise_abs, 0);
    for (double& w : m.head.params()[0]->data) w = -1.0;
    m.head.params()[1]->data[0] = 0.0;
    return m;
}

SupportSet support_from(const Dataset& ds) {
    SupportSet s;
    const auto by_class = ds.indices_by_class();
    for (int c = 0; c < kNumClasses; ++c)
        s.entries.push_back(ds.samples[static_cast<std::size_t>(by_class[static_cast<std::size_t>(c)][0])]);
    return s;
}

}  // namespace

// --- argmax and accuracy primitives ---

TEST(ArgmaxLowest, PicksMaximum) {
    EXPECT_EQ(argmax_lowest({0.9, 0.1, 0.2, 0.3}), 0);
    EXPECT_EQ(argmax_lowest({0.1, 0.5, 0.45, 0.2}), 1);
    EXPECT_EQ(argmax_lowest({-2.0, -1.0, -3.0}), 1);
}

TEST(ArgmaxLowest, TiesResolveToLowestIndex) {
    EXPECT_EQ(argmax_lowest({0.5, 0.5, 0.5, 0.5}), 0);
    EXPECT_EQ(argmax_lowest({0.1, 0.7, 0.7, 0.2}), 1);
}

TEST(ArgmaxLowest, EmptyRejected) {
    EXPECT_THROW(argmax_lowest({}), std::invalid_argument);
}

TEST(Accuracy, Fractions) {
    EXPECT_EQ(accuracy({0, 1, 2, 3}, {0, 1, 2, 0}), 0.75);
    EXPECT_EQ(accuracy({1, 2, 3}, {1, 2, 3}), 1.0);
    EXPECT_EQ(accuracy({0, 0, 0}, {1, 2, 3}), 0.0);
}

TEST(Accuracy, RejectsBadInputs) {
    EXPECT_THROW(accuracy({}, {}), std::invalid_argument);
    EXPECT_THROW(accuracy({1, 2}, {1}), std::invalid_argument);
}

// --- support sets ---

TEST(SupportSet, ValidatesCoverage) {
    const Dataset ds = band_dataset(2, 1);
    EXPECT_NO_THROW(support_from(ds).validate());

    SupportSet duplicate = support_from(ds);
    duplicate.entries[1].label = 0;  // class 0 twice, class 1 missing
    EXPECT_THROW(duplicate.validate(), std::invalid_argument);

    SupportSet short_set = support_from(ds);
    short_set.entries.pop_back();
    EXPECT_THROW(short_set.validate(), std::invalid_argument);

    SupportSet bad_label = support_from(ds);
    bad_label.entries[2].label = 9;
    EXPECT_THROW(bad_label.validate(), std::invalid_argument);
}

// --- one-shot classification ---

TEST(ClassifyOneShot, PerfectOnSeparableBands) {
    SiameseModel m = rigged_model();
    const Dataset ds = band_dataset(6, 2);
    const SupportSet support = support_from(ds);
    for (const auto& q : ds.samples) EXPECT_EQ(classify_one_shot(m, q, support), q.label);
}

TEST(ClassifyOneShot, AllEqualScoresFallBackToClassZero) {
    // Zero head weights make every score sigmoid(bias): a four-way tie.
    SiameseModel m = rigged_model();
    for (double& w : m.head.params()[0]->data) w = 0.0;
    const Dataset ds = band_dataset(2, 3);
    const SupportSet support = support_from(ds);
    for (const auto& q : ds.samples) EXPECT_EQ(classify_one_shot(m, q, support), 0);
}

TEST(ClassifyOneShot, InvalidSupportRejected) {
    SiameseModel m = rigged_model();
    const Dataset ds = band_dataset(2, 4);
    SupportSet bad = support_from(ds);
    bad.entries[3].label = 0;
    EXPECT_THROW(classify_one_shot(m, ds.samples[0], bad), std::invalid_argument);
}

// --- episodic evaluation ---

TEST(EvaluateEpisodes, PerfectModelScoresOne) {
    SiameseModel m = rigged_model();
    // 51 per class: each episode holds out 4 supports and scores exactly
    // 200 queries.
    const Dataset test = band_dataset(51, 5);
    const EvalReport rep = evaluate_episodes(m, test, 3, 7);

    EXPECT_EQ(rep.accuracy, 1.0);
    EXPECT_EQ(rep.accuracy_std, 0.0);
    EXPECT_EQ(rep.episodes, 3);
    EXPECT_EQ(rep.seed, 7u);
    ASSERT_EQ(rep.episode_accuracy.size(), 3u);
    for (double a : rep.episode_accuracy) EXPECT_EQ(a, 1.0);
    for (int c = 0; c < kNumClasses; ++c) {
        EXPECT_EQ(rep.per_class_accuracy[static_cast<std::size_t>(c)], 1.0);
        EXPECT_EQ(rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)],
                  3 * 50);  // episodes x (per-class count minus its support)
    }
    EXPECT_GE(rep.accuracy, 0.95);
}

TEST(EvaluateEpisodes, ConfusionAccountingIsExact) {
    // An imperfect model: random init head gives arbitrary decisions, but
    // the bookkeeping identities must hold regardless.
    BackboneSpec spec;
    spec.input_h = 6;
    spec.input_w = 5;
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(4)};
    SiameseModel m = make_siamese(spec, DistanceKind::elementwise_abs, 31);

    const Dataset test = band_dataset(9, 8);
    const int episodes = 4;
    const EvalReport rep = evaluate_episodes(m, test, episodes, 9);

    std::int64_t trace = 0, total = 0;
    for (int t = 0; t < kNumClasses; ++t) {
        std::int64_t row = 0;
        for (int p = 0; p < kNumClasses; ++p) {
            row += rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            if (t == p) trace += rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
        }
        // Every episode excludes exactly one support per class.
        EXPECT_EQ(row, static_cast<std::int64_t>(episodes) * (9 - 1));
        if (row > 0)
            EXPECT_EQ(rep.per_class_accuracy[static_cast<std::size_t>(t)],
                      static_cast<double>(
                          rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(t)]) /
                          static_cast<double>(row));
        total += row;
    }
    EXPECT_EQ(rep.accuracy, static_cast<double>(trace) / static_cast<double>(total));
    EXPECT_TRUE(rep.accuracy >= 0.0 && rep.accuracy <= 1.0);
}

TEST(EvaluateEpisodes, SameSeedSameReport) {
    BackboneSpec spec;
    spec.input_h = 6;
    spec.input_w = 5;
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(4)};
    SiameseModel m = make_siamese(spec, DistanceKind::elementwise_abs, 41);
    const Dataset test = band_dataset(9, 10);

    const EvalReport a = evaluate_episodes(m, test, 5, 11);
    const EvalReport b = evaluate_episodes(m, test, 5, 11);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.accuracy_std, b.accuracy_std);
    EXPECT_EQ(a.episode_accuracy, b.episode_accuracy);
    EXPECT_EQ(a.confusion, b.confusion);
    EXPECT_EQ(a.per_class_accuracy, b.per_class_accuracy);

    const EvalReport c = evaluate_episodes(m, test, 5, 12);
    // Different seed draws different supports, visible somewhere in the report.
    EXPECT_TRUE(a.episode_accuracy != c.episode_accuracy || a.confusion != c.confusion);
}

TEST(EvaluateEpisodes, RejectsBadInputs) {
    SiameseModel m = rigged_model();
    const Dataset test = band_dataset(3, 13);
    EXPECT_THROW(evaluate_episodes(m, test, 0, 1), std::invalid_argument);

    Dataset thin = band_dataset(2, 14);
    thin.samples.pop_back();  // class 3 left with one sample
    EXPECT_THROW(evaluate_episodes(m, thin, 1, 1), std::invalid_argument);
}

// --- baseline evaluation ---

TEST(EvaluateCnn, AccountingIsConsistent) {
    CnnModel m = make_cnn(
        [] {
            BackboneSpec spec;
            spec.input_h = 6;
            spec.input_w = 5;
            spec.layers = {LayerSpec::flatten(), LayerSpec::dense(4)};
            return spec;
        }(),
        51);
    const Dataset test = band_dataset(7, 15);
    const EvalReport rep = evaluate_cnn(m, test);

    std::int64_t trace = 0, total = 0;
    for (int t = 0; t < kNumClasses; ++t)
        for (int p = 0; p < kNumClasses; ++p) {
            total += rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            if (t == p) trace += rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
        }
    EXPECT_EQ(total, test.size());
    EXPECT_EQ(rep.accuracy, static_cast<double>(trace) / static_cast<double>(total));
    EXPECT_EQ(rep.episodes, 1);
    ASSERT_EQ(rep.episode_accuracy.size(), 1u);
    EXPECT_EQ(rep.episode_accuracy[0], rep.accuracy);
}

TEST(EvaluateCnn, EmptySetRejected) {
    BackboneSpec spec;
    spec.input_h = 6;
    spec.input_w = 5;
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(4)};
    CnnModel m = make_cnn(spec, 52);
    Dataset empty;
    empty.n_frames = 5;
    empty.n_bins = 6;
    EXPECT_THROW(evaluate_cnn(m, empty), std::invalid_argument);
}

// --- ablation ---

TEST(RunAblation, RowsSortedAndSized) {
    const Dataset ds = band_dataset(40, 16);  // 160 samples -> 116/12/32 split
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 2;
    cfg.patience = 2;
    cfg.seed = 17;

    const AblationReport rep =
        run_ablation(ds, {0.5, 0.25}, cfg, 2, 18, DistanceKind::elementwise_abs, band_spec());
    ASSERT_EQ(rep.rows.size(), 2u);
    EXPECT_EQ(rep.episodes, 2);
    EXPECT_EQ(rep.seed, 18u);
    EXPECT_LT(rep.rows[0].fraction, rep.rows[1].fraction);
    EXPECT_EQ(rep.rows[0].fraction, 0.25);
    EXPECT_EQ(rep.rows[1].fraction, 0.5);
    EXPECT_NEAR(rep.rows[0].sample_count, 0.25 * 116.0, 1.0);
    EXPECT_NEAR(rep.rows[1].sample_count, 0.5 * 116.0, 1.0);
    for (const AblationRow& r : rep.rows) {
        EXPECT_TRUE(r.siamese_accuracy >= 0.0 && r.siamese_accuracy <= 1.0);
        EXPECT_TRUE(r.baseline_accuracy >= 0.0 && r.baseline_accuracy <= 1.0);
    }
}

TEST(RunAblation, FullFractionUsesWholeTrainingSplit) {
    const Dataset ds = band_dataset(25, 19);  // 100 samples -> 72/8/20 split
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 1;
    cfg.patience = 1;
    const AblationReport rep =
        run_ablation(ds, {1.0}, cfg, 1, 20, DistanceKind::elementwise_abs, band_spec());
    ASSERT_EQ(rep.rows.size(), 1u);
    EXPECT_EQ(rep.rows[0].sample_count, 72);  // floor totals hand the remainder to train
}

TEST(RunAblation, RejectsBadFractions) {
    const Dataset ds = band_dataset(10, 21);
    TrainConfig cfg;
    EXPECT_THROW(run_ablation(ds, {}, cfg, 1, 1), std::invalid_argument);
    EXPECT_THROW(run_ablation(ds, {0.0, 0.5}, cfg, 1, 1), std::invalid_argument);
    EXPECT_THROW(run_ablation(ds, {0.5, 1.5}, cfg, 1, 1), std::invalid_argument);
    EXPECT_THROW(run_ablation(ds, {0.5, 0.5}, cfg, 1, 1), std::invalid_argument);
}
