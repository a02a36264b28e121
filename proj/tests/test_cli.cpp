// End-to-end command-line tests: every verb is exercised through the real
// binary (path in RHM_BIN), checking exit codes, file round trips,
// byte-level determinism, and the visual properties of plotted samples.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <complex>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "rhm/checkpoint.hpp"
#include "rhm/dataset.hpp"
#include "rhm/io.hpp"
#include "rhm/report.hpp"

namespace fs = std::filesystem;
using namespace rhm;
using nlohmann::json;

namespace {

std::string bin() {
    const char* env = std::getenv("RHM_BIN");
    if (!env) throw std::runtime_error("RHM_BIN not set; run through ctest");
    return env;
}

int run(const std::string& args, const std::string& log = "/dev/null") {
    const std::string cmd = bin() + " " + args + " >" + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) throw std::runtime_error("system() failed");
    return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

fs::path scratch() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("rhm_cli_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// Shared artifacts: one simulated dataset plus untrained (epoch-0)
// checkpoints of both model kinds, built once through the binary.
struct CliWorld {
    fs::path dataset, siamese_ckpt, siamese_hist, cnn_ckpt;
};

const CliWorld& world() {
    static CliWorld w = [] {
        CliWorld w;
        w.dataset = scratch() / "base.ds";
        w.siamese_ckpt = scratch() / "siam.ckpt";
        w.siamese_hist = scratch() / "siam.history.json";
        w.cnn_ckpt = scratch() / "cnn.ckpt";
        if (run("simulate --per-class 25 25 25 25 --seed 5 --out " + w.dataset.string() +
                " --quiet") != 0)
            throw std::runtime_error("world: simulate failed");
        if (run("train --dataset " + w.dataset.string() + " --model siamese --epochs 0 --seed 5 " +
                "--out " + w.siamese_ckpt.string() + " --quiet") != 0)
            throw std::runtime_error("world: siamese train failed");
        if (run("train --dataset " + w.dataset.string() + " --model cnn --epochs 0 --seed 5 " +
                "--out " + w.cnn_ckpt.string() + " --quiet") != 0)
            throw std::runtime_error("world: cnn train failed");
        return w;
    }();
    return w;
}

// Per-frame argmax range bin of one sample.
std::vector<int> argmax_trace(const SpectrumMatrix& m) {
    std::vector<int> trace(static_cast<std::size_t>(m.n_frames));
    for (int f = 0; f < m.n_frames; ++f) {
        int best = 0;
        for (int b = 1; b < m.n_bins; ++b)
            if (m.at(f, b) > m.at(f, best)) best = b;
        trace[static_cast<std::size_t>(f)] = best;
    }
    return trace;
}

}  // namespace

// --- simulate ---

TEST(CliSimulate, FourSampleFileRoundTrips) {
    const fs::path out = scratch() / "four.ds";
    ASSERT_EQ(run("simulate --per-class 1 1 1 1 --seed 2 --out " + out.string() + " --quiet"), 0);

    const std::string bytes = io::read_file(out);
    const Dataset ds = decode_dataset(bytes);
    EXPECT_EQ(ds.size(), 4);
    EXPECT_EQ(ds.class_counts(), std::vector<int>({1, 1, 1, 1}));
    EXPECT_EQ(ds.n_frames, 30);
    EXPECT_EQ(ds.n_bins, 40);
    EXPECT_EQ(encode_dataset(ds), bytes);
    for (const auto& m : ds.samples)
        for (double v : m.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
}

TEST(CliSimulate, SameSeedSameBytes) {
    const fs::path a = scratch() / "det_a.ds";
    const fs::path b = scratch() / "det_b.ds";
    const fs::path c = scratch() / "det_c.ds";
    ASSERT_EQ(run("simulate --per-class 2 2 2 2 --seed 9 --out " + a.string() + " --quiet"), 0);
    ASSERT_EQ(run("simulate --per-class 2 2 2 2 --seed 9 --out " + b.string() + " --quiet"), 0);
    ASSERT_EQ(run("simulate --per-class 2 2 2 2 --seed 10 --out " + c.string() + " --quiet"), 0);
    EXPECT_EQ(io::read_file(a), io::read_file(b));
    EXPECT_NE(io::read_file(a), io::read_file(c));
}

TEST(CliSimulate, QuietSuppressesStdout) {
    const fs::path out = scratch() / "quiet.ds";
    const fs::path log = scratch() / "quiet.log";
    ASSERT_EQ(run("simulate --per-class 1 1 1 1 --seed 2 --out " + out.string() + " --quiet",
                  log.string()),
              0);
    EXPECT_TRUE(io::read_file(log).empty());
}

TEST(CliSimulate, InvalidConfigExitsOne) {
    const fs::path cfg = scratch() / "bad.json";
    const fs::path out = scratch() / "never.ds";
    io::atomic_write_file(cfg, R"({"not_a_key": 1})");
    EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + out.string() + " --quiet"), 1);
    io::atomic_write_file(cfg, "{broken");
    EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + out.string() + " --quiet"), 1);
}

TEST(CliSimulate, UnwritableOutputExitsTwo) {
    EXPECT_EQ(run("simulate --per-class 1 1 1 1 --out /nonexistent/dir/x.ds --quiet"), 2);
}

TEST(CliSimulate, MissingRequiredFlagExitsOne) {
    EXPECT_EQ(run("simulate --per-class 1 1 1 1"), 1);  // no --out
    EXPECT_EQ(run(""), 1);                              // no subcommand
    EXPECT_EQ(run("frobnicate"), 1);                    // unknown subcommand
}

// --- train ---

TEST(CliTrain, EpochZeroSiameseCheckpointIsValid) {
    const CliWorld& w = world();
    const Checkpoint ckpt = load_checkpoint(w.siamese_ckpt);
    EXPECT_EQ(checkpoint_model_kind(ckpt), "siamese");
    EXPECT_EQ(ckpt.manifest.at("param_count").get<std::int64_t>(), 2598289);
    EXPECT_EQ(ckpt.payload.size(), 2598289u);
    EXPECT_TRUE(ckpt.manifest.contains("split_seed"));

    // Reloadable: reconstruct the model, reserialize, byte-identical.
    SiameseModel model = siamese_from_checkpoint(ckpt);
    Checkpoint again = checkpoint_from_siamese(model, ckpt.manifest);
    EXPECT_EQ(encode_checkpoint(again), encode_checkpoint(ckpt));

    const json hist = json::parse(io::read_file(w.siamese_hist));
    EXPECT_EQ(hist.at("epochs_run").get<int>(), 0);
    EXPECT_TRUE(hist.at("epoch_loss").empty());
    EXPECT_EQ(hist.at("model").get<std::string>(), "siamese");
    EXPECT_TRUE(hist.contains("initial_loss"));
    EXPECT_TRUE(hist.contains("initial_accuracy"));
    EXPECT_EQ(hist.at("best_epoch").get<int>(), -1);
}

TEST(CliTrain, EpochZeroCnnCheckpointIsValid) {
    const CliWorld& w = world();
    const Checkpoint ckpt = load_checkpoint(w.cnn_ckpt);
    EXPECT_EQ(checkpoint_model_kind(ckpt), "cnn");
    EXPECT_EQ(ckpt.manifest.at("param_count").get<std::int64_t>(), 2598388);
    EXPECT_EQ(ckpt.payload.size(), 2598388u);
    CnnModel model = cnn_from_checkpoint(ckpt);
    EXPECT_EQ(model.net.param_count(), 2598388);
}

TEST(CliTrain, SameSeedSameCheckpointBytes) {
    const CliWorld& w = world();
    const fs::path out = scratch() / "siam_again.ckpt";
    ASSERT_EQ(run("train --dataset " + w.dataset.string() +
                  " --model siamese --epochs 0 --seed 5 --out " + out.string() + " --quiet"),
              0);
    EXPECT_EQ(io::read_file(out), io::read_file(w.siamese_ckpt));
    EXPECT_EQ(io::read_file(scratch() / "siam_again.history.json"), io::read_file(w.siamese_hist));
}

TEST(CliTrain, CorruptDatasetExitsOne) {
    const fs::path bad = scratch() / "corrupt.ds";
    io::atomic_write_file(bad, "RHMDATXX not a dataset");
    EXPECT_EQ(run("train --dataset " + bad.string() + " --epochs 0 --out " +
                  (scratch() / "no.ckpt").string() + " --quiet"),
              1);
}

TEST(CliTrain, MissingDatasetExitsTwo) {
    EXPECT_EQ(run("train --dataset " + (scratch() / "absent.ds").string() + " --epochs 0 --out " +
                  (scratch() / "no.ckpt").string() + " --quiet"),
              2);
}

TEST(CliTrain, UnknownModelKindExitsOne) {
    const CliWorld& w = world();
    EXPECT_EQ(run("train --dataset " + w.dataset.string() + " --model vgg --epochs 0 --out " +
                  (scratch() / "no.ckpt").string() + " --quiet"),
              1);
}

// --- eval ---

TEST(CliEval, ReportFieldsAreConsistent) {
    const CliWorld& w = world();
    const fs::path out = scratch() / "eval1.json";
    ASSERT_EQ(run("eval --checkpoint " + w.siamese_ckpt.string() + " --dataset " +
                  w.dataset.string() + " --episodes 2 --seed 3 --out " + out.string() + " --quiet"),
              0);

    const json rep = json::parse(io::read_file(out));
    const double acc = rep.at("accuracy").get<double>();
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_EQ(rep.at("episodes").get<int>(), 2);
    EXPECT_EQ(rep.at("seed").get<std::uint64_t>(), 3u);
    EXPECT_EQ(rep.at("model").get<std::string>(), "siamese");
    EXPECT_EQ(rep.at("split").get<std::string>(), "test");
    EXPECT_EQ(rep.at("episode_accuracy").size(), 2u);
    EXPECT_EQ(rep.at("per_class_accuracy").size(), 4u);

    // Confusion trace over total reproduces the reported accuracy.
    const auto conf = rep.at("confusion");
    ASSERT_EQ(conf.size(), 4u);
    std::int64_t trace = 0, total = 0;
    for (int t = 0; t < 4; ++t) {
        ASSERT_EQ(conf[static_cast<std::size_t>(t)].size(), 4u);
        for (int p = 0; p < 4; ++p) {
            const auto v = conf[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)].get<std::int64_t>();
            EXPECT_GE(v, 0);
            total += v;
            if (t == p) trace += v;
        }
    }
    EXPECT_NEAR(acc, static_cast<double>(trace) / static_cast<double>(total), 1e-4);

    // 32-dim embedding export, one row per evaluated sample.
    const auto emb = rep.at("embeddings");
    const auto labels = rep.at("labels");
    EXPECT_EQ(emb.size(), 20u);  // test split of 100 samples
    EXPECT_EQ(labels.size(), emb.size());
    for (const auto& row : emb) EXPECT_EQ(row.size(), 32u);
}

TEST(CliEval, SameSeedSameReportBytes) {
    const CliWorld& w = world();
    const fs::path a = scratch() / "eval_a.json";
    const fs::path b = scratch() / "eval_b.json";
    const fs::path c = scratch() / "eval_c.json";
    ASSERT_EQ(run("eval --checkpoint " + w.siamese_ckpt.string() + " --dataset " +
                  w.dataset.string() + " --episodes 2 --seed 3 --out " + a.string() + " --quiet"),
              0);
    ASSERT_EQ(run("eval --checkpoint " + w.siamese_ckpt.string() + " --dataset " +
                  w.dataset.string() + " --episodes 2 --seed 3 --out " + b.string() + " --quiet"),
              0);
    ASSERT_EQ(run("eval --checkpoint " + w.siamese_ckpt.string() + " --dataset " +
                  w.dataset.string() + " --episodes 2 --seed 4 --out " + c.string() + " --quiet"),
              0);
    EXPECT_EQ(io::read_file(a), io::read_file(b));
    EXPECT_NE(io::read_file(a), io::read_file(c));  // seed is part of the report
}

TEST(CliEval, CnnReportHasNoEmbeddings) {
    const CliWorld& w = world();
    const fs::path out = scratch() / "eval_cnn.json";
    ASSERT_EQ(run("eval --checkpoint " + w.cnn_ckpt.string() + " --dataset " + w.dataset.string() +
                  " --out " + out.string() + " --quiet"),
              0);
    const json rep = json::parse(io::read_file(out));
    EXPECT_EQ(rep.at("model").get<std::string>(), "cnn");
    EXPECT_FALSE(rep.contains("embeddings"));
    EXPECT_EQ(rep.at("episodes").get<int>(), 1);
    const double acc = rep.at("accuracy").get<double>();
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
}

TEST(CliEval, SplitAllUsesWholeDataset) {
    const CliWorld& w = world();
    const fs::path out = scratch() / "eval_all.json";
    ASSERT_EQ(run("eval --checkpoint " + w.siamese_ckpt.string() + " --dataset " +
                  w.dataset.string() + " --episodes 1 --seed 3 --split all --out " + out.string() +
                  " --quiet"),
              0);
    const json rep = json::parse(io::read_file(out));
    EXPECT_EQ(rep.at("split").get<std::string>(), "all");
    EXPECT_EQ(rep.at("embeddings").size(), 100u);
}

TEST(CliEval, ArchitectureMismatchExitsOne) {
    const CliWorld& w = world();
    const fs::path narrow = scratch() / "narrow.ds";
    const fs::path cfg = scratch() / "narrow.json";
    io::atomic_write_file(cfg, R"({"radar": {"used_bins": 32}})");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --per-class 25 25 25 25 --seed 6 --out " +
                  narrow.string() + " --quiet"),
              0);
    EXPECT_EQ(run("eval --checkpoint " + w.siamese_ckpt.string() + " --dataset " + narrow.string() +
                  " --episodes 1 --out " + (scratch() / "no.json").string() + " --quiet"),
              1);
}

TEST(CliEval, CorruptCheckpointExitsOne) {
    const CliWorld& w = world();
    const fs::path bad = scratch() / "bad.ckpt";
    io::atomic_write_file(bad, "RHMCKPXX nonsense");
    EXPECT_EQ(run("eval --checkpoint " + bad.string() + " --dataset " + w.dataset.string() +
                  " --out " + (scratch() / "no.json").string() + " --quiet"),
              1);
}

// --- ablation ---

TEST(CliAblation, CsvRoundTripsAndRowsAreOrdered) {
    const CliWorld& w = world();
    const fs::path cfg = scratch() / "abl_cfg.json";
    const fs::path out = scratch() / "abl.csv";
    io::atomic_write_file(cfg, R"({"train": {"epochs": 1, "patience": 1}})");
    ASSERT_EQ(run("ablation --dataset " + w.dataset.string() + " --config " + cfg.string() +
                  " --fractions 1.0 0.5 --episodes 1 --seed 4 --out " + out.string() + " --quiet"),
              0);

    const std::string text = io::read_file(out);
    EXPECT_EQ(text.rfind("fraction,samples,siamese_acc,cnn_acc,seed\n", 0), 0u);

    const AblationReport rep = ablation_from_csv(text);
    ASSERT_EQ(rep.rows.size(), 2u);
    EXPECT_EQ(rep.rows[0].fraction, 0.5);
    EXPECT_EQ(rep.rows[1].fraction, 1.0);
    EXPECT_EQ(rep.rows[0].sample_count, 36);  // half of the 72-sample training split
    EXPECT_EQ(rep.rows[1].sample_count, 72);
    EXPECT_EQ(rep.seed, 4u);
    for (const AblationRow& r : rep.rows) {
        EXPECT_GE(r.siamese_accuracy, 0.0);
        EXPECT_LE(r.siamese_accuracy, 1.0);
        EXPECT_GE(r.baseline_accuracy, 0.0);
        EXPECT_LE(r.baseline_accuracy, 1.0);
    }
    // Reparse and re-serialize: byte-identical CSV.
    EXPECT_EQ(ablation_to_csv(rep), text);
}

// --- plot ---

TEST(CliPlot, DefaultRendersOnePerClass) {
    const CliWorld& w = world();
    const fs::path dir = scratch() / "plots_default";
    ASSERT_EQ(run("plot --dataset " + w.dataset.string() + " --out " + dir.string() + " --quiet"),
              0);
    // Dataset is class-major: first samples of the classes are 0/25/50/75.
    const std::vector<std::string> expected = {
        "sample_0000_class0.svg", "sample_0025_class1.svg", "sample_0050_class2.svg",
        "sample_0075_class3.svg"};
    for (const std::string& name : expected) {
        const std::string svg = io::read_file(dir / name);
        EXPECT_EQ(svg.rfind("<svg", 0), 0u) << name;
        EXPECT_NE(svg.find("</svg>"), std::string::npos) << name;
    }
}

TEST(CliPlot, ExplicitIndexEmbedsLabelInName) {
    const CliWorld& w = world();
    const fs::path dir = scratch() / "plots_explicit";
    ASSERT_EQ(run("plot --dataset " + w.dataset.string() + " --samples 26 --out " + dir.string() +
                  " --quiet"),
              0);
    EXPECT_TRUE(fs::exists(dir / "sample_0026_class1.svg"));
}

TEST(CliPlot, BadIndexExitsOne) {
    const CliWorld& w = world();
    EXPECT_EQ(run("plot --dataset " + w.dataset.string() + " --samples 999 --out " +
                  (scratch() / "plots_bad").string() + " --quiet"),
              1);
}

TEST(CliPlot, AllZeroMatrixRendersUniformImage) {
    // Hand-built dataset: one all-zero 6x5 matrix per class.
    Dataset ds;
    ds.n_frames = 5;
    ds.n_bins = 6;
    for (int c = 0; c < kNumClasses; ++c) {
        SpectrumMatrix m;
        m.n_frames = 5;
        m.n_bins = 6;
        m.label = c;
        m.norm_min = 0.0;
        m.norm_max = 1.0;
        m.data.assign(30, 0.0);
        ds.samples.push_back(std::move(m));
    }
    const fs::path path = scratch() / "zeros.ds";
    save_dataset(ds, path);

    const fs::path dir = scratch() / "plots_zero";
    ASSERT_EQ(run("plot --dataset " + path.string() + " --samples 0 --out " + dir.string() +
                  " --quiet"),
              0);
    const std::string svg = io::read_file(dir / "sample_0000_class0.svg");
    // Every cell carries the color of value zero: a uniform image.
    std::size_t cells = 0;
    for (std::size_t at = svg.find("fill=\"#000004\""); at != std::string::npos;
         at = svg.find("fill=\"#000004\"", at + 1))
        ++cells;
    EXPECT_EQ(cells, 30u);
}

TEST(CliPlot, StaticClassRendersConstantBand) {
    // A still target must draw a near-constant horizontal band: the
    // per-frame argmax bin barely moves.
    const CliWorld& w = world();
    const fs::path dir = scratch() / "plots_static";
    ASSERT_EQ(run("plot --dataset " + w.dataset.string() + " --samples 0 --out " + dir.string() +
                  " --quiet"),
              0);
    ASSERT_TRUE(fs::exists(dir / "sample_0000_class0.svg"));

    const Dataset ds = load_dataset(w.dataset);
    ASSERT_EQ(ds.samples[0].label, 0);
    const std::vector<int> trace = argmax_trace(ds.samples[0]);
    double mean = 0.0;
    for (int b : trace) mean += b;
    mean /= static_cast<double>(trace.size());
    double var = 0.0;
    for (int b : trace) var += (b - mean) * (b - mean);
    var /= static_cast<double>(trace.size());
    EXPECT_LT(var, 0.5);
}

TEST(CliPlot, NodClassShowsPinnedPeriodicDisplacement) {
    // Pin the nod to 4/3 Hz (two full cycles in the 1.5 s window) and a
    // 5 cm amplitude, then recover the band's dominant temporal frequency
    // from the argmax-bin trace; it must land within 20%.
    const fs::path cfg = scratch() / "nod.json";
    io::atomic_write_file(cfg, R"({"motion": {
        "osc_freq_min_hz": 1.3333333333333333,
        "osc_freq_max_hz": 1.3333333333333333,
        "nod_amp_min_m": 0.05, "nod_amp_max_m": 0.05}})");
    const fs::path data = scratch() / "nod.ds";
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --per-class 0 2 0 0 --seed 12 --out " +
                  data.string() + " --quiet"),
              0);
    const fs::path dir = scratch() / "plots_nod";
    ASSERT_EQ(run("plot --dataset " + data.string() + " --samples 0 --out " + dir.string() +
                  " --quiet"),
              0);
    ASSERT_TRUE(fs::exists(dir / "sample_0000_class1.svg"));

    const Dataset ds = load_dataset(data);
    const std::vector<int> trace = argmax_trace(ds.samples[0]);
    ASSERT_EQ(trace.size(), 30u);

    std::vector<double> wave(trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) wave[i] = static_cast<double>(trace[i]);
    const std::vector<std::complex<double>> spec = oracle::naive_dft(wave);
    int dominant = 1;
    for (int k = 2; k <= 15; ++k)
        if (std::abs(spec[static_cast<std::size_t>(k)]) >
            std::abs(spec[static_cast<std::size_t>(dominant)]))
            dominant = k;

    const double window_s = 30.0 * 0.05;
    const double estimated_hz = static_cast<double>(dominant) / window_s;
    const double actual_hz = 4.0 / 3.0;
    EXPECT_LE(std::abs(estimated_hz - actual_hz), 0.2 * actual_hz);
}
