// Command-line front end: simulate | train | eval | ablation | plot.
// Exit codes: 0 success, 1 invalid input, 2 I/O failure, 3 runtime or
// training failure.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "rhm/checkpoint.hpp"
#include "rhm/config.hpp"
#include "rhm/datagen.hpp"
#include "rhm/eval.hpp"
#include "rhm/report.hpp"
#include "rhm/svg.hpp"

namespace {

rhm::AppConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) return rhm::AppConfig{};
    return rhm::load_config(config_path);
}

int run_simulate(const std::string& config_path, std::vector<int> per_class, std::uint64_t seed,
                 const std::string& out, bool quiet) {
    rhm::AppConfig cfg = load_or_default(config_path);
    if (!per_class.empty()) {
        if (per_class.size() != static_cast<std::size_t>(rhm::kNumClasses))
            throw std::invalid_argument("--per-class needs exactly four counts");
        cfg.gen.per_class = per_class;
    }
    cfg.gen.seed = seed;
    const rhm::Dataset ds = rhm::generate_dataset(cfg.gen);
    rhm::save_dataset(ds, out);
    if (!quiet) {
        const auto counts = ds.class_counts();
        std::printf("wrote %d samples (%d/%d/%d/%d per class) to %s\n", ds.size(), counts[0],
                    counts[1], counts[2], counts[3], out.c_str());
    }
    return 0;
}

int run_train(const std::string& config_path, const std::string& dataset_path,
              const std::string& model_kind, std::uint64_t seed, const std::string& out,
              std::string history_path, int epochs_override, bool quiet) {
    rhm::AppConfig cfg = load_or_default(config_path);
    const rhm::Dataset ds = rhm::load_dataset(dataset_path);
    const std::uint64_t split_seed = rhm::derive_seed(seed, 0x5711);
    const rhm::DatasetSplits splits = rhm::stratified_split(ds, 0.72, 0.08, 0.20, split_seed);

    rhm::TrainConfig tc = cfg.train;
    tc.seed = rhm::derive_seed(seed, 2);
    if (epochs_override >= 0) tc.epochs = epochs_override;

    if (history_path.empty())
        history_path = std::filesystem::path(out).replace_extension("history.json").string();

    nlohmann::json extra;
    extra["seed"] = seed;
    extra["split_seed"] = split_seed;

    const rhm::EpochCallback progress = quiet ? rhm::EpochCallback{} : [](int epoch, double loss, double vacc) {
        std::printf("epoch %d: train loss %.4f, val accuracy %.4f\n", epoch + 1, loss, vacc);
        std::fflush(stdout);
    };

    rhm::Checkpoint ckpt;
    rhm::TrainHistory hist;
    if (model_kind == "siamese") {
        rhm::SiameseModel model = rhm::make_siamese(rhm::default_backbone_spec(), cfg.distance,
                                                    rhm::derive_seed(seed, 1));
        hist = rhm::train_siamese(model, splits.train, splits.val, tc, progress);
        extra["history"] = rhm::history_to_json(hist, model_kind, tc);
        ckpt = rhm::checkpoint_from_siamese(model, extra);
    } else {
        rhm::CnnModel model = rhm::make_cnn(rhm::default_backbone_spec(), rhm::derive_seed(seed, 1));
        hist = rhm::train_cnn(model, splits.train, splits.val, tc, progress);
        extra["history"] = rhm::history_to_json(hist, model_kind, tc);
        ckpt = rhm::checkpoint_from_cnn(model, extra);
    }
    rhm::save_checkpoint(ckpt, out);
    rhm::io::atomic_write_file(history_path, rhm::json_text(rhm::history_to_json(hist, model_kind, tc)));
    if (!quiet)
        std::printf("trained %s for %d epochs (best validation accuracy %.4f), wrote %s and %s\n",
                    model_kind.c_str(), hist.epochs_run, hist.best_val_accuracy, out.c_str(),
                    history_path.c_str());
    return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& dataset_path, int episodes,
             std::uint64_t seed, const std::string& split_choice, const std::string& out,
             bool quiet) {
    const rhm::Checkpoint ckpt = rhm::load_checkpoint(checkpoint_path);
    const rhm::Dataset ds = rhm::load_dataset(dataset_path);

    rhm::Dataset eval_set;
    if (split_choice == "all") {
        eval_set = ds;
    } else {
        if (!ckpt.manifest.contains("split_seed"))
            throw std::invalid_argument(
                "checkpoint records no split seed; evaluate with --split all");
        const auto split_seed = ckpt.manifest.at("split_seed").get<std::uint64_t>();
        rhm::DatasetSplits splits = rhm::stratified_split(ds, 0.72, 0.08, 0.20, split_seed);
        if (split_choice == "test")
            eval_set = std::move(splits.test);
        else if (split_choice == "val")
            eval_set = std::move(splits.val);
        else
            eval_set = std::move(splits.train);
    }

    nlohmann::json j;
    double acc = 0.0;
    const std::string kind = rhm::checkpoint_model_kind(ckpt);
    if (kind == "siamese") {
        rhm::SiameseModel model = rhm::siamese_from_checkpoint(ckpt);
        const rhm::EvalReport rep = rhm::evaluate_episodes(model, eval_set, episodes, seed);
        j = rhm::eval_report_to_json(rep);
        const nlohmann::json emb = rhm::embeddings_to_json(rhm::embed_all(model, eval_set), eval_set);
        j["embeddings"] = emb.at("embeddings");
        j["labels"] = emb.at("labels");
        acc = rep.accuracy;
    } else {
        rhm::CnnModel model = rhm::cnn_from_checkpoint(ckpt);
        rhm::EvalReport rep = rhm::evaluate_cnn(model, eval_set);
        rep.seed = seed;
        j = rhm::eval_report_to_json(rep);
        acc = rep.accuracy;
    }
    j["model"] = kind;
    j["split"] = split_choice;
    rhm::io::atomic_write_file(out, rhm::json_text(j));
    if (!quiet)
        std::printf("%s accuracy %.4f on %s split (%d samples), wrote %s\n", kind.c_str(), acc,
                    split_choice.c_str(), eval_set.size(), out.c_str());
    return 0;
}

int run_ablation(const std::string& config_path, const std::string& dataset_path,
                 std::vector<double> fractions, int episodes_override, std::uint64_t seed,
                 const std::string& out, bool quiet) {
    rhm::AppConfig cfg = load_or_default(config_path);
    const rhm::Dataset ds = rhm::load_dataset(dataset_path);
    if (fractions.empty()) fractions = cfg.fractions;
    const int episodes = episodes_override > 0 ? episodes_override : cfg.episodes;
    const rhm::AblationReport rep =
        rhm::run_ablation(ds, fractions, cfg.train, episodes, seed, cfg.distance);
    rhm::io::atomic_write_file(out, rhm::ablation_to_csv(rep));
    if (!quiet) {
        for (const auto& r : rep.rows)
            std::printf("fraction %.2f (%d samples): one-shot %.4f, baseline %.4f\n", r.fraction,
                        r.sample_count, r.siamese_accuracy, r.baseline_accuracy);
        std::printf("wrote %s\n", out.c_str());
    }
    return 0;
}

int run_plot(const std::string& dataset_path, std::vector<int> samples, const std::string& out_dir,
             bool quiet) {
    const rhm::Dataset ds = rhm::load_dataset(dataset_path);
    if (samples.empty()) {
        // default: the first sample of each class
        std::vector<int> first(rhm::kNumClasses, -1);
        for (int i = 0; i < ds.size(); ++i) {
            int& slot = first[static_cast<std::size_t>(ds.samples[static_cast<std::size_t>(i)].label)];
            if (slot < 0) slot = i;
        }
        for (int i : first)
            if (i >= 0) samples.push_back(i);
    }
    for (int i : samples)
        if (i < 0 || i >= ds.size())
            throw std::invalid_argument("sample index " + std::to_string(i) + " out of range");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw rhm::IoError("cannot create " + out_dir + ": " + ec.message());

    for (int i : samples) {
        const rhm::SpectrumMatrix& m = ds.samples[static_cast<std::size_t>(i)];
        char name[64];
        std::snprintf(name, sizeof name, "sample_%04d_class%d.svg", i, m.label);
        char title[64];
        std::snprintf(title, sizeof title, "sample %d, class %d", i, m.label);
        rhm::io::atomic_write_file(std::filesystem::path(out_dir) / name, rhm::svg_heatmap(m, title));
        if (!quiet) std::printf("wrote %s/%s\n", out_dir.c_str(), name);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Training churns through large short-lived buffers; keeping them on the
    // heap instead of per-call mmap/munmap cycles removes most kernel time.
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, -1);
#endif
    CLI::App app{"synthetic radar head-movement dataset, training and evaluation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_path, dataset_path, checkpoint_path, history_path;
    std::string model_kind = "siamese", split_choice = "test";
    std::uint64_t seed = 0;
    bool quiet = false;
    std::vector<int> per_class, sample_indices;
    std::vector<double> fractions;
    int episodes = 20, epochs_override = -1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "master seed");
        sub->add_flag("--quiet", quiet, "suppress progress output");
    };

    CLI::App* sim = app.add_subcommand("simulate", "synthesize a labeled dataset file");
    sim->add_option("--out", out_path, "output dataset path")->required();
    sim->add_option("--config", config_path, "JSON config path");
    sim->add_option("--per-class", per_class, "four per-class sample counts")->expected(4);
    add_common(sim);

    CLI::App* train = app.add_subcommand("train", "train a model on a dataset file");
    train->add_option("--dataset", dataset_path, "input dataset path")->required();
    train->add_option("--model", model_kind, "model kind")
        ->check(CLI::IsMember({"siamese", "cnn"}));
    train->add_option("--out", out_path, "output checkpoint path")->required();
    train->add_option("--history", history_path, "history JSON path (default: alongside --out)");
    train->add_option("--config", config_path, "JSON config path");
    train->add_option("--epochs", epochs_override, "override epoch count");
    add_common(train);

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    ev->add_option("--dataset", dataset_path, "dataset path")->required();
    ev->add_option("--out", out_path, "report JSON path")->required();
    ev->add_option("--episodes", episodes, "one-shot episode count");
    ev->add_option("--split", split_choice, "which split to evaluate")
        ->check(CLI::IsMember({"test", "val", "train", "all"}));
    add_common(ev);

    CLI::App* abl = app.add_subcommand("ablation", "training-set size ablation over both models");
    abl->add_option("--dataset", dataset_path, "dataset path")->required();
    abl->add_option("--out", out_path, "report CSV path")->required();
    abl->add_option("--config", config_path, "JSON config path");
    abl->add_option("--fractions", fractions, "training fractions in (0,1]");
    abl->add_option("--episodes", episodes, "one-shot episode count");
    add_common(abl);

    CLI::App* plot = app.add_subcommand("plot", "render spectrum matrices as SVG heatmaps");
    plot->add_option("--dataset", dataset_path, "dataset path")->required();
    plot->add_option("--out", out_path, "output directory")->required();
    plot->add_option("--samples", sample_indices, "sample indices (default: one per class)");
    add_common(plot);

    bool episodes_given = false, fractions_given = false;
    abl->parse_complete_callback([&] {
        episodes_given = abl->count("--episodes") > 0;
        fractions_given = abl->count("--fractions") > 0;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*sim) return run_simulate(config_path, per_class, seed, out_path, quiet);
        if (*train)
            return run_train(config_path, dataset_path, model_kind, seed, out_path, history_path,
                             epochs_override, quiet);
        if (*ev) return run_eval(checkpoint_path, dataset_path, episodes, seed, split_choice,
                                 out_path, quiet);
        if (*abl)
            return run_ablation(config_path, dataset_path, fractions_given ? fractions : std::vector<double>{},
                                episodes_given ? episodes : -1, seed, out_path, quiet);
        if (*plot) return run_plot(dataset_path, sample_indices, out_path, quiet);
        return 1;
    } catch (const rhm::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const rhm::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const rhm::TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
