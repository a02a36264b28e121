#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rhm/eval.hpp"
#include "rhm/io.hpp"
#include "rhm/siamese.hpp"

namespace rhm {

/// Rounds to n significant digits; report metrics use 6. Payload-adjacent
/// values (embeddings, parameters) are never rounded, they rely on the
/// JSON writer's lossless shortest round-trip form.
inline double round_sig(double x, int digits = 6) {
    if (x == 0.0 || !std::isfinite(x)) return x;
    const double mag = std::floor(std::log10(std::abs(x)));
    const double factor = std::pow(10.0, static_cast<double>(digits - 1) - mag);
    return std::round(x * factor) / factor;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["learning_rate"] = cfg.learning_rate;
    j["pairs_per_epoch"] = cfg.pairs_per_epoch;
    j["patience"] = cfg.patience;
    j["seed"] = cfg.seed;
    return j;
}

inline nlohmann::json history_to_json(const TrainHistory& hist, const std::string& model_kind,
                                      const TrainConfig& cfg) {
    nlohmann::json j;
    j["best_epoch"] = hist.best_epoch;
    j["best_val_accuracy"] = round_sig(hist.best_val_accuracy);
    j["early_stopped"] = hist.early_stopped;
    nlohmann::json losses = nlohmann::json::array();
    for (double v : hist.epoch_loss) losses.push_back(round_sig(v));
    j["epoch_loss"] = losses;
    j["epochs_run"] = hist.epochs_run;
    j["initial_accuracy"] = round_sig(hist.initial_accuracy);
    j["initial_loss"] = round_sig(hist.initial_loss);
    j["model"] = model_kind;
    j["train_config"] = train_config_to_json(cfg);
    nlohmann::json accs = nlohmann::json::array();
    for (double v : hist.val_accuracy) accs.push_back(round_sig(v));
    j["val_accuracy"] = accs;
    return j;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["accuracy"] = round_sig(rep.accuracy);
    j["accuracy_std"] = round_sig(rep.accuracy_std);
    nlohmann::json conf = nlohmann::json::array();
    for (const auto& row : rep.confusion) conf.push_back(row);
    j["confusion"] = conf;
    nlohmann::json eps = nlohmann::json::array();
    for (double v : rep.episode_accuracy) eps.push_back(round_sig(v));
    j["episode_accuracy"] = eps;
    j["episodes"] = rep.episodes;
    nlohmann::json pca = nlohmann::json::array();
    for (double v : rep.per_class_accuracy) pca.push_back(round_sig(v));
    j["per_class_accuracy"] = pca;
    j["seed"] = rep.seed;
    return j;
}

/// Test-set embedding export for external visualization tools.
inline nlohmann::json embeddings_to_json(const std::vector<std::vector<double>>& embeddings,
                                         const Dataset& ds) {
    nlohmann::json emb = nlohmann::json::array();
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        emb.push_back(embeddings[i]);
        labels.push_back(ds.samples[i].label);
    }
    nlohmann::json j;
    j["embeddings"] = emb;
    j["labels"] = labels;
    return j;
}

/// Deterministic JSON text: sorted keys (the container is key-ordered),
/// two-space indentation, trailing newline.
inline std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

namespace detail {

inline std::string csv_number(double v) { return nlohmann::json(round_sig(v)).dump(); }

}  // namespace detail

inline std::string ablation_to_csv(const AblationReport& rep) {
    std::string out = "fraction,samples,siamese_acc,cnn_acc,seed\n";
    for (const AblationRow& r : rep.rows) {
        out += detail::csv_number(r.fraction);
        out += ',';
        out += std::to_string(r.sample_count);
        out += ',';
        out += detail::csv_number(r.siamese_accuracy);
        out += ',';
        out += detail::csv_number(r.baseline_accuracy);
        out += ',';
        out += std::to_string(rep.seed);
        out += '\n';
    }
    return out;
}

/// Inverse of ablation_to_csv over the fields the CSV carries (rows and
/// seed; the episode count is not part of the CSV).
inline AblationReport ablation_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "fraction,samples,siamese_acc,cnn_acc,seed")
        throw FormatError("ablation csv: bad header");
    AblationReport rep;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        AblationRow r;
        try {
            std::getline(row, field, ',');
            r.fraction = std::stod(field);
            std::getline(row, field, ',');
            r.sample_count = std::stoi(field);
            std::getline(row, field, ',');
            r.siamese_accuracy = std::stod(field);
            std::getline(row, field, ',');
            r.baseline_accuracy = std::stod(field);
            if (!std::getline(row, field, ',')) throw FormatError("ablation csv: short row");
            rep.seed = std::stoull(field);
        } catch (const std::logic_error&) {
            throw FormatError("ablation csv: malformed row: " + line);
        }
        rep.rows.push_back(r);
    }
    return rep;
}

}  // namespace rhm
