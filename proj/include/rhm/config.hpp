#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rhm/checkpoint.hpp"
#include "rhm/datagen.hpp"
#include "rhm/io.hpp"
#include "rhm/siamese.hpp"

namespace rhm {

/// Everything a run needs, with defaults matching the canonical radar
/// parameter set and training hyperparameters. Seeds are supplied on the
/// command line, not in the config file.
struct AppConfig {
    GenSpec gen;
    DistanceKind distance = DistanceKind::elementwise_abs;
    TrainConfig train;
    int episodes = 20;
    std::vector<double> fractions = {0.1, 0.2, 0.3, 0.5};
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::vector<std::string>& known,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
void maybe(const nlohmann::json& obj, const char* key, T& field) {
    if (obj.contains(key)) field = obj.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const AppConfig& cfg) {
    nlohmann::json j;
    j["radar"] = {{"bandwidth_hz", cfg.gen.radar.bandwidth_hz},
                  {"carrier_freq_hz", cfg.gen.radar.carrier_freq_hz},
                  {"chirp_duration_s", cfg.gen.radar.chirp_duration_s},
                  {"frame_interval_s", cfg.gen.radar.frame_interval_s},
                  {"frames_per_sample", cfg.gen.radar.frames_per_sample},
                  {"sample_rate_hz", cfg.gen.radar.sample_rate_hz},
                  {"samples_per_chirp", cfg.gen.radar.samples_per_chirp},
                  {"used_bins", cfg.gen.radar.used_bins}};
    j["motion"] = {{"base_range_m", cfg.gen.motion.base_range_m},
                   {"lower_offset_max_m", cfg.gen.motion.lower_offset_max_m},
                   {"lower_offset_min_m", cfg.gen.motion.lower_offset_min_m},
                   {"nod_amp_max_m", cfg.gen.motion.nod_amp_max_m},
                   {"nod_amp_min_m", cfg.gen.motion.nod_amp_min_m},
                   {"osc_freq_max_hz", cfg.gen.motion.osc_freq_max_hz},
                   {"osc_freq_min_hz", cfg.gen.motion.osc_freq_min_hz},
                   {"range_ceil_m", cfg.gen.motion.range_ceil_m},
                   {"range_floor_m", cfg.gen.motion.range_floor_m},
                   {"shake_mod_depth", cfg.gen.motion.shake_mod_depth},
                   {"shake_wobble_sigma_m", cfg.gen.motion.shake_wobble_sigma_m},
                   {"static_jitter_sigma_m", cfg.gen.motion.static_jitter_sigma_m}};
    j["clutter"] = {{"amp_max", cfg.gen.clutter.amp_max},
                    {"amp_min", cfg.gen.clutter.amp_min},
                    {"ranges_m", cfg.gen.clutter.ranges_m}};
    j["noise_std"] = cfg.gen.noise_std;
    j["scale"] = cfg.gen.scale == SpectrumScale::linear ? "linear" : "log";
    j["per_class"] = cfg.gen.per_class;
    j["distance"] = distance_to_string(cfg.distance);
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"learning_rate", cfg.train.learning_rate},
                  {"pairs_per_epoch", cfg.train.pairs_per_epoch},
                  {"patience", cfg.train.patience}};
    j["eval"] = {{"episodes", cfg.episodes}};
    j["ablation"] = {{"fractions", cfg.fractions}};
    return j;
}

/// Applies a JSON document over the defaults. Unknown keys are rejected
/// so typos fail loudly instead of silently keeping a default.
inline AppConfig config_from_json(const nlohmann::json& j) {
    AppConfig cfg;
    try {
        detail::reject_unknown_keys(j,
                                    {"radar", "motion", "clutter", "noise_std", "scale",
                                     "per_class", "distance", "train", "eval", "ablation"},
                                    "top level");
        if (j.contains("radar")) {
            const auto& r = j.at("radar");
            detail::reject_unknown_keys(r,
                                        {"bandwidth_hz", "carrier_freq_hz", "chirp_duration_s",
                                         "frame_interval_s", "frames_per_sample", "sample_rate_hz",
                                         "samples_per_chirp", "used_bins"},
                                        "radar");
            detail::maybe(r, "bandwidth_hz", cfg.gen.radar.bandwidth_hz);
            detail::maybe(r, "carrier_freq_hz", cfg.gen.radar.carrier_freq_hz);
            detail::maybe(r, "chirp_duration_s", cfg.gen.radar.chirp_duration_s);
            detail::maybe(r, "frame_interval_s", cfg.gen.radar.frame_interval_s);
            detail::maybe(r, "frames_per_sample", cfg.gen.radar.frames_per_sample);
            detail::maybe(r, "sample_rate_hz", cfg.gen.radar.sample_rate_hz);
            detail::maybe(r, "samples_per_chirp", cfg.gen.radar.samples_per_chirp);
            detail::maybe(r, "used_bins", cfg.gen.radar.used_bins);
        }
        if (j.contains("motion")) {
            const auto& m = j.at("motion");
            detail::reject_unknown_keys(m,
                                        {"base_range_m", "lower_offset_max_m", "lower_offset_min_m",
                                         "nod_amp_max_m", "nod_amp_min_m", "osc_freq_max_hz",
                                         "osc_freq_min_hz", "range_ceil_m", "range_floor_m",
                                         "shake_mod_depth", "shake_wobble_sigma_m",
                                         "static_jitter_sigma_m"},
                                        "motion");
            detail::maybe(m, "base_range_m", cfg.gen.motion.base_range_m);
            detail::maybe(m, "lower_offset_max_m", cfg.gen.motion.lower_offset_max_m);
            detail::maybe(m, "lower_offset_min_m", cfg.gen.motion.lower_offset_min_m);
            detail::maybe(m, "nod_amp_max_m", cfg.gen.motion.nod_amp_max_m);
            detail::maybe(m, "nod_amp_min_m", cfg.gen.motion.nod_amp_min_m);
            detail::maybe(m, "osc_freq_max_hz", cfg.gen.motion.osc_freq_max_hz);
            detail::maybe(m, "osc_freq_min_hz", cfg.gen.motion.osc_freq_min_hz);
            detail::maybe(m, "range_ceil_m", cfg.gen.motion.range_ceil_m);
            detail::maybe(m, "range_floor_m", cfg.gen.motion.range_floor_m);
            detail::maybe(m, "shake_mod_depth", cfg.gen.motion.shake_mod_depth);
            detail::maybe(m, "shake_wobble_sigma_m", cfg.gen.motion.shake_wobble_sigma_m);
            detail::maybe(m, "static_jitter_sigma_m", cfg.gen.motion.static_jitter_sigma_m);
        }
        if (j.contains("clutter")) {
            const auto& c = j.at("clutter");
            detail::reject_unknown_keys(c, {"amp_max", "amp_min", "ranges_m"}, "clutter");
            detail::maybe(c, "amp_max", cfg.gen.clutter.amp_max);
            detail::maybe(c, "amp_min", cfg.gen.clutter.amp_min);
            detail::maybe(c, "ranges_m", cfg.gen.clutter.ranges_m);
        }
        detail::maybe(j, "noise_std", cfg.gen.noise_std);
        if (j.contains("scale")) {
            const std::string s = j.at("scale").get<std::string>();
            if (s == "linear")
                cfg.gen.scale = SpectrumScale::linear;
            else if (s == "log")
                cfg.gen.scale = SpectrumScale::log;
            else
                throw std::invalid_argument("config: scale must be \"linear\" or \"log\"");
        }
        detail::maybe(j, "per_class", cfg.gen.per_class);
        if (j.contains("distance"))
            cfg.distance = distance_from_string(j.at("distance").get<std::string>());
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::reject_unknown_keys(
                t, {"batch_size", "epochs", "learning_rate", "pairs_per_epoch", "patience"},
                "train");
            detail::maybe(t, "batch_size", cfg.train.batch_size);
            detail::maybe(t, "epochs", cfg.train.epochs);
            detail::maybe(t, "learning_rate", cfg.train.learning_rate);
            detail::maybe(t, "pairs_per_epoch", cfg.train.pairs_per_epoch);
            detail::maybe(t, "patience", cfg.train.patience);
        }
        if (j.contains("eval")) {
            detail::reject_unknown_keys(j.at("eval"), {"episodes"}, "eval");
            detail::maybe(j.at("eval"), "episodes", cfg.episodes);
        }
        if (j.contains("ablation")) {
            detail::reject_unknown_keys(j.at("ablation"), {"fractions"}, "ablation");
            detail::maybe(j.at("ablation"), "fractions", cfg.fractions);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    } catch (const FormatError& e) {
        throw std::invalid_argument(e.what());
    }
    cfg.gen.radar.validate();
    return cfg;
}

inline AppConfig load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: cannot parse " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace rhm
