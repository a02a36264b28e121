#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rhm/rng.hpp"

namespace rhm {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Speed of propagation of the radar signal (m/s).
inline constexpr double kPropagationSpeed = 3e8;

/// FMCW radar front-end parameters. Defaults describe a 61 GHz sensor
/// sweeping 6 GHz per 128 us chirp, sampled at 2 MHz (256 samples per
/// chirp), one chirp per 50 ms frame, 30 frames per observation, with the
/// first 40 range bins (1.00 m at 2.5 cm/bin) kept downstream.
struct RadarConfig {
    double carrier_freq_hz = 61e9;
    double bandwidth_hz = 6e9;
    double chirp_duration_s = 128e-6;
    double sample_rate_hz = 2e6;
    int samples_per_chirp = 256;
    double frame_interval_s = 50e-3;
    int frames_per_sample = 30;
    int used_bins = 40;

    double sample_period_s() const { return 1.0 / sample_rate_hz; }

    /// Beat frequency of a reflector at the given range (Hz).
    double beat_frequency_hz(double range_m) const {
        return 2.0 * bandwidth_hz * range_m / (chirp_duration_s * kPropagationSpeed);
    }

    /// Distance spanned by one spectrum bin (m).
    double range_bin_spacing_m() const {
        return kPropagationSpeed * chirp_duration_s * sample_rate_hz /
               (2.0 * bandwidth_hz * static_cast<double>(samples_per_chirp));
    }

    void validate() const {
        if (!(carrier_freq_hz > 0) || !(bandwidth_hz > 0) || !(chirp_duration_s > 0) ||
            !(sample_rate_hz > 0))
            throw std::invalid_argument("RadarConfig: frequencies and durations must be positive");
        if (samples_per_chirp < 2 || frames_per_sample < 1 || used_bins < 1)
            throw std::invalid_argument("RadarConfig: counts must be positive");
        const long long expected = std::llround(chirp_duration_s * sample_rate_hz);
        if (expected != samples_per_chirp)
            throw std::invalid_argument(
                "RadarConfig: samples_per_chirp must equal chirp_duration_s * sample_rate_hz");
        if (used_bins > samples_per_chirp / 2)
            throw std::invalid_argument("RadarConfig: used_bins exceeds half spectrum");
    }
};

/// A point scatterer: distance from the antenna, attenuation of the echo
/// and a fixed phase offset.
struct Reflector {
    double range_m = 0.0;
    double amplitude = 1.0;
    double phase_rad = 0.0;
};

inline constexpr double kMaxReflectorRangeM = 2.0;

/// Per-frame position and echo strength of the moving target over one
/// observation window, plus the class it realizes.
struct MotionProfile {
    int class_label = 0;
    std::vector<double> range_m;
    std::vector<double> amplitude;
};

/// Parameter ranges for the four synthetic motion classes. Per-sample
/// values are drawn uniformly from the min/max intervals.
struct MotionParams {
    double base_range_m = 0.40;
    double static_jitter_sigma_m = 0.005;
    double nod_amp_min_m = 0.03;
    double nod_amp_max_m = 0.07;
    double osc_freq_min_hz = 0.5;
    double osc_freq_max_hz = 1.5;
    double shake_mod_depth = 0.5;
    double shake_wobble_sigma_m = 0.01;
    double lower_offset_min_m = 0.10;
    double lower_offset_max_m = 0.20;
    // Trajectories are clamped to this observation window.
    double range_floor_m = 0.2;
    double range_ceil_m = 1.0;
};

/// One scene to synthesize: the moving target, static in-cabin clutter,
/// additive noise level and the seed of the noise stream.
struct SceneSpec {
    MotionProfile motion;
    std::vector<Reflector> clutter;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

/// Sampled beat signal of one frame (one chirp).
struct FrameSignal {
    std::vector<double> samples;
};

namespace detail {

inline void check_reflector(const Reflector& r) {
    if (!std::isfinite(r.amplitude) || r.amplitude < 0.0)
        throw std::invalid_argument("Reflector: amplitude must be finite and non-negative");
    if (!std::isfinite(r.range_m) || r.range_m < 0.0 || r.range_m > kMaxReflectorRangeM)
        throw std::invalid_argument("Reflector: range must lie in [0, 2] m");
    if (!std::isfinite(r.phase_rad))
        throw std::invalid_argument("Reflector: phase must be finite");
}

}  // namespace detail

/// Synthesizes the sampled beat signal of one chirp as the superposition
/// of the reflector echoes:
///   m[n] = sum over reflectors of (a/2) * cos(2*pi*f_b*n*T_s + 2*pi*(2*f_c*R/c) + phi)
/// with f_b the beat frequency of the reflector's range. Reflectors are
/// accumulated in the order given.
inline FrameSignal beat_frame(const RadarConfig& cfg, const std::vector<Reflector>& reflectors) {
    for (const Reflector& r : reflectors) detail::check_reflector(r);
    FrameSignal frame;
    frame.samples.assign(static_cast<std::size_t>(cfg.samples_per_chirp), 0.0);
    const double ts = cfg.sample_period_s();
    for (const Reflector& r : reflectors) {
        const double fb = cfg.beat_frequency_hz(r.range_m);
        const double phase0 =
            2.0 * kPi * (2.0 * cfg.carrier_freq_hz * r.range_m / kPropagationSpeed) + r.phase_rad;
        const double half_amp = 0.5 * r.amplitude;
        const double step = 2.0 * kPi * fb * ts;
        for (int n = 0; n < cfg.samples_per_chirp; ++n) {
            frame.samples[static_cast<std::size_t>(n)] +=
                half_amp * std::cos(step * static_cast<double>(n) + phase0);
        }
    }
    return frame;
}

/// Draws one labeled target trajectory.
///
/// Class 0 holds the base range with small jitter, class 1 oscillates in
/// range (nod), class 2 oscillates in echo strength with a range wobble
/// (side shake), class 3 holds a lowered position offset from the base.
/// Per-sample parameters come from the ranges in MotionParams; the result
/// is fully determined by (class_label, params, seed).
inline MotionProfile motion_trajectory(int class_label, const MotionParams& p,
                                       const RadarConfig& cfg, std::uint64_t seed) {
    if (class_label < 0 || class_label > 3)
        throw std::invalid_argument("motion_trajectory: class label must be one of 0..3");
    const int nf = cfg.frames_per_sample;
    MotionProfile out;
    out.class_label = class_label;
    out.range_m.resize(static_cast<std::size_t>(nf));
    out.amplitude.assign(static_cast<std::size_t>(nf), 1.0);

    Rng rng(seed);
    const auto clamp_range = [&](double r) { return std::clamp(r, p.range_floor_m, p.range_ceil_m); };

    switch (class_label) {
        case 0: {
            for (int k = 0; k < nf; ++k)
                out.range_m[static_cast<std::size_t>(k)] =
                    clamp_range(p.base_range_m + rng.normal(0.0, p.static_jitter_sigma_m));
            break;
        }
        case 1: {
            const double amp = rng.uniform(p.nod_amp_min_m, p.nod_amp_max_m);
            const double freq = rng.uniform(p.osc_freq_min_hz, p.osc_freq_max_hz);
            for (int k = 0; k < nf; ++k) {
                const double t = static_cast<double>(k) * cfg.frame_interval_s;
                out.range_m[static_cast<std::size_t>(k)] =
                    clamp_range(p.base_range_m + amp * std::sin(2.0 * kPi * freq * t));
            }
            break;
        }
        case 2: {
            const double freq = rng.uniform(p.osc_freq_min_hz, p.osc_freq_max_hz);
            for (int k = 0; k < nf; ++k) {
                const double t = static_cast<double>(k) * cfg.frame_interval_s;
                out.amplitude[static_cast<std::size_t>(k)] =
                    1.0 + p.shake_mod_depth * std::sin(2.0 * kPi * freq * t);
                out.range_m[static_cast<std::size_t>(k)] =
                    clamp_range(p.base_range_m + rng.normal(0.0, p.shake_wobble_sigma_m));
            }
            break;
        }
        case 3: {
            const double offset = rng.uniform(p.lower_offset_min_m, p.lower_offset_max_m);
            for (int k = 0; k < nf; ++k)
                out.range_m[static_cast<std::size_t>(k)] =
                    clamp_range(p.base_range_m + offset + rng.normal(0.0, p.static_jitter_sigma_m));
            break;
        }
        default:
            break;
    }
    return out;
}

/// Simulates one observation window: per frame, the target echo at that
/// frame's range/strength plus the static clutter, with i.i.d. Gaussian
/// noise on every sample. Reproducible from scene.seed.
inline std::vector<FrameSignal> simulate_sample(const RadarConfig& cfg, const SceneSpec& scene) {
    if (!std::isfinite(scene.noise_std) || scene.noise_std < 0.0)
        throw std::invalid_argument("simulate_sample: noise_std must be finite and non-negative");
    const std::size_t nf = static_cast<std::size_t>(cfg.frames_per_sample);
    if (scene.motion.range_m.size() != nf || scene.motion.amplitude.size() != nf)
        throw std::invalid_argument("simulate_sample: motion sequences must cover every frame");

    std::vector<FrameSignal> frames;
    frames.reserve(nf);
    Rng noise(scene.seed);
    std::vector<Reflector> refl;
    for (std::size_t k = 0; k < nf; ++k) {
        refl.clear();
        refl.push_back(Reflector{scene.motion.range_m[k], scene.motion.amplitude[k], 0.0});
        refl.insert(refl.end(), scene.clutter.begin(), scene.clutter.end());
        FrameSignal frame = beat_frame(cfg, refl);
        if (scene.noise_std > 0.0) {
            for (double& s : frame.samples) s += noise.normal(0.0, scene.noise_std);
        }
        frames.push_back(std::move(frame));
    }
    return frames;
}

}  // namespace rhm
