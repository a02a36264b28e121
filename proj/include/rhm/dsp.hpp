#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "rhm/radar.hpp"

namespace rhm {

/// Full complex spectrum of one frame, same length as the input.
struct ComplexSpectrum {
    std::vector<std::complex<double>> values;
};

enum class SpectrumScale { linear, log };

/// One labeled input sample: the stacked per-frame half spectra, cropped
/// to the used range bins and min-max normalized to [0, 1]. Row-major,
/// rows are frames. norm_min/norm_max record the values the
/// normalization removed.
struct SpectrumMatrix {
    int n_frames = 0;
    int n_bins = 0;
    std::vector<double> data;
    int label = 0;
    double norm_min = 0.0;
    double norm_max = 0.0;

    double& at(int frame, int bin) {
        return data[static_cast<std::size_t>(frame) * static_cast<std::size_t>(n_bins) +
                    static_cast<std::size_t>(bin)];
    }
    double at(int frame, int bin) const {
        return data[static_cast<std::size_t>(frame) * static_cast<std::size_t>(n_bins) +
                    static_cast<std::size_t>(bin)];
    }
};

/// Discrete Fourier transform M[k] = sum_n m[n] exp(-j 2 pi k n / N),
/// computed with an iterative radix-2 transform. Input length must be a
/// power of two.
inline ComplexSpectrum dft(const FrameSignal& frame) {
    const std::size_t n = frame.samples.size();
    if (n < 2 || (n & (n - 1)) != 0)
        throw std::invalid_argument("dft: frame length must be a power of two");

    std::vector<std::complex<double>> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = frame.samples[i];

    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    // One twiddle table at full resolution keeps every stage's factors
    // exact to a single rounding of polar().
    std::vector<std::complex<double>> twiddle(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k)
        twiddle[k] = std::polar(1.0, -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n));

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t stride = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> w = twiddle[k * stride];
                const std::complex<double> u = a[start + k];
                const std::complex<double> v = a[start + k + len / 2] * w;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
            }
        }
    }
    return ComplexSpectrum{std::move(a)};
}

/// Magnitudes of the first half of the spectrum, |M[0]| .. |M[N/2-1]|.
/// The second half is redundant for real inputs.
inline std::vector<double> half_magnitude(const ComplexSpectrum& spectrum) {
    const std::size_t half = spectrum.values.size() / 2;
    std::vector<double> out(half);
    for (std::size_t k = 0; k < half; ++k) out[k] = std::abs(spectrum.values[k]);
    return out;
}

/// Distance represented by spectrum bin k:
///   R = (c * dT / (2 * dB)) * (k / N_s) * f_s.
/// The evaluation order below reproduces the canonical calibration points
/// (k=16 -> 0.400 m, k=40 -> 1.000 m) exactly in double precision.
inline double bin_to_range(int k, const RadarConfig& cfg) {
    if (k < 0 || k >= cfg.samples_per_chirp / 2)
        throw std::invalid_argument("bin_to_range: bin index outside the half spectrum");
    return kPropagationSpeed * cfg.chirp_duration_s * cfg.sample_rate_hz * static_cast<double>(k) /
           (2.0 * cfg.bandwidth_hz * static_cast<double>(cfg.samples_per_chirp));
}

/// Removes static clutter by subtracting, at every sample index, the mean
/// across the frames of the observation.
inline std::vector<FrameSignal> mean_subtract(const std::vector<FrameSignal>& frames) {
    if (frames.size() < 2)
        throw std::invalid_argument("mean_subtract: need at least two frames");
    const std::size_t ns = frames[0].samples.size();
    for (const FrameSignal& f : frames)
        if (f.samples.size() != ns)
            throw std::invalid_argument("mean_subtract: frames must have equal length");

    const double inv = 1.0 / static_cast<double>(frames.size());
    std::vector<FrameSignal> out(frames.size());
    for (FrameSignal& f : out) f.samples.resize(ns);
    for (std::size_t n = 0; n < ns; ++n) {
        double sum = 0.0;
        for (const FrameSignal& f : frames) sum += f.samples[n];
        const double mean = sum * inv;
        for (std::size_t i = 0; i < frames.size(); ++i)
            out[i].samples[n] = frames[i].samples[n] - mean;
    }
    return out;
}

/// Full per-sample pipeline: mean subtraction, per-frame spectrum, crop to
/// the used bins, stack frames as rows and min-max normalize the whole
/// matrix to [0, 1]. A constant matrix (max == min) normalizes to all
/// zeros rather than dividing by zero.
inline SpectrumMatrix build_matrix(const std::vector<FrameSignal>& frames, const RadarConfig& cfg,
                                   int label, SpectrumScale scale = SpectrumScale::linear) {
    if (static_cast<int>(frames.size()) != cfg.frames_per_sample)
        throw std::invalid_argument("build_matrix: frame count must match the configuration");

    const std::vector<FrameSignal> cleaned = mean_subtract(frames);
    SpectrumMatrix m;
    m.n_frames = cfg.frames_per_sample;
    m.n_bins = cfg.used_bins;
    m.label = label;
    m.data.resize(static_cast<std::size_t>(m.n_frames) * static_cast<std::size_t>(m.n_bins));

    for (int f = 0; f < m.n_frames; ++f) {
        const std::vector<double> mag = half_magnitude(dft(cleaned[static_cast<std::size_t>(f)]));
        for (int b = 0; b < m.n_bins; ++b) {
            double v = mag[static_cast<std::size_t>(b)];
            if (scale == SpectrumScale::log) v = std::log1p(v);
            m.at(f, b) = v;
        }
    }

    const auto [mn, mx] = std::minmax_element(m.data.begin(), m.data.end());
    m.norm_min = *mn;
    m.norm_max = *mx;
    if (m.norm_max > m.norm_min) {
        const double span = m.norm_max - m.norm_min;
        for (double& v : m.data) v = (v - m.norm_min) / span;
    } else {
        std::fill(m.data.begin(), m.data.end(), 0.0);
    }
    return m;
}

}  // namespace rhm
