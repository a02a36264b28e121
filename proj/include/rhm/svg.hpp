#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "rhm/dsp.hpp"

namespace rhm {

namespace detail {

/// Three-stop dark-to-bright color map over [0, 1].
inline std::string heat_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    // stops: near-black, magenta, pale yellow
    static constexpr double stops[3][3] = {
        {0.0, 0.0, 0.016}, {0.714, 0.216, 0.475}, {0.988, 0.992, 0.749}};
    const double pos = v * 2.0;
    const int lo = pos < 1.0 ? 0 : 1;
    const double t = pos - static_cast<double>(lo);
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                  static_cast<int>(std::lround(255.0 * (stops[lo][0] + t * (stops[lo + 1][0] - stops[lo][0])))),
                  static_cast<int>(std::lround(255.0 * (stops[lo][1] + t * (stops[lo + 1][1] - stops[lo][1])))),
                  static_cast<int>(std::lround(255.0 * (stops[lo][2] + t * (stops[lo + 1][2] - stops[lo][2])))));
    return buf;
}

}  // namespace detail

/// Renders a normalized spectrum matrix as an SVG heatmap: frames on the
/// x axis, range bins on the y axis with bin 0 at the bottom. All
/// geometry is integral, so identical matrices yield identical bytes.
inline std::string svg_heatmap(const SpectrumMatrix& m, const std::string& title = "") {
    constexpr int cell = 12;
    constexpr int margin = 28;
    const int width = margin * 2 + m.n_frames * cell;
    const int height = margin * 2 + m.n_bins * cell;

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    if (!title.empty()) {
        out += "<text x=\"" + std::to_string(margin) + "\" y=\"18\" font-family=\"monospace\" "
               "font-size=\"12\">" + title + "</text>\n";
    }
    for (int f = 0; f < m.n_frames; ++f) {
        for (int b = 0; b < m.n_bins; ++b) {
            const int x = margin + f * cell;
            const int y = margin + (m.n_bins - 1 - b) * cell;
            out += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) +
                   "\" width=\"" + std::to_string(cell) + "\" height=\"" + std::to_string(cell) +
                   "\" fill=\"" + detail::heat_color(m.at(f, b)) + "\"/>\n";
        }
    }
    out += "<text x=\"" + std::to_string(margin) + "\" y=\"" + std::to_string(height - 8) +
           "\" font-family=\"monospace\" font-size=\"10\">frame -&gt;</text>\n";
    out += "<text x=\"6\" y=\"" + std::to_string(margin - 6) +
           "\" font-family=\"monospace\" font-size=\"10\">bin ^</text>\n";
    out += "</svg>\n";
    return out;
}

}  // namespace rhm
