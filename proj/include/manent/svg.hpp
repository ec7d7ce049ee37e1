#pragma once

// Self-contained SVG emission for matrix heatmaps and spectrum plots; no
// plotting dependency. Output bytes are a pure function of the input.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "manent/metrics.hpp"

namespace manent {

namespace detail {

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

/// Linear white -> dark blue ramp for t in [0, 1].
inline std::string heat_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    int r = static_cast<int>(std::lround(255.0 - 205.0 * t));
    int g = static_cast<int>(std::lround(255.0 - 215.0 * t));
    int b = static_cast<int>(std::lround(255.0 - 115.0 * t));
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

} // namespace detail

/// Heatmap with a linear color map and legend; unbounded entries render in a
/// distinguished magenta, undefined ones in light gray.
inline std::string heatmap_svg(const FlaggedMatrix& m, const std::string& title = "") {
    const double cell = m.cols > 40 ? 12.0 : 24.0;
    const double left = 40.0, top = title.empty() ? 20.0 : 44.0;
    const double grid_w = cell * static_cast<double>(m.cols);
    const double grid_h = cell * static_cast<double>(m.rows);
    const double legend_w = 90.0;
    const double width = left + grid_w + legend_w + 20.0;
    const double height = top + grid_h + 30.0;

    double lo = 0.0, hi = 0.0;
    bool seen = false;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j)
            if (m.at_flag(i, j) == EntryFlag::Value) {
                double v = m.val(i, j);
                lo = seen ? std::min(lo, v) : v;
                hi = seen ? std::max(hi, v) : v;
                seen = true;
            }
    if (!seen) lo = hi = 0.0;
    const double range = hi > lo ? hi - lo : 1.0;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt2(width) +
           "\" height=\"" + detail::fmt2(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        svg += "<text x=\"" + detail::fmt2(left) +
               "\" y=\"24\" font-family=\"monospace\" font-size=\"14\">" + title + "</text>\n";

    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            std::string fill;
            switch (m.at_flag(i, j)) {
                case EntryFlag::Unbounded: fill = "#d623b6"; break;
                case EntryFlag::Undefined: fill = "#d9d9d9"; break;
                default: fill = detail::heat_color((m.val(i, j) - lo) / range);
            }
            svg += "<rect x=\"" + detail::fmt2(left + cell * static_cast<double>(j)) + "\" y=\"" +
                   detail::fmt2(top + cell * static_cast<double>(i)) + "\" width=\"" +
                   detail::fmt2(cell) + "\" height=\"" + detail::fmt2(cell) + "\" fill=\"" + fill +
                   "\"/>\n";
        }
    }
    svg += "<rect x=\"" + detail::fmt2(left) + "\" y=\"" + detail::fmt2(top) + "\" width=\"" +
           detail::fmt2(grid_w) + "\" height=\"" + detail::fmt2(grid_h) +
           "\" fill=\"none\" stroke=\"#444444\"/>\n";

    // legend: vertical ramp with min/max labels plus the special colors
    const double lx = left + grid_w + 18.0;
    const int steps = 24;
    const double lh = std::min(grid_h, 160.0);
    for (int s = 0; s < steps; ++s) {
        double t = 1.0 - static_cast<double>(s) / static_cast<double>(steps - 1);
        svg += "<rect x=\"" + detail::fmt2(lx) + "\" y=\"" +
               detail::fmt2(top + lh * static_cast<double>(s) / steps) + "\" width=\"14\" height=\"" +
               detail::fmt2(lh / steps + 0.5) + "\" fill=\"" + detail::heat_color(t) + "\"/>\n";
    }
    svg += "<text x=\"" + detail::fmt2(lx + 18) + "\" y=\"" + detail::fmt2(top + 10) +
           "\" font-family=\"monospace\" font-size=\"11\">" + detail::fmt4(hi) + "</text>\n";
    svg += "<text x=\"" + detail::fmt2(lx + 18) + "\" y=\"" + detail::fmt2(top + lh) +
           "\" font-family=\"monospace\" font-size=\"11\">" + detail::fmt4(lo) + "</text>\n";
    svg += "<rect x=\"" + detail::fmt2(lx) + "\" y=\"" + detail::fmt2(top + lh + 12) +
           "\" width=\"14\" height=\"10\" fill=\"#d623b6\"/>\n";
    svg += "<text x=\"" + detail::fmt2(lx + 18) + "\" y=\"" + detail::fmt2(top + lh + 21) +
           "\" font-family=\"monospace\" font-size=\"11\">inf</text>\n";
    svg += "<rect x=\"" + detail::fmt2(lx) + "\" y=\"" + detail::fmt2(top + lh + 26) +
           "\" width=\"14\" height=\"10\" fill=\"#d9d9d9\"/>\n";
    svg += "<text x=\"" + detail::fmt2(lx + 18) + "\" y=\"" + detail::fmt2(top + lh + 35) +
           "\" font-family=\"monospace\" font-size=\"11\">n/a</text>\n";
    svg += "</svg>\n";
    return svg;
}

/// Sorted spectrum as a line-and-dot plot over rank; error bars drawn when a
/// nonzero stderr is present. Point labels are the 1-based entry dims.
inline std::string spectrum_svg(const std::vector<SpectrumEntry>& spectrum,
                                const std::string& title = "",
                                const std::string& x_caption = "rank (sorted by H)") {
    const double width = 480.0, height = 320.0;
    const double left = 56.0, right = 16.0, top = title.empty() ? 18.0 : 40.0, bottom = 40.0;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double lo = 0.0, hi = 1.0;
    if (!spectrum.empty()) {
        lo = hi = spectrum.front().value;
        for (const auto& e : spectrum) {
            lo = std::min(lo, e.value - e.stderr_);
            hi = std::max(hi, e.value + e.stderr_);
        }
        if (hi == lo) {
            hi += 0.5;
            lo -= 0.5;
        }
    }
    const double range = hi - lo;
    auto xpos = [&](std::size_t k) {
        return left + plot_w * (spectrum.size() > 1
                                    ? static_cast<double>(k) / static_cast<double>(spectrum.size() - 1)
                                    : 0.5);
    };
    auto ypos = [&](double v) { return top + plot_h * (1.0 - (v - lo) / range); };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt2(width) +
           "\" height=\"" + detail::fmt2(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        svg += "<text x=\"" + detail::fmt2(left) +
               "\" y=\"22\" font-family=\"monospace\" font-size=\"14\">" + title + "</text>\n";
    svg += "<rect x=\"" + detail::fmt2(left) + "\" y=\"" + detail::fmt2(top) + "\" width=\"" +
           detail::fmt2(plot_w) + "\" height=\"" + detail::fmt2(plot_h) +
           "\" fill=\"none\" stroke=\"#444444\"/>\n";
    svg += "<text x=\"6\" y=\"" + detail::fmt2(top + 10) +
           "\" font-family=\"monospace\" font-size=\"11\">" + detail::fmt4(hi) + "</text>\n";
    svg += "<text x=\"6\" y=\"" + detail::fmt2(top + plot_h) +
           "\" font-family=\"monospace\" font-size=\"11\">" + detail::fmt4(lo) + "</text>\n";
    svg += "<text x=\"" + detail::fmt2(left + plot_w / 2 - 40) + "\" y=\"" +
           detail::fmt2(height - 12) + "\" font-family=\"monospace\" font-size=\"11\">" +
           x_caption + "</text>\n";

    if (!spectrum.empty()) {
        std::string pts;
        for (std::size_t k = 0; k < spectrum.size(); ++k) {
            pts += detail::fmt2(xpos(k)) + "," + detail::fmt2(ypos(spectrum[k].value));
            if (k + 1 < spectrum.size()) pts += ' ';
        }
        svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"#2255aa\" stroke-width=\"1.5\"/>\n";
        for (std::size_t k = 0; k < spectrum.size(); ++k) {
            if (spectrum[k].stderr_ > 0.0) {
                svg += "<line x1=\"" + detail::fmt2(xpos(k)) + "\" y1=\"" +
                       detail::fmt2(ypos(spectrum[k].value - spectrum[k].stderr_)) + "\" x2=\"" +
                       detail::fmt2(xpos(k)) + "\" y2=\"" +
                       detail::fmt2(ypos(spectrum[k].value + spectrum[k].stderr_)) +
                       "\" stroke=\"#aa4444\"/>\n";
            }
            svg += "<circle cx=\"" + detail::fmt2(xpos(k)) + "\" cy=\"" +
                   detail::fmt2(ypos(spectrum[k].value)) + "\" r=\"2.5\" fill=\"#2255aa\"/>\n";
            svg += "<text x=\"" + detail::fmt2(xpos(k) - 4) + "\" y=\"" +
                   detail::fmt2(top + plot_h + 14) +
                   "\" font-family=\"monospace\" font-size=\"9\">" +
                   std::to_string(spectrum[k].dim + 1) + "</text>\n";
        }
    }
    svg += "</svg>\n";
    return svg;
}

/// Convergence table as a simple line plot of std-over-repeats vs N.
inline std::string convergence_svg(const std::vector<ConvergenceRow>& rows,
                                   const std::string& title = "") {
    std::vector<SpectrumEntry> as_spectrum;
    for (std::size_t k = 0; k < rows.size(); ++k)
        as_spectrum.push_back({rows[k].n - 1, rows[k].std_over_repeats, 0.0});
    return spectrum_svg(as_spectrum, title, "sample count N (std over repeats)");
}

} // namespace manent
