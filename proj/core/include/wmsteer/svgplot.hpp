#pragma once

/* Minimal deterministic SVG figures.
 *
 * Just enough charting for the experiment reports: line series with optional
 * confidence bands, scatter points, axes with rounded tick labels and a
 * legend.  Output is plain SVG text produced with fixed formatting so the
 * same data always renders byte-identical files.
 */

#include <cstdint>
#include <string>
#include <vector>

namespace wmsteer {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lo;  // optional CI band (same length as x) or empty
    std::vector<double> hi;
    bool points = false;  // draw markers at the data points
    bool line = true;     // connect the points
};

struct Figure {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    std::vector<Series> series;
    bool log_x = false;  // base-2 tick placement for particle-count axes

    Series& add_line(const std::string& label, std::vector<double> x, std::vector<double> y);
    Series& add_scatter(const std::string& label, std::vector<double> x, std::vector<double> y);
    Series& add_band(const std::string& label, std::vector<double> x, std::vector<double> y,
                     std::vector<double> lo, std::vector<double> hi);
};

// Evenly spaced "nice" tick positions covering [lo, hi] (exposed for tests).
std::vector<double> nice_ticks(double lo, double hi, int target);

std::string render_svg(const Figure& fig, int width = 640, int height = 420);

void save_svg(const Figure& fig, const std::string& path, int width = 640, int height = 420);

}  // namespace wmsteer
