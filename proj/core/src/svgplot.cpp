#include "wmsteer/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "wmsteer/common.hpp"

namespace wmsteer {

namespace {

// Okabe-Ito palette: colorblind-safe and print-friendly.
const char* kPalette[] = {"#0072b2", "#d55e00", "#009e73", "#cc79a7",
                          "#e69f00", "#56b4e9", "#f0e442", "#000000"};
constexpr int kPaletteSize = 8;

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Extent {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void include(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool valid() const { return lo <= hi; }
};

}  // namespace

Series& Figure::add_line(const std::string& label, std::vector<double> x,
                         std::vector<double> y) {
    Series s;
    s.label = label;
    s.x = std::move(x);
    s.y = std::move(y);
    series.push_back(std::move(s));
    return series.back();
}

Series& Figure::add_scatter(const std::string& label, std::vector<double> x,
                            std::vector<double> y) {
    Series& s = add_line(label, std::move(x), std::move(y));
    s.points = true;
    s.line = false;
    return s;
}

Series& Figure::add_band(const std::string& label, std::vector<double> x, std::vector<double> y,
                         std::vector<double> lo, std::vector<double> hi) {
    Series& s = add_line(label, std::move(x), std::move(y));
    s.lo = std::move(lo);
    s.hi = std::move(hi);
    s.points = true;
    return s;
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
    require(target >= 2, "nice_ticks: need at least two ticks");
    if (!(hi > lo)) {  // degenerate span: widen around the value
        const double pad = (lo == 0.0) ? 1.0 : std::abs(lo) * 0.5;
        lo -= pad;
        hi += pad;
    }
    const double raw = (hi - lo) / (target - 1);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        if (mag * m >= raw) {
            step = mag * m;
            break;
        }
    }
    std::vector<double> ticks;
    double t = std::ceil(lo / step - 1e-9) * step;
    for (; t <= hi + 1e-9 * step; t += step) ticks.push_back(t == 0.0 ? 0.0 : t);
    if (ticks.size() < 2) ticks = {lo, hi};
    return ticks;
}

std::string render_svg(const Figure& fig, int width, int height) {
    require(width > 100 && height > 80, "render_svg: canvas too small");
    const double ml = 62, mr = 16, mt = fig.title.empty() ? 16 : 34, mb = 46;
    const double pw = width - ml - mr, ph = height - mt - mb;

    Extent ex, ey;
    for (const Series& s : fig.series) {
        require(s.x.size() == s.y.size(), "render_svg: series '" + s.label + "' x/y mismatch");
        require(s.lo.empty() || (s.lo.size() == s.x.size() && s.hi.size() == s.x.size()),
                "render_svg: series '" + s.label + "' band size mismatch");
        for (double v : s.x) ex.include(fig.log_x ? std::log2(v) : v);
        for (double v : s.y) ey.include(v);
        for (double v : s.lo) ey.include(v);
        for (double v : s.hi) ey.include(v);
    }
    if (!ex.valid()) ex = {0.0, 1.0};
    if (!ey.valid()) ey = {0.0, 1.0};
    if (ex.lo == ex.hi) {
        ex.lo -= 0.5;
        ex.hi += 0.5;
    }
    if (ey.lo == ey.hi) {
        const double pad = (ey.lo == 0.0) ? 1.0 : std::abs(ey.lo) * 0.1;
        ey.lo -= pad;
        ey.hi += pad;
    }
    // A little headroom so lines do not sit on the frame.
    const double padx = (ex.hi - ex.lo) * 0.04, pady = (ey.hi - ey.lo) * 0.06;
    ex.lo -= padx;
    ex.hi += padx;
    ey.lo -= pady;
    ey.hi += pady;

    auto sx = [&](double v) {
        const double u = fig.log_x ? std::log2(v) : v;
        return ml + (u - ex.lo) / (ex.hi - ex.lo) * pw;
    };
    auto sy = [&](double v) { return mt + ph - (v - ey.lo) / (ey.hi - ey.lo) * ph; };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
           std::to_string(width) + " " + std::to_string(height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<g font-family=\"Helvetica,Arial,sans-serif\" font-size=\"11\">\n";

    if (!fig.title.empty())
        out += "<text x=\"" + fmt(ml + pw / 2) +
               "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\" font-weight=\"bold\">" +
               escape_xml(fig.title) + "</text>\n";

    // Gridlines and tick labels.
    std::vector<double> xticks;
    if (fig.log_x) {
        for (double e = std::ceil(ex.lo - 1e-9); e <= ex.hi + 1e-9; e += 1.0)
            xticks.push_back(std::pow(2.0, e));
    } else {
        xticks = nice_ticks(ex.lo, ex.hi, 6);
    }
    const std::vector<double> yticks = nice_ticks(ey.lo, ey.hi, 6);
    for (double t : xticks) {
        const double gx = sx(t);
        if (gx < ml - 0.5 || gx > ml + pw + 0.5) continue;
        out += "<line x1=\"" + fmt(gx) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(gx) +
               "\" y2=\"" + fmt(mt + ph) + "\" stroke=\"#e4e4e4\"/>\n";
        out += "<text x=\"" + fmt(gx) + "\" y=\"" + fmt(mt + ph + 16) +
               "\" text-anchor=\"middle\">" + fmt(t) + "</text>\n";
    }
    for (double t : yticks) {
        const double gy = sy(t);
        if (gy < mt - 0.5 || gy > mt + ph + 0.5) continue;
        out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(gy) + "\" x2=\"" + fmt(ml + pw) +
               "\" y2=\"" + fmt(gy) + "\" stroke=\"#e4e4e4\"/>\n";
        out += "<text x=\"" + fmt(ml - 6) + "\" y=\"" + fmt(gy + 4) +
               "\" text-anchor=\"end\">" + fmt(t) + "</text>\n";
    }
    out += "<rect x=\"" + fmt(ml) + "\" y=\"" + fmt(mt) + "\" width=\"" + fmt(pw) +
           "\" height=\"" + fmt(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    out += "<text x=\"" + fmt(ml + pw / 2) + "\" y=\"" + fmt(height - 8.0) +
           "\" text-anchor=\"middle\">" + escape_xml(fig.xlabel) + "</text>\n";
    out += "<text x=\"14\" y=\"" + fmt(mt + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
           fmt(mt + ph / 2) + ")\">" + escape_xml(fig.ylabel) + "</text>\n";

    // Series: bands first so lines stay visible on top.
    for (std::size_t si = 0; si < fig.series.size(); ++si) {
        const Series& s = fig.series[si];
        if (s.lo.empty() || s.x.empty()) continue;
        const char* color = kPalette[si % kPaletteSize];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i)
            pts += fmt(sx(s.x[i])) + "," + fmt(sy(s.hi[i])) + " ";
        for (std::size_t i = s.x.size(); i-- > 0;)
            pts += fmt(sx(s.x[i])) + "," + fmt(sy(s.lo[i])) + " ";
        out += "<polygon points=\"" + pts + "\" fill=\"" + color +
               "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    for (std::size_t si = 0; si < fig.series.size(); ++si) {
        const Series& s = fig.series[si];
        if (s.x.empty()) continue;
        const char* color = kPalette[si % kPaletteSize];
        if (s.line && s.x.size() > 1) {
            std::string pts;
            for (std::size_t i = 0; i < s.x.size(); ++i)
                pts += fmt(sx(s.x[i])) + "," + fmt(sy(s.y[i])) + " ";
            out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
                   "\" stroke-width=\"1.8\"/>\n";
        }
        if (s.points)
            for (std::size_t i = 0; i < s.x.size(); ++i)
                out += "<circle cx=\"" + fmt(sx(s.x[i])) + "\" cy=\"" + fmt(sy(s.y[i])) +
                       "\" r=\"2.6\" fill=\"" + color + "\"/>\n";
    }

    // Legend (only for labeled series).
    double ly = mt + 10;
    for (std::size_t si = 0; si < fig.series.size(); ++si) {
        const Series& s = fig.series[si];
        if (s.label.empty()) continue;
        const char* color = kPalette[si % kPaletteSize];
        const double lx = ml + pw - 130;
        out += "<line x1=\"" + fmt(lx) + "\" y1=\"" + fmt(ly - 3) + "\" x2=\"" + fmt(lx + 18) +
               "\" y2=\"" + fmt(ly - 3) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + fmt(lx + 23) + "\" y=\"" + fmt(ly) + "\">" +
               escape_xml(s.label) + "</text>\n";
        ly += 15;
    }

    out += "</g>\n</svg>\n";
    return out;
}

void save_svg(const Figure& fig, const std::string& path, int width, int height) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "save_svg: cannot open " + path);
    f << render_svg(fig, width, height);
    require(f.good(), "save_svg: write failed for " + path);
}

}  // namespace wmsteer
