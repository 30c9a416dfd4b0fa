#pragma once

// Bare-bones SVG rendering for the CLI's CSV series. Line charts and
// two-series histograms only.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace caac::plot {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
    std::string color = "#1f77b4";
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

struct Frame {
    double x0, x1, y0, y1;
    static constexpr double kW = 640, kH = 400, kL = 60, kR = 20, kT = 40, kB = 50;

    double sx(double x) const { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); }
    double sy(double y) const { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); }
};

inline std::string open(const Frame& f, const std::string& title, const std::string& xlabel,
                        const std::string& ylabel) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
    s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         escape(title) + "</text>\n";
    const double bx = f.sx(f.x0), by = f.sy(f.y0), tx = f.sx(f.x1), ty = f.sy(f.y1);
    s += "<path d=\"M" + num(bx) + "," + num(ty) + " L" + num(bx) + "," + num(by) + " L" + num(tx) + "," + num(by) +
         "\" stroke=\"black\" fill=\"none\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
        s += "<text x=\"" + num(f.sx(xv)) + "\" y=\"" + num(by + 16) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + num(xv) + "</text>\n";
        s += "<text x=\"" + num(bx - 6) + "\" y=\"" + num(f.sy(yv) + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(yv) + "</text>\n";
    }
    s += "<text x=\"320\" y=\"392\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
         escape(xlabel) + "</text>\n";
    s += "<text x=\"14\" y=\"200\" transform=\"rotate(-90 14 200)\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"12\">" +
         escape(ylabel) + "</text>\n";
    return s;
}

inline std::string legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string s;
    double y = 50;
    for (const auto& [name, color] : entries) {
        s += "<rect x=\"480\" y=\"" + num(y - 9) + "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
        s += "<text x=\"496\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(name) +
             "</text>\n";
        y += 16;
    }
    return s;
}

}  // namespace detail

/// Line chart of one or more series. Axis ranges cover all points; y starts at
/// min(0, ymin).
inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool first = true;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (first) {
                x0 = x1 = x;
                y1 = y;
                first = false;
            }
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const detail::Frame f{x0, x1, y0, y1};
    std::string svg = detail::open(f, title, xlabel, ylabel);
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& s : series) {
        if (s.points.empty()) continue;
        std::string d;
        for (std::size_t i = 0; i < s.points.size(); ++i)
            d += (i ? " L" : "M") + detail::num(f.sx(s.points[i].first)) + "," + detail::num(f.sy(s.points[i].second));
        svg += "<path d=\"" + d + "\" stroke=\"" + s.color + "\" stroke-width=\"2\" fill=\"none\"/>\n";
        keys.emplace_back(s.name, s.color);
    }
    svg += detail::legend(keys);
    svg += "</svg>\n";
    return svg;
}

/// Normalized histograms of two samples over [lo, hi] with `bins` bins, drawn side by side.
inline std::string histogram_pair(const std::string& title, const std::string& xlabel, const std::string& name_a,
                                  const std::vector<double>& a, const std::string& name_b,
                                  const std::vector<double>& b, double lo = 0.0, double hi = 1.0, int bins = 10) {
    auto density = [&](const std::vector<double>& v) {
        std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
        for (double x : v) {
            int i = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
            i = std::clamp(i, 0, bins - 1);
            h[static_cast<std::size_t>(i)] += 1.0;
        }
        if (!v.empty())
            for (double& c : h) c /= static_cast<double>(v.size());
        return h;
    };
    const auto ha = density(a), hb = density(b);
    double top = 0.0;
    for (double v : ha) top = std::max(top, v);
    for (double v : hb) top = std::max(top, v);
    if (top == 0.0) top = 1.0;
    const detail::Frame f{lo, hi, 0.0, top};
    std::string svg = detail::open(f, title, xlabel, "fraction of tokens");
    const double width = (hi - lo) / bins;
    for (int i = 0; i < bins; ++i) {
        const double left = lo + i * width;
        auto bar = [&](double x, double w, double h, const char* color) {
            svg += "<rect x=\"" + detail::num(f.sx(x)) + "\" y=\"" + detail::num(f.sy(h)) + "\" width=\"" +
                   detail::num(f.sx(x + w) - f.sx(x)) + "\" height=\"" + detail::num(f.sy(0) - f.sy(h)) +
                   "\" fill=\"" + color + "\"/>\n";
        };
        bar(left, width / 2, ha[static_cast<std::size_t>(i)], "#2ca02c");
        bar(left + width / 2, width / 2, hb[static_cast<std::size_t>(i)], "#d62728");
    }
    svg += detail::legend({{name_a, "#2ca02c"}, {name_b, "#d62728"}});
    svg += "</svg>\n";
    return svg;
}

}  // namespace caac::plot
