#include "rim/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "rim/errors.hpp"

namespace rim::plot {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string render_svg(const LinePlot& plot) {
    auto ty = [&](double v) { return plot.log_y ? std::log10(std::max(v, 1e-12)) : v; };
    double x0 = std::numeric_limits<double>::infinity();
    double x1 = -x0;
    double y0 = x0;
    double y1 = -x0;
    for (const auto& s : plot.series) {
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                continue;
            }
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    }
    if (!std::isfinite(x0)) {
        x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
    }
    if (x1 == x0) {
        x1 = x0 + 1.0;
    }
    if (y1 == y0) {
        y1 = y0 + 1.0;
    }
    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
    auto py = [&](double v) { return kTop + ph - (ty(v) - y0) / (y1 - y0) * ph; };
    auto py_raw = [&](double t) { return kTop + ph - (t - y0) / (y1 - y0) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << fmt(kLeft + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << escape(plot.title) << "</text>\n";
    svg << "<rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\"" << fmt(pw) << "\" height=\""
        << fmt(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    constexpr int kTicks = 5;
    for (int i = 0; i <= kTicks; ++i) {
        const double xv = x0 + (x1 - x0) * i / kTicks;
        const double yv = y0 + (y1 - y0) * i / kTicks;
        svg << "<line x1=\"" << fmt(px(xv)) << "\" y1=\"" << fmt(kTop + ph) << "\" x2=\"" << fmt(px(xv))
            << "\" y2=\"" << fmt(kTop + ph + 5) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << fmt(kTop + ph + 18) << "\" text-anchor=\"middle\">"
            << tick_label(xv) << "</text>\n";
        svg << "<line x1=\"" << fmt(kLeft - 5) << "\" y1=\"" << fmt(py_raw(yv)) << "\" x2=\"" << fmt(kLeft)
            << "\" y2=\"" << fmt(py_raw(yv)) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(py_raw(yv) + 4) << "\" text-anchor=\"end\">"
            << tick_label(plot.log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
    }
    svg << "<text x=\"" << fmt(kLeft + pw / 2) << "\" y=\"" << fmt(kHeight - 12) << "\" text-anchor=\"middle\">"
        << escape(plot.x_label) << "</text>\n";
    svg << "<text transform=\"translate(16," << fmt(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape(plot.y_label) << "</text>\n";

    for (std::size_t k = 0; k < plot.series.size(); ++k) {
        const auto& s = plot.series[k];
        const char* color = kColors[k % std::size(kColors)];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                svg << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
            }
        }
        svg << "\"/>\n";
        const double ly = kTop + 10 + 18.0 * k;
        svg << "<line x1=\"" << fmt(kLeft + pw + 12) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(kLeft + pw + 32)
            << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << fmt(kLeft + pw + 37) << "\" y=\"" << fmt(ly + 4) << "\">" << escape(s.label)
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_svg(const LinePlot& plot, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << render_svg(plot);
}

}  // namespace rim::plot
