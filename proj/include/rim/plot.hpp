#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rim::plot {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    bool log_y = false;
};

/// Self-contained SVG line chart with axes, ticks and a legend.
std::string render_svg(const LinePlot& plot);

void write_svg(const LinePlot& plot, const std::filesystem::path& path);

}  // namespace rim::plot
