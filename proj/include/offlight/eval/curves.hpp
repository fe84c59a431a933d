#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace offlight::eval {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Trailing windowed mean of `values`; window 1 is the identity.
Series learning_curve(std::span<const double> steps, std::span<const double> values, int window,
                      std::string label = "");

// Long format: series,x,y.
void write_series_csv(const std::vector<Series>& series, const std::filesystem::path& path);
std::vector<Series> read_series_csv(const std::filesystem::path& path);

struct PlotOptions {
    std::string title;
    std::string x_label = "training step";
    std::string y_label = "QL (vehicles)";
    int width = 720;
    int height = 440;
};

// Static SVG line chart with one polyline and one legend entry per series.
// A <metadata> block carries the title, axis labels and series names.
void write_svg_plot(const std::vector<Series>& series, const std::filesystem::path& path,
                    const PlotOptions& options = {});

}  // namespace offlight::eval
