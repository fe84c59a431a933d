#include "offlight/eval/curves.hpp"

#include "offlight/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace offlight::eval {

Series learning_curve(std::span<const double> steps, std::span<const double> values, int window, std::string label) {
    if (values.empty()) throw ArgumentError("learning_curve: empty log");
    if (steps.size() != values.size()) throw ShapeError("learning_curve: steps and values differ in length");
    if (window < 1) throw ArgumentError("learning_curve: window must be >= 1");
    Series s;
    s.label = std::move(label);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::size_t first = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - static_cast<std::size_t>(window) : 0;
        double sum = 0.0;
        for (std::size_t j = first; j <= i; ++j) sum += values[j];
        s.x.push_back(steps[i]);
        s.y.push_back(sum / static_cast<double>(i + 1 - first));
    }
    return s;
}

void write_series_csv(const std::vector<Series>& series, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out.precision(12);
    out << "series,x,y\n";
    for (const auto& s : series) {
        if (s.label.find(',') != std::string::npos) throw ArgumentError("series label may not contain ','");
        for (std::size_t i = 0; i < s.x.size(); ++i) out << s.label << "," << s.x[i] << "," << s.y[i] << "\n";
    }
}

std::vector<Series> read_series_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LookupError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "series,x,y") throw ParseError("unexpected curve CSV header in " + path.string(), 0);
    std::vector<Series> out;
    std::size_t offset = line.size() + 1;
    while (std::getline(in, line)) {
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (line.empty()) continue;
        const auto a = line.find(',');
        const auto b = line.find(',', a == std::string::npos ? a : a + 1);
        if (a == std::string::npos || b == std::string::npos) throw ParseError("malformed curve row", here);
        const std::string label = line.substr(0, a);
        double x = 0.0, y = 0.0;
        try {
            x = std::stod(line.substr(a + 1, b - a - 1));
            y = std::stod(line.substr(b + 1));
        } catch (const std::exception&) {
            throw ParseError("non-numeric curve value", here);
        }
        if (out.empty() || out.back().label != label) out.push_back({label, {}, {}});
        out.back().x.push_back(x);
        out.back().y.push_back(y);
    }
    return out;
}

namespace {

std::string escape(const std::string& s) {
    std::string out;
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

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

void write_svg_plot(const std::vector<Series>& series, const std::filesystem::path& path, const PlotOptions& o) {
    if (series.empty()) throw ArgumentError("plot: no series");
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size() || s.x.empty()) throw ShapeError("plot: series '" + s.label + "' is empty or ragged");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (x1 == x0) x1 = x0 + 1.0;
    if (y1 == y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const double left = 70, right = 160, top = 40, bottom = 55;
    const double pw = o.width - left - right;
    const double ph = o.height - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    nlohmann::json meta = {{"title", o.title}, {"x_label", o.x_label}, {"y_label", o.y_label}};
    for (const auto& s : series) meta["series"].push_back({{"label", s.label}, {"points", s.x.size()}});

    std::ostringstream svg;
    svg.precision(6);
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << o.width << "\" height=\"" << o.height
        << "\" viewBox=\"0 0 " << o.width << " " << o.height << "\">\n"
        << "<metadata>" << escape(meta.dump()) << "</metadata>\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << o.width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(o.title)
        << "</text>\n"
        << "<g class=\"axes\" stroke=\"black\">\n"
        << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n"
        << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n"
        << "</g>\n<g class=\"ticks\" font-size=\"11\">\n";
    for (int k = 0; k <= 4; ++k) {
        const double fx = x0 + (x1 - x0) * k / 4.0;
        const double fy = y0 + (y1 - y0) * k / 4.0;
        svg << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fx << "</text>\n"
            << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << fy << "</text>\n";
    }
    svg << "</g>\n"
        << "<text x=\"" << left + pw / 2 << "\" y=\"" << o.height - 12 << "\" text-anchor=\"middle\" font-size=\"13\">"
        << escape(o.x_label) << "</text>\n"
        << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">"
        << escape(o.y_label) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        svg << "<polyline class=\"series\" data-label=\"" << escape(s.label) << "\" fill=\"none\" stroke=\""
            << kColors[k % std::size(kColors)] << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) svg << (i ? " " : "") << px(s.x[i]) << "," << py(s.y[i]);
        svg << "\"/>\n";
    }
    svg << "<g class=\"legend\" font-size=\"12\">\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const double y = top + 10 + 20.0 * static_cast<double>(k);
        svg << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << y << "\" x2=\"" << left + pw + 36 << "\" y2=\"" << y
            << "\" stroke=\"" << kColors[k % std::size(kColors)] << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << left + pw + 42 << "\" y=\"" << y + 4 << "\">" << escape(series[k].label) << "</text>\n";
    }
    svg << "</g>\n</svg>\n";

    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << svg.str();
}

}  // namespace offlight::eval
