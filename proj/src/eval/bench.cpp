#include "offlight/eval/bench.hpp"

#include "offlight/data/dataset.hpp"
#include "offlight/errors.hpp"
#include "offlight/train/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace offlight::eval {

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ArgumentError("fit_line: need at least two paired points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw ArgumentError("fit_line: x values are all equal");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return f;
}

namespace {

double time_episode(const sim::NetworkSpec& spec, train::PolicyRunner& runner, std::mt19937_64& rng) {
    auto [state, graph] = sim::build_grid(spec);
    (void)graph;
    runner.reset();
    std::vector<sim::Observation> obs = sim::observe_all(state);
    std::vector<double> flat;
    std::vector<int> action(static_cast<std::size_t>(spec.num_intersections()));
    int steps = 0;
    const auto t0 = std::chrono::steady_clock::now();
    while (!state.done()) {
        flat.clear();
        for (const auto& o : obs) flat.insert(flat.end(), o.features.begin(), o.features.end());
        const nn::Matrix p = runner.probabilities(flat);
        // Sample so the network keeps switching phases and the simulator does real work.
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            std::discrete_distribution<int> d(p.row(i).data(), p.row(i).data() + p.cols());
            action[static_cast<std::size_t>(i)] = d(rng);
        }
        obs = sim::step(state, action).observations;
        ++steps;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return ms / std::max(steps, 1);
}

}  // namespace

ScalingResult scaling_benchmark(const std::vector<std::pair<int, int>>& grids, const BenchOptions& options) {
    if (grids.empty()) throw ArgumentError("scaling_benchmark: no grid sizes");
    if (options.episodes < 1) throw ArgumentError("scaling_benchmark: episodes must be >= 1");
    ScalingResult out;
    std::mt19937_64 rng(options.seed);
    for (const auto& [r, c] : grids) {
        sim::NetworkSpec spec;
        spec.grid_rows = r;
        spec.grid_cols = c;
        spec.seed = options.seed;
        spec.validate();
        train::TrainerConfig tc;
        tc.algo = train::Algo::kCql;
        tc.net = options.net;
        tc.seed = options.seed;
        const train::PolicyModel model(tc, data::Fingerprint::of(spec));
        train::PolicyRunner runner(model);
        time_episode(spec, runner, rng);  // warm-up
        double best = std::numeric_limits<double>::infinity();
        for (int e = 0; e < options.episodes; ++e) best = std::min(best, time_episode(spec, runner, rng));
        ScalingRow row;
        row.rows = r;
        row.cols = c;
        row.nodes = spec.num_intersections();
        row.edges = sim::grid_adjacency(r, c).num_edges();
        row.step_ms = best;
        out.rows.push_back(row);
    }
    std::vector<double> x, y;
    for (const auto& row : out.rows) {
        x.push_back(row.nodes + row.edges);
        y.push_back(row.step_ms);
    }
    if (std::any_of(x.begin(), x.end(), [&](double v) { return v != x.front(); })) out.fit = fit_line(x, y);
    return out;
}

void to_json(nlohmann::json& j, const ScalingResult& r) {
    j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        j["rows"].push_back({{"grid", std::to_string(row.rows) + "x" + std::to_string(row.cols)},
                             {"N", row.nodes},
                             {"E", row.edges},
                             {"step_ms", row.step_ms}});
    }
    if (r.fit) {
        j["fit"] = {{"slope_ms_per_unit", r.fit->slope}, {"intercept_ms", r.fit->intercept}, {"r2", r.fit->r2}};
    } else {
        j["fit"] = nullptr;
    }
}

void write_scaling_csv(const ScalingResult& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out.precision(10);
    out << "rows,cols,N,E,N_plus_E,step_ms\n";
    for (const auto& row : r.rows) {
        out << row.rows << "," << row.cols << "," << row.nodes << "," << row.edges << "," << row.nodes + row.edges << ","
            << row.step_ms << "\n";
    }
}

}  // namespace offlight::eval
