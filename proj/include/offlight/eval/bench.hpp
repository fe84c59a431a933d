#pragma once

#include "offlight/train/agent_net.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace offlight::eval {

struct ScalingRow {
    int rows = 0;
    int cols = 0;
    int nodes = 0;          // N
    int edges = 0;          // E, undirected links between intersections
    double step_ms = 0.0;   // simulator step + policy forward, per control step
};

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

struct ScalingResult {
    std::vector<ScalingRow> rows;
    std::optional<LineFit> fit;  // time vs N + E; needs at least two distinct sizes
};

struct BenchOptions {
    train::AgentNetConfig net;
    int episodes = 3;   // timed episodes per grid; the fastest is kept
    std::uint64_t seed = 0;
};

// Ordinary least squares of y on x with the coefficient of determination.
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

ScalingResult scaling_benchmark(const std::vector<std::pair<int, int>>& grids, const BenchOptions& options = {});

void to_json(nlohmann::json& j, const ScalingResult& r);
void write_scaling_csv(const ScalingResult& r, const std::filesystem::path& path);

}  // namespace offlight::eval
