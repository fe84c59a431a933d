#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace offlight::sim {

// Compass direction of an approach, clockwise from north.
enum Direction : int { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };
enum Turn : int { kLeft = 0, kThrough = 1, kRight = 2 };

inline constexpr int kApproaches = 4;
inline constexpr int kTurns = 3;
inline constexpr int kLanesPerIntersection = kApproaches * kTurns;

// One incoming lane group (approach, turn) granted green by a phase.
struct Movement {
    int approach = kNorth;
    int turn = kThrough;

    bool operator==(const Movement&) const = default;
};

struct Phase {
    int id = 0;
    std::vector<Movement> movements;

    bool operator==(const Phase&) const = default;
};

// NS-through, NS-left, EW-through, EW-left; right turns ride with through.
std::vector<Phase> default_phases();

struct NetworkSpec {
    int grid_rows = 2;
    int grid_cols = 2;
    int lanes_per_approach = 3;
    int lane_capacity = 20;
    double saturation_flow = 1.0;  // vehicles / s / lane
    double demand_rate = 300.0;    // vehicles / h / boundary entry approach
    std::vector<Phase> phase_set = default_phases();
    int yellow_duration_s = 5;
    int action_interval_s = 5;
    int episode_length_s = 360;
    int link_travel_s = 10;  // free-flow time from lane entry to stop line
    std::uint64_t seed = 0;

    // Throws ConfigError when an invariant does not hold.
    void validate() const;
    int control_steps() const { return episode_length_s / action_interval_s; }
    int num_intersections() const { return grid_rows * grid_cols; }
    int num_phases() const { return static_cast<int>(phase_set.size()); }
    int lanes_per_intersection() const { return kApproaches * lanes_per_approach; }
    int observation_size() const { return 3 * lanes_per_intersection() + num_phases(); }

    bool operator==(const NetworkSpec&) const = default;
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

// Intersection graph; `adjacent` is symmetric with a unit diagonal.
struct AdjacencyGraph {
    int num_nodes = 0;
    std::vector<std::vector<bool>> adjacent;

    int num_edges() const;
    // Sorted in-neighbour list of every node, self included.
    std::vector<std::vector<int>> neighbour_lists() const;
};

AdjacencyGraph grid_adjacency(int rows, int cols);

}  // namespace offlight::sim
