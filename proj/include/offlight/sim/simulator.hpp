#pragma once

#include "offlight/sim/network.hpp"

#include <deque>
#include <optional>
#include <span>
#include <utility>

namespace offlight::sim {

struct LaneState {
    int count = 0;
    int queue = 0;
    double speed = 1.0;
};

// Per-agent local observation: (n, s, q) per incoming lane then a phase one-hot.
struct Observation {
    int agent = 0;
    std::vector<double> features;

    int current_phase() const;
};

struct Vehicle {
    int id = 0;
    int entry_time = 0;
    int lane = -1;       // -1 while waiting outside the network or after exit
    int ready_time = 0;  // second at which it reaches the stop line
    int next_lane = -2;  // downstream lane chosen for the next crossing; -2 = undecided, -1 = exit
    std::optional<int> exit_time;
};

struct IntersectionSignal {
    int phase = 0;
    int pending_phase = 0;
    int yellow_remaining = 0;
};

// Precomputed lane geometry shared by all states of one network.
struct Topology {
    NetworkSpec spec;
    AdjacencyGraph graph;
    // downstream_road[lane]: first lane index of the downstream approach, -1 = exits the network.
    std::vector<int> downstream_road;
    // Entry approaches (first lane index of the approach) fed by external demand.
    std::vector<int> entry_roads;
    // For each intersection and phase: green incoming lane indices.
    std::vector<std::vector<std::vector<int>>> green_lanes;
};

struct SimState {
    std::shared_ptr<const Topology> topology;
    int clock = 0;
    std::vector<std::deque<int>> lanes;    // vehicle ids in FIFO order
    std::vector<std::deque<int>> backlog;  // per entry road, vehicles not yet admitted
    std::vector<double> discharge_credit;  // per lane
    std::vector<IntersectionSignal> signals;
    std::vector<Vehicle> vehicles;
    int vehicles_exited = 0;
    std::mt19937_64 rng;

    const NetworkSpec& spec() const { return topology->spec; }
    int num_agents() const { return spec().num_intersections(); }
    int num_lanes() const { return static_cast<int>(lanes.size()); }

    LaneState lane_state(int lane) const;
    int lane_queue(int lane) const;
    int total_queue() const;
    int vehicles_entered() const { return static_cast<int>(vehicles.size()); }
    int vehicles_in_network() const;  // counted from lanes and entry backlogs
    bool done() const { return clock >= spec().episode_length_s; }

    // Travel times of all vehicles; unfinished ones run to `end_time`.
    std::vector<int> travel_times(int end_time) const;

    // Places `count` vehicles directly on a lane; halted ones sit at the stop line.
    void place_vehicles(int lane, int count, bool halted, int next_lane = -2);
};

// Global lane index of (intersection, approach, turn).
int lane_index(int intersection, int approach, int turn);

std::pair<SimState, AdjacencyGraph> build_grid(const NetworkSpec& spec);

Observation observe(const SimState& state, int agent);
std::vector<Observation> observe_all(const SimState& state);

struct StepResult {
    double reward = 0.0;
    std::vector<Observation> observations;
    bool done = false;
};

// Advances one control interval in place.
StepResult step(SimState& state, std::span<const int> joint_action);

double pressure(const SimState& state, int agent, const Phase& phase);

}  // namespace offlight::sim
