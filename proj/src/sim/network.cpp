#include "offlight/sim/network.hpp"

#include "offlight/errors.hpp"

#include <set>

namespace offlight::sim {

std::vector<Phase> default_phases() {
    auto through_pair = [](int a, int b) {
        return std::vector<Movement>{{a, kThrough}, {a, kRight}, {b, kThrough}, {b, kRight}};
    };
    return {
        Phase{0, through_pair(kNorth, kSouth)},
        Phase{1, {{kNorth, kLeft}, {kSouth, kLeft}}},
        Phase{2, through_pair(kEast, kWest)},
        Phase{3, {{kEast, kLeft}, {kWest, kLeft}}},
    };
}

void NetworkSpec::validate() const {
    if (grid_rows <= 0 || grid_cols <= 0) throw ConfigError("grid dimensions must be positive");
    if (lanes_per_approach != kTurns) {
        throw ConfigError("lanes_per_approach must be 3 (one lane per turning movement)");
    }
    if (lane_capacity <= 0) throw ConfigError("lane_capacity must be positive");
    if (!(saturation_flow > 0)) throw ConfigError("saturation_flow must be positive");
    if (!(demand_rate >= 0) || demand_rate > 3600.0) throw ConfigError("demand_rate must lie in [0, 3600]");
    if (phase_set.empty()) throw ConfigError("phase_set is empty");
    if (yellow_duration_s < 0) throw ConfigError("yellow_duration_s must be nonnegative");
    if (action_interval_s <= 0) throw ConfigError("action_interval_s must be positive");
    if (episode_length_s <= 0 || episode_length_s % action_interval_s != 0) {
        throw ConfigError("episode_length_s must be a positive multiple of action_interval_s");
    }
    if (link_travel_s < 0) throw ConfigError("link_travel_s must be nonnegative");
    std::set<std::pair<int, int>> covered;
    for (std::size_t i = 0; i < phase_set.size(); ++i) {
        const Phase& p = phase_set[i];
        if (p.id != static_cast<int>(i)) throw ConfigError("phase ids must be contiguous from 0");
        if (p.movements.empty()) throw ConfigError("phase " + std::to_string(p.id) + " grants no movement");
        for (const Movement& m : p.movements) {
            if (m.approach < 0 || m.approach >= kApproaches || m.turn < 0 || m.turn >= kTurns) {
                throw ConfigError("phase " + std::to_string(p.id) + " has an invalid movement");
            }
            covered.insert({m.approach, m.turn});
        }
    }
    if (covered.size() != static_cast<std::size_t>(kLanesPerIntersection)) {
        throw ConfigError("some incoming movement is not served by any phase");
    }
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
    nlohmann::json phases = nlohmann::json::array();
    for (const Phase& p : spec.phase_set) {
        nlohmann::json moves = nlohmann::json::array();
        for (const Movement& m : p.movements) moves.push_back({m.approach, m.turn});
        phases.push_back({{"id", p.id}, {"movements", moves}});
    }
    j = {{"grid_rows", spec.grid_rows},
         {"grid_cols", spec.grid_cols},
         {"lanes_per_approach", spec.lanes_per_approach},
         {"lane_capacity", spec.lane_capacity},
         {"saturation_flow", spec.saturation_flow},
         {"demand_rate", spec.demand_rate},
         {"phase_set", phases},
         {"yellow_duration_s", spec.yellow_duration_s},
         {"action_interval_s", spec.action_interval_s},
         {"episode_length_s", spec.episode_length_s},
         {"link_travel_s", spec.link_travel_s},
         {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
    NetworkSpec d;
    spec.grid_rows = j.value("grid_rows", d.grid_rows);
    spec.grid_cols = j.value("grid_cols", d.grid_cols);
    spec.lanes_per_approach = j.value("lanes_per_approach", d.lanes_per_approach);
    spec.lane_capacity = j.value("lane_capacity", d.lane_capacity);
    spec.saturation_flow = j.value("saturation_flow", d.saturation_flow);
    spec.demand_rate = j.value("demand_rate", d.demand_rate);
    spec.yellow_duration_s = j.value("yellow_duration_s", d.yellow_duration_s);
    spec.action_interval_s = j.value("action_interval_s", d.action_interval_s);
    spec.episode_length_s = j.value("episode_length_s", d.episode_length_s);
    spec.link_travel_s = j.value("link_travel_s", d.link_travel_s);
    spec.seed = j.value("seed", d.seed);
    if (j.contains("phase_set")) {
        spec.phase_set.clear();
        for (const auto& p : j.at("phase_set")) {
            Phase phase;
            phase.id = p.at("id").get<int>();
            for (const auto& m : p.at("movements")) phase.movements.push_back({m.at(0).get<int>(), m.at(1).get<int>()});
            spec.phase_set.push_back(std::move(phase));
        }
    } else {
        spec.phase_set = d.phase_set;
    }
}

int AdjacencyGraph::num_edges() const {
    int e = 0;
    for (int i = 0; i < num_nodes; ++i) {
        for (int j = i + 1; j < num_nodes; ++j) e += adjacent[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ? 1 : 0;
    }
    return e;
}

std::vector<std::vector<int>> AdjacencyGraph::neighbour_lists() const {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(num_nodes));
    for (int i = 0; i < num_nodes; ++i) {
        for (int j = 0; j < num_nodes; ++j) {
            if (adjacent[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) out[static_cast<std::size_t>(i)].push_back(j);
        }
    }
    return out;
}

AdjacencyGraph grid_adjacency(int rows, int cols) {
    if (rows <= 0 || cols <= 0) throw ConfigError("grid dimensions must be positive");
    AdjacencyGraph g;
    g.num_nodes = rows * cols;
    g.adjacent.assign(static_cast<std::size_t>(g.num_nodes), std::vector<bool>(static_cast<std::size_t>(g.num_nodes), false));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int i = r * cols + c;
            g.adjacent[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = true;
            if (r + 1 < rows) {
                const int j = (r + 1) * cols + c;
                g.adjacent[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
                g.adjacent[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = true;
            }
            if (c + 1 < cols) {
                const int j = i + 1;
                g.adjacent[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
                g.adjacent[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = true;
            }
        }
    }
    return g;
}

}  // namespace offlight::sim
