#pragma once

#include "offlight/sim/simulator.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace offlight::control {

enum class ControllerKind { kRandom, kFixedTime, kGreedy, kMaxPressure, kSotl };

std::string to_string(ControllerKind kind);
// Throws ConfigError on an unknown name.
ControllerKind parse_controller_kind(const std::string& name);

struct ControllerSpec {
    ControllerKind kind = ControllerKind::kGreedy;
    int green_steps = 3;          // fixed_time
    double queue_threshold = 4.0;  // sotl, vehicles
    int min_green_steps = 2;       // sotl
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ControllerSpec& spec);
void from_json(const nlohmann::json& j, ControllerSpec& spec);

struct Decision {
    int phase = 0;
    double prob = 1.0;  // probability the controller assigns to `phase`
};

// One rule-based signal controller driving every intersection of an episode.
// Ties are broken toward the lowest phase id.
class Controller {
public:
    Controller(ControllerSpec spec, int num_agents, int num_phases);

    Decision act(const sim::Observation& obs, const sim::SimState& view, int t);
    std::vector<Decision> act_all(const std::vector<sim::Observation>& obs, const sim::SimState& view, int t);

    // Full action distribution the controller would use at this decision.
    std::vector<double> distribution(const sim::Observation& obs, const sim::SimState& view, int t) const;

    const ControllerSpec& spec() const { return spec_; }

private:
    int choose_deterministic(const sim::Observation& obs, const sim::SimState& view, int t) const;

    ControllerSpec spec_;
    int num_phases_;
    std::vector<int> steps_in_phase_;
    std::mt19937_64 rng_;
};

// Total halted vehicles on each phase's green lanes, read from an observation.
std::vector<double> phase_queues(const sim::Observation& obs, const sim::NetworkSpec& spec);

}  // namespace offlight::control
