#pragma once

#include "offlight/sim/network.hpp"

#include <string>
#include <vector>

namespace offlight::sim {

// Built-in toy grids ("toy-2x2", "toy-3x3", "toy-4x4") at three demand
// levels ("low", "medium", "high"), in vehicles / h per entry approach.
NetworkSpec scenario_spec(const std::string& scenario, const std::string& demand);
double demand_level(const std::string& demand);
std::vector<std::string> scenario_names();

}  // namespace offlight::sim
