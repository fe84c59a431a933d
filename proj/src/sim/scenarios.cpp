#include "offlight/sim/scenarios.hpp"

#include "offlight/errors.hpp"

namespace offlight::sim {

double demand_level(const std::string& demand) {
    if (demand == "low") return 200.0;
    if (demand == "medium") return 300.0;
    if (demand == "high") return 400.0;
    throw ConfigError("unknown demand level '" + demand + "' (expected low, medium or high)");
}

std::vector<std::string> scenario_names() { return {"toy-2x2", "toy-3x3", "toy-4x4"}; }

NetworkSpec scenario_spec(const std::string& scenario, const std::string& demand) {
    NetworkSpec spec;
    if (scenario == "toy-2x2") {
        spec.grid_rows = spec.grid_cols = 2;
    } else if (scenario == "toy-3x3") {
        spec.grid_rows = spec.grid_cols = 3;
    } else if (scenario == "toy-4x4") {
        spec.grid_rows = spec.grid_cols = 4;
    } else {
        throw ConfigError("unknown scenario '" + scenario + "'");
    }
    spec.demand_rate = demand_level(demand);
    return spec;
}

}  // namespace offlight::sim
