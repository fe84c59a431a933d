#pragma once

#include "offlight/control/controllers.hpp"
#include "offlight/sim/simulator.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace offlight::eval {

// A joint policy that can be rolled out in the simulator. One instance per
// episode; reset() is called before the first step.
class RolloutPolicy {
public:
    virtual ~RolloutPolicy() = default;
    virtual void reset(const sim::SimState& state) = 0;
    virtual std::vector<int> act(const std::vector<sim::Observation>& obs, const sim::SimState& state, int t) = 0;
};

// Builds a fresh policy for the given episode seed.
using PolicyFactory = std::function<std::unique_ptr<RolloutPolicy>(std::uint64_t episode_seed)>;

PolicyFactory controller_policy(const control::ControllerSpec& spec);

struct EpisodeStats {
    double att = 0.0;        // mean travel time over vehicles, 0 when none entered
    long vehicles = 0;
    double ql = 0.0;         // time-average total queue over control steps
    std::vector<double> rewards;
};

EpisodeStats run_episode(const sim::NetworkSpec& spec, RolloutPolicy& policy);

struct SeedResult {
    std::uint64_t seed = 0;
    std::optional<double> att;
    double ql = 0.0;
    long vehicles = 0;
};

struct EvalReport {
    std::string scenario;
    std::string demand;
    std::string algorithm;
    std::vector<std::uint64_t> seeds;
    int episodes = 0;
    std::optional<double> att_mean;
    std::optional<double> att_std;
    double ql_mean = 0.0;
    std::optional<double> ql_std;
    long vehicles = 0;
    std::vector<SeedResult> per_seed;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

// Episode seed used for (seed, episode) pairs so every policy sees identical demand.
std::uint64_t eval_episode_seed(std::uint64_t seed, int episode);

EvalReport evaluate(const PolicyFactory& factory, const sim::NetworkSpec& spec, int episodes,
                    const std::vector<std::uint64_t>& seeds, std::string algorithm = "",
                    std::string scenario = "", std::string demand = "");

}  // namespace offlight::eval
