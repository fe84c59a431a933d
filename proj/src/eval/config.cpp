#include "offlight/eval/config.hpp"

#include "offlight/errors.hpp"
#include "offlight/sim/scenarios.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace offlight::eval {

PipelineConfig::PipelineConfig() {
    MixturePart greedy;
    greedy.controller.kind = control::ControllerKind::kGreedy;
    greedy.fraction = 0.5;
    MixturePart random;
    random.controller.kind = control::ControllerKind::kRandom;
    random.fraction = 0.5;
    mixture = {greedy, random};
    trainer.offlight = true;
}

sim::NetworkSpec PipelineConfig::network() const {
    sim::NetworkSpec spec = sim::scenario_spec(scenario, demand);
    if (!network_overrides.empty()) {
        nlohmann::json j = spec;
        j.merge_patch(network_overrides);
        spec = j.get<sim::NetworkSpec>();
    }
    spec.validate();
    return spec;
}

void PipelineConfig::set_seed(std::uint64_t s) {
    seed = s;
    bpm.seed = s;
    trainer.seed = s;
}

void PipelineConfig::validate() const {
    network();
    if (mixture.empty()) throw ConfigError("mixture needs at least one controller");
    double total = 0.0;
    for (const auto& p : mixture) {
        p.controller.validate();
        if (!(p.fraction >= 0.0 && p.fraction <= 1.0)) throw ConfigError("mixture fractions must lie in [0, 1]");
        total += p.fraction;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture fractions must sum to 1");
    if (episodes < 1) throw ConfigError("episodes must be positive");
    bpm.validate();
    weights.validate();
    trainer.validate();
    if (trainer.offlight && trainer.algo == train::Algo::kBc) {
        throw ConfigError("offlight weighting applies to cql and td3bc only");
    }
    if (eval_episodes < 1 || eval_seeds.empty()) throw ConfigError("evaluation needs episodes and seeds");
    if (curve_interval < 0 || curve_episodes < 1 || curve_window < 1) throw ConfigError("invalid learning-curve settings");
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
    nlohmann::json mix = nlohmann::json::array();
    for (const auto& p : c.mixture) mix.push_back({{"controller", p.controller}, {"fraction", p.fraction}});
    j = {{"scenario", c.scenario},
         {"demand", c.demand},
         {"network", c.network_overrides},
         {"mixture", mix},
         {"episodes", c.episodes},
         {"seed", c.seed},
         {"bpm", c.bpm},
         {"weights", c.weights},
         {"trainer", c.trainer},
         {"eval_episodes", c.eval_episodes},
         {"eval_seeds", c.eval_seeds},
         {"curve_interval", c.curve_interval},
         {"curve_episodes", c.curve_episodes},
         {"curve_window", c.curve_window}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
    static const std::set<std::string> known = {"scenario", "demand", "network", "mixture", "episodes",
                                                "seed", "bpm", "weights", "trainer", "eval_episodes",
                                                "eval_seeds", "curve_interval", "curve_episodes", "curve_window"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    const PipelineConfig d;
    c.scenario = j.value("scenario", d.scenario);
    c.demand = j.value("demand", d.demand);
    c.network_overrides = j.value("network", d.network_overrides);
    if (j.contains("mixture")) {
        c.mixture.clear();
        for (const auto& p : j.at("mixture")) {
            MixturePart part;
            part.controller = p.at("controller").get<control::ControllerSpec>();
            part.fraction = p.at("fraction").get<double>();
            c.mixture.push_back(part);
        }
    } else {
        c.mixture = d.mixture;
    }
    c.episodes = j.value("episodes", d.episodes);
    c.seed = j.value("seed", d.seed);
    c.bpm = j.value("bpm", nlohmann::json::object()).get<bpm::GmmVgaeConfig>();
    if (!j.contains("bpm") || !j.at("bpm").contains("seed")) c.bpm.seed = c.seed;
    c.weights = j.value("weights", nlohmann::json::object()).get<weighting::WeightConfig>();
    nlohmann::json tj = j.value("trainer", nlohmann::json::object());
    if (!tj.contains("offlight")) tj["offlight"] = true;
    c.trainer = tj.get<train::TrainerConfig>();
    if (!tj.contains("seed")) c.trainer.seed = c.seed;
    c.eval_episodes = j.value("eval_episodes", d.eval_episodes);
    c.eval_seeds = j.value("eval_seeds", d.eval_seeds);
    c.curve_interval = j.value("curve_interval", d.curve_interval);
    c.curve_episodes = j.value("curve_episodes", d.curve_episodes);
    c.curve_window = j.value("curve_window", d.curve_window);
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    PipelineConfig c;
    try {
        c = nlohmann::json::parse(buf.str()).get<PipelineConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid config " + path.string() + ": " + e.what());
    }
    c.validate();
    return c;
}

}  // namespace offlight::eval
