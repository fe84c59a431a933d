#include "offlight/control/controllers.hpp"

#include "offlight/errors.hpp"

#include <algorithm>

namespace offlight::control {

namespace {

int local_lane(const sim::Movement& m) { return m.approach * sim::kTurns + m.turn; }

double lane_queue(const sim::Observation& obs, int local) {
    return obs.features[static_cast<std::size_t>(3 * local + 2)];
}

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

}  // namespace

std::string to_string(ControllerKind kind) {
    switch (kind) {
        case ControllerKind::kRandom: return "random";
        case ControllerKind::kFixedTime: return "fixed_time";
        case ControllerKind::kGreedy: return "greedy";
        case ControllerKind::kMaxPressure: return "max_pressure";
        case ControllerKind::kSotl: return "sotl";
    }
    return "unknown";
}

ControllerKind parse_controller_kind(const std::string& name) {
    if (name == "random") return ControllerKind::kRandom;
    if (name == "fixed_time") return ControllerKind::kFixedTime;
    if (name == "greedy") return ControllerKind::kGreedy;
    if (name == "max_pressure") return ControllerKind::kMaxPressure;
    if (name == "sotl") return ControllerKind::kSotl;
    throw ConfigError("unknown controller kind '" + name + "'");
}

void ControllerSpec::validate() const {
    if (green_steps < 1) throw ConfigError("green_steps must be >= 1");
    if (!(queue_threshold > 0)) throw ConfigError("queue_threshold must be positive");
    if (min_green_steps < 1) throw ConfigError("min_green_steps must be >= 1");
}

void to_json(nlohmann::json& j, const ControllerSpec& spec) {
    j = {{"kind", to_string(spec.kind)},
         {"green_steps", spec.green_steps},
         {"queue_threshold", spec.queue_threshold},
         {"min_green_steps", spec.min_green_steps},
         {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, ControllerSpec& spec) {
    ControllerSpec d;
    spec.kind = parse_controller_kind(j.value("kind", to_string(d.kind)));
    spec.green_steps = j.value("green_steps", d.green_steps);
    spec.queue_threshold = j.value("queue_threshold", d.queue_threshold);
    spec.min_green_steps = j.value("min_green_steps", d.min_green_steps);
    spec.seed = j.value("seed", d.seed);
}

std::vector<double> phase_queues(const sim::Observation& obs, const sim::NetworkSpec& spec) {
    std::vector<double> q(spec.phase_set.size(), 0.0);
    for (std::size_t p = 0; p < spec.phase_set.size(); ++p) {
        for (const auto& m : spec.phase_set[p].movements) q[p] += lane_queue(obs, local_lane(m));
    }
    return q;
}

Controller::Controller(ControllerSpec spec, int num_agents, int num_phases)
    : spec_(spec), num_phases_(num_phases), steps_in_phase_(static_cast<std::size_t>(num_agents), 0), rng_(spec.seed) {
    spec_.validate();
    if (num_phases <= 0) throw ConfigError("controller needs at least one phase");
}

int Controller::choose_deterministic(const sim::Observation& obs, const sim::SimState& view, int t) const {
    const sim::NetworkSpec& net = view.spec();
    switch (spec_.kind) {
        case ControllerKind::kFixedTime:
            return (t / spec_.green_steps) % num_phases_;
        case ControllerKind::kGreedy:
            return argmax_lowest(phase_queues(obs, net));
        case ControllerKind::kMaxPressure: {
            std::vector<double> p;
            for (const auto& phase : net.phase_set) p.push_back(sim::pressure(view, obs.agent, phase));
            return argmax_lowest(p);
        }
        case ControllerKind::kSotl: {
            const int current = obs.current_phase();
            if (steps_in_phase_[static_cast<std::size_t>(obs.agent)] < spec_.min_green_steps) return current;
            // Longest single red-lane queue served by each other phase.
            std::vector<double> red(static_cast<std::size_t>(num_phases_), -1.0);
            const auto& served = net.phase_set[static_cast<std::size_t>(current)].movements;
            for (int p = 0; p < num_phases_; ++p) {
                if (p == current) continue;
                for (const auto& m : net.phase_set[static_cast<std::size_t>(p)].movements) {
                    if (std::find(served.begin(), served.end(), m) != served.end()) continue;
                    red[static_cast<std::size_t>(p)] = std::max(red[static_cast<std::size_t>(p)], lane_queue(obs, local_lane(m)));
                }
            }
            const int best = argmax_lowest(red);
            return red[static_cast<std::size_t>(best)] >= spec_.queue_threshold ? best : current;
        }
        case ControllerKind::kRandom:
            break;
    }
    throw ConfigError("controller kind has no deterministic rule");
}

Decision Controller::act(const sim::Observation& obs, const sim::SimState& view, int t) {
    if (obs.agent < 0 || obs.agent >= static_cast<int>(steps_in_phase_.size())) {
        throw LookupError("controller has no agent " + std::to_string(obs.agent));
    }
    Decision d;
    if (spec_.kind == ControllerKind::kRandom) {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        d.phase = std::min(num_phases_ - 1, static_cast<int>(u * num_phases_));
        d.prob = 1.0 / num_phases_;
    } else {
        d.phase = choose_deterministic(obs, view, t);
        d.prob = 1.0;
    }
    auto& steps = steps_in_phase_[static_cast<std::size_t>(obs.agent)];
    steps = d.phase == obs.current_phase() ? steps + 1 : 0;
    return d;
}

std::vector<Decision> Controller::act_all(const std::vector<sim::Observation>& obs, const sim::SimState& view, int t) {
    std::vector<Decision> out;
    out.reserve(obs.size());
    for (const auto& o : obs) out.push_back(act(o, view, t));
    return out;
}

std::vector<double> Controller::distribution(const sim::Observation& obs, const sim::SimState& view, int t) const {
    std::vector<double> p(static_cast<std::size_t>(num_phases_), 0.0);
    if (spec_.kind == ControllerKind::kRandom) {
        std::fill(p.begin(), p.end(), 1.0 / num_phases_);
    } else {
        p[static_cast<std::size_t>(choose_deterministic(obs, view, t))] = 1.0;
    }
    return p;
}

}  // namespace offlight::control
