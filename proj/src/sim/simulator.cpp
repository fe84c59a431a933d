#include "offlight/sim/simulator.hpp"

#include "offlight/errors.hpp"

#include <algorithm>

namespace offlight::sim {

namespace {

constexpr int kTurnOffset[kTurns] = {3, 0, 1};  // left, through, right (clockwise rotation of heading)

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int uniform_int(std::mt19937_64& rng, int n) {
    return std::min(n - 1, static_cast<int>(uniform01(rng) * n));
}

// Neighbouring intersection in compass direction `dir`, or -1 off-grid.
int neighbour(const NetworkSpec& spec, int intersection, int dir) {
    int r = intersection / spec.grid_cols;
    int c = intersection % spec.grid_cols;
    switch (dir) {
        case kNorth: --r; break;
        case kEast: ++c; break;
        case kSouth: ++r; break;
        default: --c; break;
    }
    if (r < 0 || c < 0 || r >= spec.grid_rows || c >= spec.grid_cols) return -1;
    return r * spec.grid_cols + c;
}

std::shared_ptr<Topology> make_topology(const NetworkSpec& spec) {
    auto topo = std::make_shared<Topology>();
    topo->spec = spec;
    topo->graph = grid_adjacency(spec.grid_rows, spec.grid_cols);
    const int n = spec.num_intersections();
    topo->downstream_road.assign(static_cast<std::size_t>(n * kLanesPerIntersection), -1);
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < kApproaches; ++a) {
            if (neighbour(spec, i, a) < 0) topo->entry_roads.push_back(lane_index(i, a, 0));
            const int heading = (a + 2) % kApproaches;
            for (int t = 0; t < kTurns; ++t) {
                const int out_dir = (heading + kTurnOffset[t]) % kApproaches;
                const int j = neighbour(spec, i, out_dir);
                if (j >= 0) {
                    topo->downstream_road[static_cast<std::size_t>(lane_index(i, a, t))] =
                        lane_index(j, (out_dir + 2) % kApproaches, 0);
                }
            }
        }
    }
    topo->green_lanes.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (const Phase& p : spec.phase_set) {
            std::vector<int> lanes;
            for (const Movement& m : p.movements) lanes.push_back(lane_index(i, m.approach, m.turn));
            topo->green_lanes[static_cast<std::size_t>(i)].push_back(std::move(lanes));
        }
    }
    return topo;
}

void admit_backlog(SimState& s, std::size_t road) {
    auto& waiting = s.backlog[road];
    const int cap = s.spec().lane_capacity;
    while (!waiting.empty()) {
        Vehicle& v = s.vehicles[static_cast<std::size_t>(waiting.front())];
        auto& lane = s.lanes[static_cast<std::size_t>(v.next_lane)];
        if (static_cast<int>(lane.size()) >= cap) break;
        v.lane = v.next_lane;
        v.next_lane = -2;
        v.ready_time = s.clock + s.spec().link_travel_s;
        lane.push_back(v.id);
        waiting.pop_front();
    }
}

void advance_second(SimState& s) {
    const Topology& topo = *s.topology;
    const NetworkSpec& spec = topo.spec;
    const int now = s.clock;

    const double p_arrival = spec.demand_rate / 3600.0;
    for (std::size_t k = 0; k < topo.entry_roads.size(); ++k) {
        if (p_arrival > 0 && uniform01(s.rng) < p_arrival) {
            Vehicle v;
            v.id = static_cast<int>(s.vehicles.size());
            v.entry_time = now;
            v.next_lane = topo.entry_roads[k] + uniform_int(s.rng, kTurns);
            s.vehicles.push_back(v);
            s.backlog[k].push_back(v.id);
        }
        admit_backlog(s, k);
    }

    const int cap = spec.lane_capacity;
    for (int i = 0; i < spec.num_intersections(); ++i) {
        const IntersectionSignal& sig = s.signals[static_cast<std::size_t>(i)];
        const int first = i * kLanesPerIntersection;
        if (sig.yellow_remaining > 0) {
            std::fill_n(s.discharge_credit.begin() + first, kLanesPerIntersection, 0.0);
            continue;
        }
        const auto& green = topo.green_lanes[static_cast<std::size_t>(i)][static_cast<std::size_t>(sig.phase)];
        for (int l = first; l < first + kLanesPerIntersection; ++l) {
            if (std::find(green.begin(), green.end(), l) == green.end()) s.discharge_credit[static_cast<std::size_t>(l)] = 0.0;
        }
        for (int l : green) {
            double& credit = s.discharge_credit[static_cast<std::size_t>(l)];
            credit += spec.saturation_flow;
            auto& lane = s.lanes[static_cast<std::size_t>(l)];
            while (credit >= 1.0 && !lane.empty()) {
                Vehicle& v = s.vehicles[static_cast<std::size_t>(lane.front())];
                if (v.ready_time > now) break;
                if (v.next_lane == -2) {
                    const int road = topo.downstream_road[static_cast<std::size_t>(l)];
                    v.next_lane = road < 0 ? -1 : road + uniform_int(s.rng, kTurns);
                }
                if (v.next_lane == -1) {
                    v.exit_time = now + 1;
                    v.lane = -1;
                    ++s.vehicles_exited;
                } else {
                    auto& down = s.lanes[static_cast<std::size_t>(v.next_lane)];
                    if (static_cast<int>(down.size()) >= cap) break;  // spillback: stays at the stop line
                    v.lane = v.next_lane;
                    v.ready_time = now + 1 + spec.link_travel_s;
                    down.push_back(v.id);
                }
                v.next_lane = -2;
                lane.pop_front();
                credit -= 1.0;
            }
            credit = std::min(credit, 1.0);
        }
    }

    for (auto& sig : s.signals) {
        if (sig.yellow_remaining > 0 && --sig.yellow_remaining == 0) sig.phase = sig.pending_phase;
    }
    s.clock = now + 1;
}

}  // namespace

int Observation::current_phase() const {
    // Phase one-hot occupies the tail of the feature vector.
    const int lanes3 = 3 * kLanesPerIntersection;
    for (std::size_t k = static_cast<std::size_t>(lanes3); k < features.size(); ++k) {
        if (features[k] > 0.5) return static_cast<int>(k) - lanes3;
    }
    return 0;
}

int lane_index(int intersection, int approach, int turn) {
    return (intersection * kApproaches + approach) * kTurns + turn;
}

int SimState::lane_queue(int lane) const {
    int q = 0;
    for (int id : lanes[static_cast<std::size_t>(lane)]) {
        if (vehicles[static_cast<std::size_t>(id)].ready_time > clock) break;
        ++q;
    }
    return q;
}

LaneState SimState::lane_state(int lane) const {
    LaneState ls;
    ls.count = static_cast<int>(lanes[static_cast<std::size_t>(lane)].size());
    ls.queue = lane_queue(lane);
    ls.speed = 1.0 - static_cast<double>(ls.queue) / std::max(ls.count, 1);
    return ls;
}

int SimState::total_queue() const {
    int q = 0;
    for (int l = 0; l < num_lanes(); ++l) q += lane_queue(l);
    return q;
}

int SimState::vehicles_in_network() const {
    std::size_t n = 0;
    for (const auto& l : lanes) n += l.size();
    for (const auto& b : backlog) n += b.size();
    return static_cast<int>(n);
}

std::vector<int> SimState::travel_times(int end_time) const {
    std::vector<int> out;
    out.reserve(vehicles.size());
    for (const Vehicle& v : vehicles) out.push_back(v.exit_time.value_or(end_time) - v.entry_time);
    return out;
}

void SimState::place_vehicles(int lane, int count, bool halted, int next_lane) {
    if (lane < 0 || lane >= num_lanes()) throw LookupError("no lane " + std::to_string(lane));
    for (int k = 0; k < count; ++k) {
        if (static_cast<int>(lanes[static_cast<std::size_t>(lane)].size()) >= spec().lane_capacity) {
            throw ArgumentError("lane " + std::to_string(lane) + " is full");
        }
        Vehicle v;
        v.id = static_cast<int>(vehicles.size());
        v.entry_time = clock;
        v.lane = lane;
        v.ready_time = halted ? clock : clock + spec().link_travel_s;
        v.next_lane = next_lane;
        vehicles.push_back(v);
        lanes[static_cast<std::size_t>(lane)].push_back(v.id);
    }
}

std::pair<SimState, AdjacencyGraph> build_grid(const NetworkSpec& spec) {
    spec.validate();
    SimState s;
    s.topology = make_topology(spec);
    const int n_lanes = spec.num_intersections() * kLanesPerIntersection;
    s.lanes.resize(static_cast<std::size_t>(n_lanes));
    s.discharge_credit.assign(static_cast<std::size_t>(n_lanes), 0.0);
    s.backlog.resize(s.topology->entry_roads.size());
    s.signals.resize(static_cast<std::size_t>(spec.num_intersections()));
    s.rng.seed(spec.seed);
    AdjacencyGraph graph = s.topology->graph;
    return {std::move(s), std::move(graph)};
}

Observation observe(const SimState& state, int agent) {
    if (agent < 0 || agent >= state.num_agents()) throw LookupError("unknown agent " + std::to_string(agent));
    Observation obs;
    obs.agent = agent;
    obs.features.reserve(static_cast<std::size_t>(state.spec().observation_size()));
    for (int k = 0; k < kLanesPerIntersection; ++k) {
        const LaneState ls = state.lane_state(agent * kLanesPerIntersection + k);
        obs.features.push_back(ls.count);
        obs.features.push_back(ls.speed);
        obs.features.push_back(ls.queue);
    }
    const int phase = state.signals[static_cast<std::size_t>(agent)].phase;
    for (int p = 0; p < state.spec().num_phases(); ++p) obs.features.push_back(p == phase ? 1.0 : 0.0);
    return obs;
}

std::vector<Observation> observe_all(const SimState& state) {
    std::vector<Observation> out;
    out.reserve(static_cast<std::size_t>(state.num_agents()));
    for (int i = 0; i < state.num_agents(); ++i) out.push_back(observe(state, i));
    return out;
}

StepResult step(SimState& state, std::span<const int> joint_action) {
    const NetworkSpec& spec = state.spec();
    if (state.done()) throw ActionError("step called on a finished episode");
    if (static_cast<int>(joint_action.size()) != state.num_agents()) {
        throw ActionError("joint action has " + std::to_string(joint_action.size()) + " entries for " +
                          std::to_string(state.num_agents()) + " agents");
    }
    for (int a : joint_action) {
        if (a < 0 || a >= spec.num_phases()) throw ActionError("phase id " + std::to_string(a) + " out of range");
    }
    for (std::size_t i = 0; i < joint_action.size(); ++i) {
        IntersectionSignal& sig = state.signals[i];
        const int target = joint_action[i];
        if (sig.yellow_remaining > 0) {
            sig.pending_phase = target;
        } else if (target != sig.phase) {
            if (spec.yellow_duration_s == 0) {
                sig.phase = target;
            } else {
                sig.pending_phase = target;
                sig.yellow_remaining = spec.yellow_duration_s;
            }
        }
    }
    for (int s = 0; s < spec.action_interval_s; ++s) advance_second(state);

    StepResult r;
    r.reward = -static_cast<double>(state.total_queue());
    r.observations = observe_all(state);
    r.done = state.done();
    return r;
}

double pressure(const SimState& state, int agent, const Phase& phase) {
    if (agent < 0 || agent >= state.num_agents()) throw LookupError("unknown agent " + std::to_string(agent));
    const Topology& topo = *state.topology;
    double total = 0.0;
    for (const Movement& m : phase.movements) {
        const int lane = lane_index(agent, m.approach, m.turn);
        const int road = topo.downstream_road[static_cast<std::size_t>(lane)];
        int down = 0;
        if (road >= 0) {
            for (int t = 0; t < kTurns; ++t) down += state.lane_queue(road + t);
        }
        total += state.lane_queue(lane) - down;
    }
    return total;
}

}  // namespace offlight::sim
