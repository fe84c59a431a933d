#include "offlight/errors.hpp"
#include "offlight/sim/scenarios.hpp"
#include "offlight/sim/simulator.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace offlight;
using namespace offlight::sim;

namespace {

NetworkSpec quiet_spec(int rows, int cols) {
    NetworkSpec s;
    s.grid_rows = rows;
    s.grid_cols = cols;
    s.demand_rate = 0.0;
    return s;
}

int recomputed_total_queue(const SimState& s) {
    int q = 0;
    for (int l = 0; l < s.num_lanes(); ++l) {
        for (int id : s.lanes[static_cast<std::size_t>(l)]) {
            if (s.vehicles[static_cast<std::size_t>(id)].ready_time > s.clock) break;
            ++q;
        }
    }
    return q;
}

}  // namespace

TEST(Grid, AdjacencyCounts) {
    EXPECT_EQ(build_grid(quiet_spec(2, 2)).second.num_edges(), 4);
    auto one = build_grid(quiet_spec(1, 1)).second;
    EXPECT_EQ(one.num_nodes, 1);
    EXPECT_EQ(one.num_edges(), 0);
    auto big = grid_adjacency(14, 14);
    EXPECT_EQ(big.num_nodes, 196);
    for (int i = 0; i < big.num_nodes; ++i) {
        EXPECT_TRUE(big.adjacent[i][i]);
        int degree = 0;
        for (int j = 0; j < big.num_nodes; ++j) {
            EXPECT_EQ(big.adjacent[i][j], big.adjacent[j][i]);
            degree += (i != j && big.adjacent[i][j]) ? 1 : 0;
        }
        EXPECT_LE(degree, 4);
    }
}

TEST(Grid, InvalidSpecsAreRejected) {
    NetworkSpec s = quiet_spec(0, 2);
    EXPECT_THROW(build_grid(s), ConfigError);
    s = quiet_spec(2, 2);
    s.phase_set.clear();
    EXPECT_THROW(build_grid(s), ConfigError);
    s = quiet_spec(2, 2);
    s.episode_length_s = 361;
    EXPECT_THROW(build_grid(s), ConfigError);
    s = quiet_spec(2, 2);
    s.phase_set.pop_back();  // EW-left no longer served
    EXPECT_THROW(build_grid(s), ConfigError);
}

TEST(Observe, EmptyNetwork) {
    auto [state, graph] = build_grid(quiet_spec(2, 2));
    const Observation o = observe(state, 3);
    ASSERT_EQ(static_cast<int>(o.features.size()), state.spec().observation_size());
    for (int l = 0; l < kLanesPerIntersection; ++l) {
        EXPECT_EQ(o.features[3 * l], 0.0);
        EXPECT_EQ(o.features[3 * l + 1], 1.0);
        EXPECT_EQ(o.features[3 * l + 2], 0.0);
    }
    EXPECT_EQ(o.current_phase(), 0);
    EXPECT_THROW(observe(state, 4), LookupError);
}

TEST(Observe, SpeedProxy) {
    auto [state, graph] = build_grid(quiet_spec(1, 1));
    state.place_vehicles(lane_index(0, kNorth, kThrough), 4, true);
    state.place_vehicles(lane_index(0, kEast, kLeft), 4, false);
    state.place_vehicles(lane_index(0, kSouth, kLeft), 1, true);
    state.place_vehicles(lane_index(0, kSouth, kLeft), 3, false);
    auto f = observe(state, 0).features;
    const int ns = kNorth * kTurns + kThrough, el = kEast * kTurns + kLeft, sl = kSouth * kTurns + kLeft;
    EXPECT_EQ(f[3 * ns + 1], 0.0);  // n=4, q=4
    EXPECT_EQ(f[3 * el + 1], 1.0);  // all moving
    EXPECT_DOUBLE_EQ(f[3 * sl + 1], 0.75);
}

TEST(Observe, Locality) {
    auto [state, graph] = build_grid(quiet_spec(2, 2));
    const auto before = observe(state, 0).features;
    state.place_vehicles(lane_index(1, kWest, kThrough), 6, true);
    state.place_vehicles(lane_index(3, kNorth, kLeft), 2, false);
    EXPECT_EQ(observe(state, 0).features, before);
    state.place_vehicles(lane_index(0, kEast, kThrough), 1, true);
    EXPECT_NE(observe(state, 0).features, before);
}

TEST(Step, EmptyNetworkHasZeroReward) {
    auto [state, graph] = build_grid(quiet_spec(2, 2));
    const std::vector<int> a{1, 2, 3, 0};
    EXPECT_EQ(step(state, a).reward, 0.0);
}

TEST(Step, GreenLaneDrainsInOneInterval) {
    auto [state, graph] = build_grid(quiet_spec(1, 1));
    state.place_vehicles(lane_index(0, kNorth, kThrough), 3, true);
    const std::vector<int> a{0};
    const StepResult r = step(state, a);
    EXPECT_EQ(state.lane_queue(lane_index(0, kNorth, kThrough)), 0);
    EXPECT_EQ(r.reward, 0.0);
    EXPECT_EQ(state.vehicles_exited, 3);
}

TEST(Step, RedLaneKeepsQueue) {
    auto [state, graph] = build_grid(quiet_spec(1, 1));
    state.place_vehicles(lane_index(0, kEast, kThrough), 3, true);
    const std::vector<int> a{0};
    EXPECT_EQ(step(state, a).reward, -3.0);
}

TEST(Step, YellowBlocksDischarge) {
    auto [state, graph] = build_grid(quiet_spec(1, 1));
    state.place_vehicles(lane_index(0, kEast, kThrough), 3, true);
    const std::vector<int> to_ew{2};
    // First interval is all yellow; the new phase serves the next one.
    EXPECT_EQ(step(state, to_ew).reward, -3.0);
    EXPECT_EQ(state.signals[0].phase, 2);
    EXPECT_EQ(step(state, to_ew).reward, 0.0);
}

TEST(Step, YellowWindowDischargesNothingAtAnyIntersection) {
    NetworkSpec spec = quiet_spec(2, 2);
    spec.demand_rate = 900;
    spec.yellow_duration_s = 3;
    spec.action_interval_s = 5;
    auto [state, graph] = build_grid(spec);
    std::mt19937_64 rng(11);
    for (int t = 0; t < 60 && !state.done(); ++t) {
        std::vector<int> a(4);
        for (int& x : a) x = static_cast<int>(rng() % 4);
        step(state, a);
        for (int i = 0; i < 4; ++i) EXPECT_LE(state.signals[i].yellow_remaining, spec.yellow_duration_s);
    }
}

TEST(Step, RejectsBadActions) {
    auto [state, graph] = build_grid(quiet_spec(2, 2));
    const std::vector<int> bad{0, 0, 4, 0};
    EXPECT_THROW(step(state, bad), ActionError);
    const std::vector<int> short_action{0, 0};
    EXPECT_THROW(step(state, short_action), ActionError);
}

TEST(Step, EpisodeHasExpectedLength) {
    auto [state, graph] = build_grid(scenario_spec("toy-2x2", "medium"));
    int steps = 0;
    const std::vector<int> a(4, 0);
    while (!step(state, a).done) ++steps;
    EXPECT_EQ(steps + 1, 72);
    EXPECT_THROW(step(state, a), ActionError);
}

TEST(Step, ConservationCapacityAndRewardIdentity) {
    NetworkSpec spec = scenario_spec("toy-3x3", "high");
    spec.episode_length_s = 5 * 400;
    spec.lane_capacity = 6;
    auto [state, graph] = build_grid(spec);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 400; ++t) {
        std::vector<int> a(static_cast<std::size_t>(state.num_agents()));
        for (int& x : a) x = static_cast<int>(rng() % 4);
        const StepResult r = step(state, a);
        ASSERT_EQ(state.vehicles_entered(), state.vehicles_in_network() + state.vehicles_exited);
        ASSERT_EQ(r.reward, -static_cast<double>(recomputed_total_queue(state)));
        for (const auto& lane : state.lanes) ASSERT_LE(static_cast<int>(lane.size()), spec.lane_capacity);
    }
    EXPECT_GT(state.vehicles_exited, 0);
}

TEST(Step, DeterministicGivenSeed) {
    auto run = [] {
        auto [state, graph] = build_grid(scenario_spec("toy-2x2", "high"));
        std::vector<double> rewards;
        std::mt19937_64 rng(5);
        while (!state.done()) {
            std::vector<int> a(4);
            for (int& x : a) x = static_cast<int>(rng() % 4);
            rewards.push_back(step(state, a).reward);
        }
        return std::make_pair(rewards, state.travel_times(state.clock));
    };
    EXPECT_EQ(run(), run());
}

TEST(Pressure, OracleExamples) {
    auto [state, graph] = build_grid(quiet_spec(2, 2));
    for (const auto& p : state.spec().phase_set) EXPECT_EQ(pressure(state, 0, p), 0.0);

    const Phase one{0, {{kWest, kThrough}}};
    state.place_vehicles(lane_index(0, kWest, kThrough), 5, true);
    state.place_vehicles(lane_index(1, kWest, kLeft), 2, true);
    EXPECT_EQ(pressure(state, 0, one), 3.0);

    const Phase two{0, {{kWest, kThrough}, {kNorth, kThrough}}};
    state.place_vehicles(lane_index(0, kNorth, kThrough), 1, true);
    state.place_vehicles(lane_index(2, kNorth, kRight), 4, true);
    EXPECT_EQ(pressure(state, 0, two), 0.0);

    // Exits count downstream queue 0.
    const Phase exit{0, {{kEast, kThrough}}};
    state.place_vehicles(lane_index(0, kEast, kThrough), 2, true);
    EXPECT_EQ(pressure(state, 0, exit), 2.0);
}

TEST(Scenarios, PresetsAndUnknownNames) {
    EXPECT_EQ(scenario_spec("toy-4x4", "low").num_intersections(), 16);
    EXPECT_LT(demand_level("low"), demand_level("medium"));
    EXPECT_LT(demand_level("medium"), demand_level("high"));
    EXPECT_THROW(scenario_spec("jinan", "low"), ConfigError);
    EXPECT_THROW(demand_level("extreme"), ConfigError);
}

TEST(NetworkSpecJson, RoundTrip) {
    NetworkSpec s = scenario_spec("toy-3x3", "high");
    s.seed = 42;
    nlohmann::json j = s;
    EXPECT_EQ(j.get<NetworkSpec>(), s);
}
