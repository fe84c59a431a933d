#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace offlight::weighting {

// Fully enumerable multi-agent MDP with a shared reward. Joint actions are
// encoded as mixed-radix integers, agent 0 least significant.
struct MicroMdp {
    int num_agents = 2;
    int num_actions = 2;
    int num_states = 2;
    int horizon = 3;
    std::vector<double> initial;                               // [state]
    std::vector<std::vector<std::vector<double>>> transition;  // [state][joint] -> next-state distribution
    std::vector<std::vector<double>> reward;                   // [state][joint]

    int num_joint() const;
    std::vector<int> decode_joint(int joint) const;
    void validate() const;

    // Random instance with full-support dynamics.
    static MicroMdp random(int num_agents, int num_actions, int num_states, int horizon, std::uint64_t seed);
};

// Markov per-agent policy: probs[agent][state][action].
struct TabularPolicy {
    std::vector<std::vector<std::vector<double>>> probs;

    double joint_prob(int state, const std::vector<int>& actions) const;
    static TabularPolicy random(const MicroMdp& mdp, std::uint64_t seed, double min_prob = 0.05);
    static TabularPolicy uniform(const MicroMdp& mdp);
    // (1 - lambda) * a + lambda * b, elementwise.
    static TabularPolicy interpolate(const TabularPolicy& a, const TabularPolicy& b, double lambda);
};

struct TrajectoryStep {
    int state = 0;
    std::vector<int> actions;
    double reward = 0.0;
};

using TrajectoryFn = std::function<double(const std::vector<TrajectoryStep>&)>;

// Sum of rewards along the trajectory.
double trajectory_return(const std::vector<TrajectoryStep>& steps);

struct OracleResult {
    double exact_target = 0.0;
    double is_estimate_product = 0.0;
    double is_estimate_mean = 0.0;
    double variance_product = 0.0;  // Var under pi_b of w_product * f
    double variance_mean = 0.0;
    double variance_f_behavior = 0.0;  // Var under pi_b of f
    long trajectories = 0;
};

// Exact enumeration over every trajectory. `behavior` generates the data,
// `estimate` is the policy used in the weight denominators (defaults to
// `behavior` when null). Throws PreconditionError when the support of
// `target` is not contained in that of `behavior`.
OracleResult oracle_expectation_check(const MicroMdp& mdp, const TabularPolicy& target, const TabularPolicy& behavior,
                                      const TrajectoryFn& f = trajectory_return,
                                      const TabularPolicy* estimate = nullptr);

}  // namespace offlight::weighting
