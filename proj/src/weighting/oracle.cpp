#include "offlight/weighting/oracle.hpp"

#include "offlight/errors.hpp"

#include <cmath>
#include <random>

namespace offlight::weighting {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> random_simplex(std::mt19937_64& rng, int n, double min_prob) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double total = 0.0;
    for (double& x : p) {
        x = 0.1 + uniform01(rng);
        total += x;
    }
    // Mix with uniform so every entry is at least min_prob.
    const double mix = std::min(1.0, min_prob * n);
    for (double& x : p) x = (1.0 - mix) * x / total + mix / n;
    return p;
}

void check_policy_shape(const MicroMdp& mdp, const TabularPolicy& pi, const char* name) {
    if (static_cast<int>(pi.probs.size()) != mdp.num_agents) throw ShapeError(std::string(name) + ": agent count mismatch");
    for (const auto& agent : pi.probs) {
        if (static_cast<int>(agent.size()) != mdp.num_states) throw ShapeError(std::string(name) + ": state count mismatch");
        for (const auto& row : agent) {
            if (static_cast<int>(row.size()) != mdp.num_actions) throw ShapeError(std::string(name) + ": action count mismatch");
            double s = 0.0;
            for (double p : row) {
                if (p < 0) throw ArgumentError(std::string(name) + ": negative probability");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-9) throw ArgumentError(std::string(name) + ": row does not sum to 1");
        }
    }
}

struct Accumulator {
    double e_target = 0, e_wp = 0, e_wm = 0, e_wp2 = 0, e_wm2 = 0, e_f = 0, e_f2 = 0;
    long count = 0;
};

struct Enumerator {
    const MicroMdp& mdp;
    const TabularPolicy& target;
    const TabularPolicy& behavior;
    const TabularPolicy& estimate;
    const TrajectoryFn& f;
    Accumulator acc;
    std::vector<TrajectoryStep> path;

    // p_env: product of initial and transition probabilities so far.
    void visit(int t, int state, double p_env, double p_target, double p_behavior, double w_prod, double w_mean) {
        if (t == mdp.horizon) {
            const double v = f(path);
            const double pb = p_env * p_behavior;
            acc.e_target += p_env * p_target * v;
            acc.e_wp += pb * w_prod * v;
            acc.e_wm += pb * w_mean * v;
            acc.e_wp2 += pb * (w_prod * v) * (w_prod * v);
            acc.e_wm2 += pb * (w_mean * v) * (w_mean * v);
            acc.e_f += pb * v;
            acc.e_f2 += pb * v * v;
            ++acc.count;
            return;
        }
        for (int joint = 0; joint < mdp.num_joint(); ++joint) {
            const std::vector<int> actions = mdp.decode_joint(joint);
            const double pt = target.joint_prob(state, actions);
            const double pbh = behavior.joint_prob(state, actions);
            if (pbh == 0.0) continue;  // unreachable under the data distribution
            double step_prod = 1.0;
            double step_sum = 0.0;
            for (int n = 0; n < mdp.num_agents; ++n) {
                const double num = target.probs[n][state][actions[n]];
                const double den = estimate.probs[n][state][actions[n]];
                step_prod *= num / den;
                step_sum += num / den;
            }
            const double step_mean = step_sum / mdp.num_agents;
            path.push_back({state, actions, mdp.reward[state][joint]});
            if (t + 1 == mdp.horizon) {
                visit(t + 1, state, p_env, p_target * pt, p_behavior * pbh, w_prod * step_prod, w_mean * step_mean);
            } else {
                const auto& next = mdp.transition[state][joint];
                for (int s2 = 0; s2 < mdp.num_states; ++s2) {
                    if (next[s2] == 0.0) continue;
                    visit(t + 1, s2, p_env * next[s2], p_target * pt, p_behavior * pbh, w_prod * step_prod,
                          w_mean * step_mean);
                }
            }
            path.pop_back();
        }
    }
};

}  // namespace

int MicroMdp::num_joint() const {
    int j = 1;
    for (int n = 0; n < num_agents; ++n) j *= num_actions;
    return j;
}

std::vector<int> MicroMdp::decode_joint(int joint) const {
    std::vector<int> a(static_cast<std::size_t>(num_agents));
    for (int n = 0; n < num_agents; ++n) {
        a[n] = joint % num_actions;
        joint /= num_actions;
    }
    return a;
}

void MicroMdp::validate() const {
    if (num_agents < 1 || num_actions < 1 || num_states < 1 || horizon < 1) throw ArgumentError("micro-MDP: sizes must be positive");
    if (static_cast<int>(initial.size()) != num_states) throw ShapeError("micro-MDP: initial distribution size");
    if (static_cast<int>(transition.size()) != num_states || static_cast<int>(reward.size()) != num_states) {
        throw ShapeError("micro-MDP: transition/reward tables");
    }
    for (int s = 0; s < num_states; ++s) {
        if (static_cast<int>(transition[s].size()) != num_joint() || static_cast<int>(reward[s].size()) != num_joint()) {
            throw ShapeError("micro-MDP: joint action tables");
        }
        for (const auto& row : transition[s]) {
            if (static_cast<int>(row.size()) != num_states) throw ShapeError("micro-MDP: next-state distribution size");
        }
    }
}

MicroMdp MicroMdp::random(int num_agents, int num_actions, int num_states, int horizon, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    MicroMdp m;
    m.num_agents = num_agents;
    m.num_actions = num_actions;
    m.num_states = num_states;
    m.horizon = horizon;
    m.initial = random_simplex(rng, num_states, 0.05);
    m.transition.assign(num_states, {});
    m.reward.assign(num_states, {});
    for (int s = 0; s < num_states; ++s) {
        for (int j = 0; j < m.num_joint(); ++j) {
            m.transition[s].push_back(random_simplex(rng, num_states, 0.05));
            m.reward[s].push_back(4.0 * uniform01(rng) - 2.0);
        }
    }
    return m;
}

double TabularPolicy::joint_prob(int state, const std::vector<int>& actions) const {
    double p = 1.0;
    for (std::size_t n = 0; n < actions.size(); ++n) p *= probs[n][state][actions[n]];
    return p;
}

TabularPolicy TabularPolicy::random(const MicroMdp& mdp, std::uint64_t seed, double min_prob) {
    std::mt19937_64 rng(seed);
    TabularPolicy pi;
    pi.probs.assign(mdp.num_agents, {});
    for (auto& agent : pi.probs) {
        for (int s = 0; s < mdp.num_states; ++s) agent.push_back(random_simplex(rng, mdp.num_actions, min_prob));
    }
    return pi;
}

TabularPolicy TabularPolicy::uniform(const MicroMdp& mdp) {
    TabularPolicy pi;
    pi.probs.assign(mdp.num_agents, std::vector<std::vector<double>>(
                                        mdp.num_states, std::vector<double>(mdp.num_actions, 1.0 / mdp.num_actions)));
    return pi;
}

TabularPolicy TabularPolicy::interpolate(const TabularPolicy& a, const TabularPolicy& b, double lambda) {
    TabularPolicy out = a;
    for (std::size_t n = 0; n < out.probs.size(); ++n) {
        for (std::size_t s = 0; s < out.probs[n].size(); ++s) {
            for (std::size_t k = 0; k < out.probs[n][s].size(); ++k) {
                out.probs[n][s][k] = (1.0 - lambda) * a.probs[n][s][k] + lambda * b.probs[n][s][k];
            }
        }
    }
    return out;
}

double trajectory_return(const std::vector<TrajectoryStep>& steps) {
    double g = 0.0;
    for (const auto& s : steps) g += s.reward;
    return g;
}

OracleResult oracle_expectation_check(const MicroMdp& mdp, const TabularPolicy& target, const TabularPolicy& behavior,
                                      const TrajectoryFn& f, const TabularPolicy* estimate) {
    mdp.validate();
    const TabularPolicy& est = estimate ? *estimate : behavior;
    check_policy_shape(mdp, target, "target");
    check_policy_shape(mdp, behavior, "behavior");
    check_policy_shape(mdp, est, "estimate");
    for (int n = 0; n < mdp.num_agents; ++n) {
        for (int s = 0; s < mdp.num_states; ++s) {
            for (int a = 0; a < mdp.num_actions; ++a) {
                if (target.probs[n][s][a] > 0 && (behavior.probs[n][s][a] == 0 || est.probs[n][s][a] == 0)) {
                    throw PreconditionError("support of the target policy is not contained in the behavior support (agent " +
                                            std::to_string(n) + ", state " + std::to_string(s) + ", action " +
                                            std::to_string(a) + ")");
                }
            }
        }
    }

    Enumerator e{mdp, target, behavior, est, f, {}, {}};
    for (int s0 = 0; s0 < mdp.num_states; ++s0) {
        if (mdp.initial[s0] == 0.0) continue;
        e.visit(0, s0, mdp.initial[s0], 1.0, 1.0, 1.0, 1.0);
    }
    const Accumulator& a = e.acc;
    OracleResult r;
    r.exact_target = a.e_target;
    r.is_estimate_product = a.e_wp;
    r.is_estimate_mean = a.e_wm;
    r.variance_product = a.e_wp2 - a.e_wp * a.e_wp;
    r.variance_mean = a.e_wm2 - a.e_wm * a.e_wm;
    r.variance_f_behavior = a.e_f2 - a.e_f * a.e_f;
    r.trajectories = a.count;
    return r;
}

}  // namespace offlight::weighting
