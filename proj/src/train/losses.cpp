#include "offlight/errors.hpp"
#include "offlight/train/trainers.hpp"

#include <algorithm>
#include <cmath>

namespace offlight::train {

using nn::Matrix;
using nn::Var;

namespace {

Var column(const Eigen::VectorXd& v) { return nn::constant(Matrix(v)); }

// Per-node copy of per-graph-row weights.
Var node_weights(const Batch& b, const Eigen::VectorXd& w) {
    Matrix out(b.x.nodes(), 1);
    for (int r = 0; r < b.x.nodes(); ++r) out(r, 0) = w(b.x.graph_of_node[static_cast<std::size_t>(r)]);
    return nn::constant(std::move(out));
}

void check_weights(const Batch& b, const Eigen::VectorXd& w) {
    if (w.size() != b.x.graphs()) throw ShapeError("loss weights must have one entry per transition");
}

// Weighted sum over rows divided by the number of transitions.
Var weighted_mean(const Var& per_row, const Var& w, int graphs) {
    return nn::scale(nn::sum(nn::mul(per_row, w)), 1.0 / graphs);
}

// Sum over agents at t + 1 of phi_i * value_i; zero past the last step.
Eigen::VectorXd bootstrap(const Batch& b, const Eigen::VectorXd& node_value, const Matrix& phi, double gamma) {
    const int B = b.x.batch;
    const int N = b.x.agents;
    Eigen::VectorXd y = b.rewards;
    for (int t = 0; t + 1 < b.x.steps; ++t) {
        for (int e = 0; e < B; ++e) {
            double next = 0.0;
            for (int i = 0; i < N; ++i) next += phi(i, 0) * node_value(((t + 1) * B + e) * N + i);
            y(t * B + e) += gamma * b.not_done(t * B + e) * next;
        }
    }
    return y;
}

}  // namespace

Batch make_batch(std::span<const data::Episode* const> episodes, const data::Fingerprint& fp, double reward_scale) {
    Batch b;
    b.x = bpm::make_tensors(episodes, fp);
    const int B = b.x.batch;
    b.rewards.resize(b.x.graphs());
    b.not_done.resize(b.x.graphs());
    for (int t = 0; t < b.x.steps; ++t) {
        for (int e = 0; e < B; ++e) {
            b.rewards(t * B + e) = episodes[static_cast<std::size_t>(e)]->transitions[static_cast<std::size_t>(t)].reward * reward_scale;
            b.not_done(t * B + e) = t + 1 < b.x.steps ? 1.0 : 0.0;
        }
    }
    b.agent_of_node.resize(static_cast<std::size_t>(b.x.nodes()));
    for (int r = 0; r < b.x.nodes(); ++r) b.agent_of_node[static_cast<std::size_t>(r)] = r % b.x.agents;
    return b;
}

Var mixed_value(const Var& per_node, const Batch& b, const Var& phi) {
    const Var scaled = nn::mul(per_node, nn::gather_rows(phi, b.agent_of_node));
    return nn::scale(nn::segment_mean(scaled, b.x.graph_of_node, b.x.graphs()), b.x.agents);
}

LossTerms bc_loss(const AgentNet& policy, const Batch& b, const Eigen::VectorXd& w) {
    check_weights(b, w);
    const Var lp = nn::log_softmax_rows(policy.forward(b.x));
    const Var ce = nn::scale(weighted_mean(nn::pick(lp, b.x.actions), node_weights(b, w), b.x.graphs()), -1.0);
    LossTerms out;
    out.loss = ce;
    out.bc = ce.item();
    return out;
}

Eigen::VectorXd cql_targets(const AgentNet& q_target, const Batch& b, const Matrix& phi, double gamma) {
    nn::NoGradGuard guard;
    const Matrix q = q_target.forward(b.x).value();
    return bootstrap(b, q.rowwise().maxCoeff(), phi, gamma);
}

LossTerms cql_loss(const AgentNet& q, const Batch& b, const Eigen::VectorXd& y, const Var& phi, double alpha,
                   const Eigen::VectorXd& w) {
    check_weights(b, w);
    if (y.size() != b.x.graphs()) throw ShapeError("cql_loss: one target per transition required");
    const Var qs = q.forward(b.x);
    const Var taken = nn::pick(qs, b.x.actions);
    const Var td = nn::square(nn::sub(mixed_value(taken, b, phi), column(y)));
    const Var td_loss = weighted_mean(td, column(w), b.x.graphs());
    const Var gap = nn::sub(nn::logsumexp_rows(qs), taken);
    const Var reg = nn::scale(weighted_mean(gap, node_weights(b, w), b.x.graphs()), alpha);
    LossTerms out;
    out.loss = nn::add(td_loss, reg);
    out.td = td_loss.item();
    out.regularizer = reg.item();
    return out;
}

Eigen::VectorXd td3bc_targets(const AgentNet& actor_target, const AgentNet& q1_target, const AgentNet& q2_target,
                              const Batch& b, const Matrix& phi, double gamma) {
    nn::NoGradGuard guard;
    const Matrix pi = nn::softmax_rows(actor_target.forward(b.x)).value();
    const Matrix q = q1_target.forward(b.x).value().cwiseMin(q2_target.forward(b.x).value());
    const Eigen::VectorXd v = pi.cwiseProduct(q).rowwise().sum();
    return bootstrap(b, v, phi, gamma);
}

LossTerms td3bc_critic_loss(const AgentNet& q1, const AgentNet& q2, const Batch& b, const Eigen::VectorXd& y,
                            const Var& phi, const Eigen::VectorXd& w) {
    check_weights(b, w);
    if (y.size() != b.x.graphs()) throw ShapeError("td3bc_critic_loss: one target per transition required");
    const Var target = column(y);
    const Var wv = column(w);
    const Var td1 = nn::square(nn::sub(mixed_value(nn::pick(q1.forward(b.x), b.x.actions), b, phi), target));
    const Var td2 = nn::square(nn::sub(mixed_value(nn::pick(q2.forward(b.x), b.x.actions), b, phi), target));
    LossTerms out;
    out.loss = nn::add(weighted_mean(td1, wv, b.x.graphs()), weighted_mean(td2, wv, b.x.graphs()));
    out.td = out.loss.item();
    return out;
}

LossTerms td3bc_actor_loss(const AgentNet& actor, const AgentNet& q1, const Batch& b, double alpha,
                           const Eigen::VectorXd& w, double lambda) {
    check_weights(b, w);
    Matrix q;
    {
        nn::NoGradGuard guard;
        q = q1.forward(b.x).value();
    }
    const Var lp = nn::log_softmax_rows(actor.forward(b.x));
    const Var expected = nn::row_sum(nn::mul(nn::exp(lp), nn::constant(q)));
    if (!(lambda > 0.0)) lambda = 1.0 / std::max(expected.value().cwiseAbs().mean(), 1e-6);
    const Var wn = node_weights(b, w);
    const Var improve = nn::scale(weighted_mean(expected, wn, b.x.graphs()), -lambda);
    const Var ce = nn::scale(weighted_mean(nn::pick(lp, b.x.actions), wn, b.x.graphs()), -1.0);
    LossTerms out;
    out.loss = nn::add(improve, nn::scale(ce, alpha));
    out.actor = improve.item();
    out.bc = ce.item();
    return out;
}

}  // namespace offlight::train
