#include "offlight/train/agent_net.hpp"

#include "offlight/errors.hpp"
#include "offlight/sim/network.hpp"

namespace offlight::train {

using nn::Matrix;
using nn::Var;

void AgentNetConfig::validate() const {
    if (rnn_hidden < 1 || fc_hidden < 1 || gat_layers < 0 || attention_heads < 1) {
        throw ConfigError("agent network sizes must be positive");
    }
    if (fc_hidden % attention_heads != 0) throw ConfigError("fc_hidden must be a multiple of attention_heads");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const AgentNetConfig& c) {
    j = {{"rnn_hidden", c.rnn_hidden},
         {"fc_hidden", c.fc_hidden},
         {"gat_layers", c.gat_layers},
         {"attention_heads", c.attention_heads},
         {"gamma", c.gamma}};
}

void from_json(const nlohmann::json& j, AgentNetConfig& c) {
    AgentNetConfig d;
    c.rnn_hidden = j.value("rnn_hidden", d.rnn_hidden);
    c.fc_hidden = j.value("fc_hidden", d.fc_hidden);
    c.gat_layers = j.value("gat_layers", d.gat_layers);
    c.attention_heads = j.value("attention_heads", d.attention_heads);
    c.gamma = j.value("gamma", d.gamma);
}

AgentNet::AgentNet(const AgentNetConfig& config, const data::Fingerprint& fp, int outputs, nn::Rng& rng) {
    config.validate();
    if (outputs < 1) throw ConfigError("agent network needs at least one output");
    agents_ = fp.num_agents();
    neighbours_ = sim::grid_adjacency(fp.grid_rows, fp.grid_cols).neighbour_lists();
    const int h = config.fc_hidden;
    input_ = nn::Linear(fp.obs_size, h, rng);
    params_.extend("input", input_.parameters());
    for (int l = 0; l < config.gat_layers; ++l) {
        gat_.emplace_back(h, config.attention_heads, h / config.attention_heads, rng);
        params_.extend("gat" + std::to_string(l), gat_.back().parameters());
    }
    rnn_ = nn::LstmCell(h, config.rnn_hidden, rng);
    params_.extend("rnn", rnn_.parameters());
    head_ = nn::Linear(config.rnn_hidden, outputs, rng);
    params_.extend("head", head_.parameters());
}

Var AgentNet::embed(const Var& obs, const nn::EdgeIndex& edges) const {
    Var h = nn::relu(input_(obs));
    for (const auto& gat : gat_) h = nn::add(h, nn::relu(gat(h, edges)));
    return h;
}

Var AgentNet::forward(const bpm::EpisodeTensors& x) const {
    if (x.agents != agents_ || x.obs.cols() != input_.in_features()) throw ShapeError("agent network: input arity");
    const Var h = embed(nn::constant(x.obs), x.edges);
    const int per_step = x.batch * x.agents;
    nn::LstmState state = rnn_.initial(per_step);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(x.steps));
    for (int t = 0; t < x.steps; ++t) {
        state = rnn_(nn::slice_rows(h, static_cast<Eigen::Index>(t) * per_step, per_step), state);
        outs.push_back(state.h);
    }
    return head_(nn::concat_rows(outs));
}

nn::LstmState AgentNet::initial(int copies) const { return rnn_.initial(static_cast<Eigen::Index>(copies) * agents_); }

Var AgentNet::step(const Matrix& scaled_obs, const nn::EdgeIndex& edges, nn::LstmState& state) const {
    if (scaled_obs.cols() != input_.in_features() || scaled_obs.rows() != edges.nodes()) {
        throw ShapeError("agent network: step input arity");
    }
    state = rnn_(embed(nn::constant(scaled_obs), edges), state);
    return head_(state.h);
}

void polyak_update(AgentNet& target, const AgentNet& online, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("polyak tau must lie in (0, 1]");
    target.parameters().blend_from(online.parameters(), tau);
}

}  // namespace offlight::train
