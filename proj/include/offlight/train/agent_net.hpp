#pragma once

#include "offlight/bpm/gmm_vgae.hpp"
#include "offlight/data/dataset.hpp"
#include "offlight/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace offlight::train {

struct AgentNetConfig {
    int rnn_hidden = 128;
    int fc_hidden = 128;
    int gat_layers = 1;
    int attention_heads = 4;
    double gamma = 0.99;

    void validate() const;
};

void to_json(nlohmann::json& j, const AgentNetConfig& c);
void from_json(const nlohmann::json& j, AgentNetConfig& c);

// Shared-parameter agent network: FC -> GAT (residual) -> LSTM over time -> FC.
// One instance serves every agent; the graph supplies neighbour context.
class AgentNet {
public:
    AgentNet() = default;
    AgentNet(const AgentNetConfig& config, const data::Fingerprint& fingerprint, int outputs, nn::Rng& rng);

    // Whole episodes laid out as in bpm::make_tensors. Returns one row per node.
    nn::Var forward(const bpm::EpisodeTensors& x) const;

    // One control step for `copies` graphs; rows are copy * agents + agent.
    nn::LstmState initial(int copies) const;
    nn::Var step(const nn::Matrix& scaled_obs, const nn::EdgeIndex& edges, nn::LstmState& state) const;

    const nn::ParameterSet& parameters() const { return params_; }
    nn::ParameterSet& parameters() { return params_; }
    int outputs() const { return head_.out_features(); }
    const std::vector<std::vector<int>>& neighbours() const { return neighbours_; }
    int agents() const { return agents_; }

private:
    nn::Var embed(const nn::Var& obs, const nn::EdgeIndex& edges) const;

    int agents_ = 0;
    std::vector<std::vector<int>> neighbours_;
    nn::Linear input_;
    std::vector<nn::GatLayer> gat_;
    nn::LstmCell rnn_;
    nn::Linear head_;
    nn::ParameterSet params_;
};

// target <- (1 - tau) * target + tau * online; tau = 1 copies.
void polyak_update(AgentNet& target, const AgentNet& online, double tau);

}  // namespace offlight::train
