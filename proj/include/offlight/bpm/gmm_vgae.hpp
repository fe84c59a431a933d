#pragma once

#include "offlight/data/dataset.hpp"
#include "offlight/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace offlight::bpm {

inline constexpr int kModelSchemaVersion = 1;

struct GmmVgaeConfig {
    int latent_dim = 8;
    int components = 5;
    int gat_layers_enc = 3;
    int gat_layers_dec = 3;
    int attention_heads = 4;
    int hidden = 128;
    double kl_weight = 1e-4;
    double lr = 3e-3;
    int batch = 128;
    int epochs = 100;
    // Epoch after which the prior is re-initialized from the latent means
    // (k-means followed by EM); negative disables it.
    int prior_init_epoch = -1;
    // Closed-form EM refit of the prior once training ends.
    bool prior_refit = true;
    // Joint gradient-norm clip per update; 0 disables.
    double grad_clip = 0.0;
    double prob_floor = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const GmmVgaeConfig& c);
void from_json(const nlohmann::json& j, GmmVgaeConfig& c);

// Episodes laid out for batched graph processing. Node rows are ordered
// (t * batch + b) * agents + i; graph rows (one per episode-step) t * batch + b.
struct EpisodeTensors {
    int batch = 0;
    int steps = 0;
    int agents = 0;
    nn::Matrix obs;          // scaled observations, one row per node
    nn::Matrix prev_action;  // one-hot over phases plus a start slot
    std::vector<int> actions;
    std::vector<int> graph_of_node;
    nn::EdgeIndex edges;

    int nodes() const { return batch * steps * agents; }
    int graphs() const { return batch * steps; }
};

// Per-feature multiplier bringing counts and queues into [0, 1].
std::vector<double> observation_scale(const data::Fingerprint& fp);

EpisodeTensors make_tensors(std::span<const data::Episode* const> episodes, const data::Fingerprint& fp);

struct Posterior {
    nn::Var mu;       // graphs x latent_dim
    nn::Var log_var;  // graphs x latent_dim
};

class GmmVgae {
public:
    GmmVgae(const GmmVgaeConfig& config, const data::Fingerprint& fingerprint);

    Posterior encode(const EpisodeTensors& x) const;
    // Log-probabilities over phases, one row per node.
    nn::Var decode_log_probs(const EpisodeTensors& x, const nn::Var& z) const;

    // Prior parameters in natural form.
    Eigen::VectorXd prior_weights() const;
    nn::Matrix prior_means() const { return prior_means_.value(); }
    nn::Matrix prior_variances() const;
    void set_prior(const Eigen::VectorXd& weights, const nn::Matrix& means, const nn::Matrix& variances);

    const nn::Var& prior_logits() const { return prior_logits_; }
    const nn::Var& prior_means_var() const { return prior_means_; }
    const nn::Var& prior_log_vars() const { return prior_log_vars_; }

    const GmmVgaeConfig& config() const { return config_; }
    const data::Fingerprint& fingerprint() const { return fingerprint_; }
    const std::vector<std::vector<int>>& neighbours() const { return neighbours_; }
    const nn::ParameterSet& parameters() const { return params_; }
    nn::ParameterSet& parameters() { return params_; }
    // Encoder and decoder weights only (excludes the prior).
    std::size_t network_parameter_count() const;

private:
    GmmVgaeConfig config_;
    data::Fingerprint fingerprint_;
    std::vector<std::vector<int>> neighbours_;
    nn::Linear enc_in_;
    std::vector<nn::GatLayer> enc_gat_;
    nn::LstmCell enc_rnn_;
    nn::Linear enc_mu_;
    nn::Linear enc_log_var_;
    nn::Linear dec_obs_;
    nn::Linear dec_in_;
    std::vector<nn::GatLayer> dec_gat_;
    nn::Linear dec_out_;
    nn::Var prior_logits_;
    nn::Var prior_means_;
    nn::Var prior_log_vars_;
    nn::ParameterSet params_;
};

// Per-step posterior of one episode.
struct LatentStep {
    Eigen::VectorXd mu;
    Eigen::VectorXd log_var;
};

std::vector<LatentStep> encode(const GmmVgae& model, const data::Episode& episode);

// Per-agent categorical (agents x phases) for one step given the flat
// agent-major observation and a latent vector.
nn::Matrix decode(const GmmVgae& model, std::span<const double> obs, const Eigen::VectorXd& z);

struct ElboTerms {
    nn::Var loss;
    double reconstruction = 0.0;  // cross-entropy summed over agents and steps, averaged over episodes
    double kl = 0.0;              // Monte Carlo estimate averaged over steps
    double accuracy = 0.0;        // argmax match rate of the decoded distributions
};

// `eps` holds the reparameterization noise (graphs x latent_dim).
ElboTerms elbo_loss(const GmmVgae& model, const EpisodeTensors& x, const nn::Matrix& eps);
ElboTerms elbo_loss(const GmmVgae& model, std::span<const data::Episode* const> episodes, nn::Rng& rng);

// Mixture posterior p(k | z) averaged over the episode's steps, evaluated at the posterior means.
std::vector<double> responsibilities(const GmmVgae& model, const data::Episode& episode);

void save_model(const GmmVgae& model, const std::filesystem::path& path);
GmmVgae load_model(const std::filesystem::path& path);
nlohmann::json model_to_json(const GmmVgae& model);
GmmVgae model_from_json(const nlohmann::json& j);

}  // namespace offlight::bpm
