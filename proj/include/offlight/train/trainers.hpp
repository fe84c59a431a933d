#pragma once

#include "offlight/data/dataset.hpp"
#include "offlight/eval/evaluate.hpp"
#include "offlight/train/agent_net.hpp"
#include "offlight/weighting/weights.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace offlight::train {

inline constexpr int kPolicySchemaVersion = 1;
inline constexpr int kSidecarSchemaVersion = 1;

enum class Algo { kBc, kCql, kTd3Bc };

std::string to_string(Algo algo);
Algo parse_algo(const std::string& name);

struct TrainerConfig {
    Algo algo = Algo::kCql;
    bool offlight = false;
    double alpha_cql = 1.0;
    int target_update_interval = 200;  // episodes, hard copy (CQL)
    double alpha_td3bc = 1.0;
    double tau = 0.005;                // Polyak rate (TD3+BC)
    int policy_delay = 2;              // critic steps per actor step (TD3+BC)
    double lr = 1e-3;
    int batch_size = 16;               // episodes per update
    int train_steps = 1000;
    double reward_scale = 0.01;
    // Boltzmann temperature turning CQL Q-values into the pi_theta used for IS ratios.
    double is_temperature = 1.0;
    bool learn_mixer = false;
    double grad_clip = 0.0;            // 0 disables
    std::uint64_t seed = 0;
    std::string weights_path;          // sidecar, required when offlight
    AgentNetConfig net;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainerConfig& c);
void from_json(const nlohmann::json& j, TrainerConfig& c);

// Agent networks, their target copies and the additive mixer of one trainer.
class PolicyModel {
public:
    PolicyModel(const TrainerConfig& config, const data::Fingerprint& fingerprint);

    const TrainerConfig& config() const { return config_; }
    const data::Fingerprint& fingerprint() const { return fingerprint_; }

    AgentNet& net(const std::string& name);
    const AgentNet& net(const std::string& name) const;
    std::vector<std::string> net_names() const;
    // The network whose outputs define pi_theta: policy, q or actor.
    const AgentNet& acting() const;
    const std::string& acting_name() const { return acting_; }

    // log pi_theta over phases from the acting network's raw outputs.
    nn::Var policy_log_probs(const nn::Var& acting_outputs) const;
    nn::Matrix log_probs(const bpm::EpisodeTensors& x) const;

    // Per-agent mixer scale phi (agents x 1); constant unless learn_mixer.
    const nn::Var& mixer() const { return mixer_; }
    nn::Var& mixer() { return mixer_; }

    // Scalars in every agent network (online and target); independent of N.
    std::size_t agent_parameter_count() const;

    nlohmann::json to_json() const;
    static PolicyModel from_json(const nlohmann::json& j);

private:
    TrainerConfig config_;
    data::Fingerprint fingerprint_;
    std::map<std::string, AgentNet> nets_;
    std::string acting_;
    nn::Var mixer_;
};

// Whole-episode minibatch. Graph rows are t * batch + b.
struct Batch {
    bpm::EpisodeTensors x;
    Eigen::VectorXd rewards;   // scaled team reward per graph row
    Eigen::VectorXd not_done;  // 0 on each episode's last step
    std::vector<int> agent_of_node;
};

Batch make_batch(std::span<const data::Episode* const> episodes, const data::Fingerprint& fp, double reward_scale);

struct LossTerms {
    nn::Var loss;
    double td = 0.0;           // Bellman error term(s)
    double regularizer = 0.0;  // CQL logsumexp gap
    double bc = 0.0;           // cross-entropy to data actions
    double actor = 0.0;        // policy-improvement term
};

// Q_tot = sum_i phi_i * per_node_i for every graph row.
nn::Var mixed_value(const nn::Var& per_node, const Batch& b, const nn::Var& phi);

// `w` holds one weight per graph row; plain training passes ones.
LossTerms bc_loss(const AgentNet& policy, const Batch& b, const Eigen::VectorXd& w);

// r + gamma * sum_i phi_i max_a Q_target^i(h_{t+1}, a).
Eigen::VectorXd cql_targets(const AgentNet& q_target, const Batch& b, const nn::Matrix& phi, double gamma);
LossTerms cql_loss(const AgentNet& q, const Batch& b, const Eigen::VectorXd& y, const nn::Var& phi, double alpha,
                   const Eigen::VectorXd& w);

// r + gamma * sum_i phi_i E_{a ~ pi'}[min(Q1', Q2')(h_{t+1}, a)].
Eigen::VectorXd td3bc_targets(const AgentNet& actor_target, const AgentNet& q1_target, const AgentNet& q2_target,
                              const Batch& b, const nn::Matrix& phi, double gamma);
LossTerms td3bc_critic_loss(const AgentNet& q1, const AgentNet& q2, const Batch& b, const Eigen::VectorXd& y,
                            const nn::Var& phi, const Eigen::VectorXd& w);
// -lambda E_pi[Q1] + alpha * CE, lambda = 1 / mean |E_pi[Q1]| (held constant).
// A positive `lambda` overrides the batch estimate.
LossTerms td3bc_actor_loss(const AgentNet& actor, const AgentNet& q1, const Batch& b, double alpha,
                           const Eigen::VectorXd& w, double lambda = 0.0);

// Return-based sampling probabilities plus diagnostic IS weights of one policy.
struct WeightSidecar {
    weighting::WeightConfig config;
    data::Fingerprint fingerprint;
    struct EpisodeWeights {
        std::string uid;
        double rbps = 0.0;
        std::vector<double> w_is;  // per step, under the policy it was computed for
    };
    std::vector<EpisodeWeights> episodes;

    const EpisodeWeights& find(const std::string& uid) const;
};

WeightSidecar compute_sidecar(const data::Dataset& annotated, const PolicyModel& policy,
                              const weighting::WeightConfig& config);
void save_sidecar(const WeightSidecar& sidecar, const std::filesystem::path& path);
WeightSidecar load_sidecar(const std::filesystem::path& path);

// Replaces estimated_prob with pi_theta of the taken actions (floored).
data::Dataset annotate_from_policy(const data::Dataset& dataset, const PolicyModel& policy,
                                   double floor = weighting::kProbFloor);

struct StepLog {
    long step = 0;
    long episodes_seen = 0;
    double loss = 0.0;
    double td = 0.0;
    double regularizer = 0.0;
    double bc = 0.0;
    double actor = 0.0;
    double w_mean = 1.0;
    double w_max = 1.0;
    double clamp_rate = 0.0;
    bool fallback_uniform = false;
};

class Trainer {
public:
    // `sidecar` is required when config.offlight is set.
    Trainer(const TrainerConfig& config, const data::Dataset& dataset, const WeightSidecar* sidecar = nullptr);
    Trainer(PolicyModel model, const data::Dataset& dataset, const WeightSidecar* sidecar = nullptr);

    // Samples episodes, forms weights and applies one update.
    StepLog step();
    // One update on the given episodes with explicit per-transition weights
    // (graph-row order t * batch + b).
    StepLog update(std::span<const int> episodes, const Eigen::VectorXd& weights);
    // IS (current pi_theta against stored estimates) times RBPS, combined,
    // normalized and clamped.
    weighting::CombinedWeights batch_weights(std::span<const int> episodes) const;
    // Raw per-transition IS weights of the current pi_theta, graph-row order.
    std::vector<double> is_weights(std::span<const int> episodes) const;

    const PolicyModel& model() const { return model_; }
    PolicyModel& model() { return model_; }
    long steps() const { return steps_; }
    long episodes_seen() const { return episodes_seen_; }
    const std::vector<double>& sampling_probabilities() const { return sampler_.probabilities(); }

private:
    void init(const WeightSidecar* sidecar);
    Batch batch_of(std::span<const int> episodes) const;
    void apply(nn::Adam& opt, const nn::Var& loss, const std::vector<nn::Var>& params);

    PolicyModel model_;
    const data::Dataset* dataset_;
    std::vector<double> rbps_;
    weighting::WeightConfig weight_config_;
    weighting::EpisodeSampler sampler_{{1.0}, 0};
    std::unique_ptr<nn::Adam> opt_main_;
    std::unique_ptr<nn::Adam> opt_actor_;
    std::vector<nn::Var> main_params_;
    std::vector<nn::Var> actor_params_;
    long steps_ = 0;
    long episodes_seen_ = 0;
    double last_actor_ = 0.0;
    double last_bc_ = 0.0;
};

using StepCallback = std::function<void(const StepLog&)>;

struct TrainResult {
    PolicyModel model;
    std::vector<StepLog> log;
};

TrainResult train(const data::Dataset& dataset, const TrainerConfig& config, const WeightSidecar* sidecar = nullptr,
                  const StepCallback& on_step = {});

// Fraction of (step, agent) pairs where argmax pi_theta equals the logged action.
double action_match(const PolicyModel& model, const data::Dataset& dataset);

void write_log_csv(const std::vector<StepLog>& log, const std::filesystem::path& path);

struct Checkpoint {
    PolicyModel model;
    long steps = 0;
    long episodes_seen = 0;
};

void save_checkpoint(const PolicyModel& model, long steps, long episodes_seen, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Stateful per-episode execution of pi_theta from local observations.
class PolicyRunner {
public:
    explicit PolicyRunner(const PolicyModel& model);
    void reset();
    // Flat agent-major observations in, agents x phases probabilities out.
    nn::Matrix probabilities(std::span<const double> obs);

private:
    const PolicyModel* model_;
    nn::EdgeIndex edges_;
    std::vector<double> scale_;
    nn::LstmState state_;
};

// Greedy (argmax) rollout policy over a shared, read-only model.
eval::PolicyFactory checkpoint_policy(std::shared_ptr<const PolicyModel> model);

}  // namespace offlight::train
