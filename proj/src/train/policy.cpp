#include "offlight/errors.hpp"
#include "offlight/train/trainers.hpp"

#include <fstream>

namespace offlight::train {

using nn::Matrix;
using nn::Var;

std::string to_string(Algo algo) {
    switch (algo) {
        case Algo::kBc: return "bc";
        case Algo::kCql: return "cql";
        case Algo::kTd3Bc: return "td3bc";
    }
    return "unknown";
}

Algo parse_algo(const std::string& name) {
    if (name == "bc") return Algo::kBc;
    if (name == "cql") return Algo::kCql;
    if (name == "td3bc") return Algo::kTd3Bc;
    throw ConfigError("unknown algorithm '" + name + "' (expected bc, cql or td3bc)");
}

void TrainerConfig::validate() const {
    net.validate();
    if (!(alpha_cql >= 0) || !(alpha_td3bc >= 0)) throw ConfigError("alpha coefficients must be >= 0");
    if (!(tau > 0 && tau <= 1)) throw ConfigError("tau must lie in (0, 1]");
    if (target_update_interval < 1 || policy_delay < 1) throw ConfigError("update intervals must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (batch_size < 1 || train_steps < 0) throw ConfigError("batch_size must be >= 1 and train_steps >= 0");
    if (!(reward_scale > 0)) throw ConfigError("reward_scale must be positive");
    if (!(is_temperature > 0)) throw ConfigError("is_temperature must be positive");
    if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
}

void to_json(nlohmann::json& j, const TrainerConfig& c) {
    j = {{"algo", to_string(c.algo)},
         {"offlight", c.offlight},
         {"alpha_cql", c.alpha_cql},
         {"target_update_interval", c.target_update_interval},
         {"alpha_td3bc", c.alpha_td3bc},
         {"tau", c.tau},
         {"policy_delay", c.policy_delay},
         {"lr", c.lr},
         {"batch_size", c.batch_size},
         {"train_steps", c.train_steps},
         {"reward_scale", c.reward_scale},
         {"is_temperature", c.is_temperature},
         {"learn_mixer", c.learn_mixer},
         {"grad_clip", c.grad_clip},
         {"seed", c.seed},
         {"weights_path", c.weights_path},
         {"net", c.net}};
}

void from_json(const nlohmann::json& j, TrainerConfig& c) {
    TrainerConfig d;
    c.algo = parse_algo(j.value("algo", to_string(d.algo)));
    c.offlight = j.value("offlight", d.offlight);
    c.alpha_cql = j.value("alpha_cql", d.alpha_cql);
    c.target_update_interval = j.value("target_update_interval", d.target_update_interval);
    c.alpha_td3bc = j.value("alpha_td3bc", d.alpha_td3bc);
    c.tau = j.value("tau", d.tau);
    c.policy_delay = j.value("policy_delay", d.policy_delay);
    c.lr = j.value("lr", d.lr);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.train_steps = j.value("train_steps", d.train_steps);
    c.reward_scale = j.value("reward_scale", d.reward_scale);
    c.is_temperature = j.value("is_temperature", d.is_temperature);
    c.learn_mixer = j.value("learn_mixer", d.learn_mixer);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.seed = j.value("seed", d.seed);
    c.weights_path = j.value("weights_path", d.weights_path);
    c.net = j.contains("net") ? j.at("net").get<AgentNetConfig>() : d.net;
}

PolicyModel::PolicyModel(const TrainerConfig& config, const data::Fingerprint& fingerprint)
    : config_(config), fingerprint_(fingerprint) {
    config_.validate();
    if (fingerprint.num_agents() < 1 || fingerprint.num_phases < 1) throw ConfigError("policy needs agents and phases");
    nn::Rng rng(config_.seed);
    const int phases = fingerprint.num_phases;
    auto make = [&](const std::string& name) { nets_.emplace(name, AgentNet(config_.net, fingerprint_, phases, rng)); };
    auto make_target = [&](const std::string& name, const std::string& online) {
        make(name);
        polyak_update(nets_.at(name), nets_.at(online), 1.0);
    };
    switch (config_.algo) {
        case Algo::kBc:
            make("policy");
            acting_ = "policy";
            break;
        case Algo::kCql:
            make("q");
            make_target("q_target", "q");
            acting_ = "q";
            break;
        case Algo::kTd3Bc:
            make("actor");
            make("q1");
            make("q2");
            make_target("actor_target", "actor");
            make_target("q1_target", "q1");
            make_target("q2_target", "q2");
            acting_ = "actor";
            break;
    }
    const Matrix ones = Matrix::Ones(fingerprint.num_agents(), 1);
    mixer_ = config_.learn_mixer ? nn::parameter(ones) : nn::constant(ones);
}

AgentNet& PolicyModel::net(const std::string& name) {
    auto it = nets_.find(name);
    if (it == nets_.end()) throw LookupError("policy model has no network '" + name + "'");
    return it->second;
}

const AgentNet& PolicyModel::net(const std::string& name) const {
    auto it = nets_.find(name);
    if (it == nets_.end()) throw LookupError("policy model has no network '" + name + "'");
    return it->second;
}

std::vector<std::string> PolicyModel::net_names() const {
    std::vector<std::string> out;
    for (const auto& [name, n] : nets_) out.push_back(name);
    return out;
}

const AgentNet& PolicyModel::acting() const { return net(acting_); }

Var PolicyModel::policy_log_probs(const Var& acting_outputs) const {
    if (config_.algo == Algo::kCql) return nn::log_softmax_rows(nn::scale(acting_outputs, 1.0 / config_.is_temperature));
    return nn::log_softmax_rows(acting_outputs);
}

Matrix PolicyModel::log_probs(const bpm::EpisodeTensors& x) const {
    nn::NoGradGuard guard;
    return policy_log_probs(acting().forward(x)).value();
}

std::size_t PolicyModel::agent_parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, net] : nets_) n += net.parameters().scalar_count();
    return n;
}

nlohmann::json PolicyModel::to_json() const {
    nlohmann::json nets = nlohmann::json::object();
    for (const auto& [name, net] : nets_) nets[name] = net.parameters().to_json();
    const Matrix& phi = mixer_.value();
    return {{"format", "offlight-policy"},
            {"schema_version", kPolicySchemaVersion},
            {"config", config_},
            {"fingerprint", fingerprint_},
            {"nets", nets},
            {"mixer", std::vector<double>(phi.data(), phi.data() + phi.size())}};
}

PolicyModel PolicyModel::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "offlight-policy") throw ParseError("not a policy checkpoint", 0);
    const int version = j.value("schema_version", -1);
    if (version != kPolicySchemaVersion) {
        throw VersionError("policy schema version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kPolicySchemaVersion) + ")");
    }
    PolicyModel m(j.at("config").get<TrainerConfig>(), j.at("fingerprint").get<data::Fingerprint>());
    const auto& nets = j.at("nets");
    if (nets.size() != m.nets_.size()) throw ShapeError("policy checkpoint network set does not match its algorithm");
    for (auto& [name, net] : m.nets_) net.parameters().load_json(nets.at(name));
    const auto phi = j.at("mixer").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(phi.size()) != m.mixer_.rows()) throw ShapeError("mixer size mismatch");
    m.mixer_.mutable_value() = Eigen::Map<const Matrix>(phi.data(), m.mixer_.rows(), 1);
    return m;
}

void save_checkpoint(const PolicyModel& model, long steps, long episodes_seen, const std::filesystem::path& path) {
    nlohmann::json j = model.to_json();
    j["steps"] = steps;
    j["episodes_seen"] = episodes_seen;
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << j.dump() << "\n";
    if (!out) throw ArgumentError("write failed for " + path.string());
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot read " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), e.byte);
    }
}

std::vector<double> taken_probs(const Matrix& log_probs, int row0, const std::vector<int>& actions) {
    std::vector<double> out;
    out.reserve(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) {
        out.push_back(std::exp(log_probs(row0 + static_cast<int>(i), actions[i])));
    }
    return out;
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const nlohmann::json j = read_json(path);
    return {PolicyModel::from_json(j), j.value("steps", 0L), j.value("episodes_seen", 0L)};
}

PolicyRunner::PolicyRunner(const PolicyModel& model)
    : model_(&model),
      edges_(nn::EdgeIndex::replicate(model.acting().neighbours(), 1)),
      scale_(bpm::observation_scale(model.fingerprint())) {
    reset();
}

void PolicyRunner::reset() { state_ = model_->acting().initial(1); }

Matrix PolicyRunner::probabilities(std::span<const double> obs) {
    const auto& fp = model_->fingerprint();
    const int n = fp.num_agents();
    if (static_cast<int>(obs.size()) != n * fp.obs_size) throw ShapeError("policy input arity does not match the checkpoint");
    Matrix x(n, fp.obs_size);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < fp.obs_size; ++k) {
            x(i, k) = obs[static_cast<std::size_t>(i * fp.obs_size + k)] * scale_[static_cast<std::size_t>(k)];
        }
    }
    nn::NoGradGuard guard;
    return model_->policy_log_probs(model_->acting().step(x, edges_, state_)).value().array().exp().matrix();
}

namespace {

class CheckpointRollout : public eval::RolloutPolicy {
public:
    explicit CheckpointRollout(std::shared_ptr<const PolicyModel> model) : model_(std::move(model)), runner_(*model_) {}

    void reset(const sim::SimState& state) override {
        if (state.num_agents() != model_->fingerprint().num_agents()) {
            throw IncompatibleError("checkpoint agent count does not match the evaluation network");
        }
        runner_.reset();
    }

    std::vector<int> act(const std::vector<sim::Observation>& obs, const sim::SimState&, int) override {
        std::vector<double> flat;
        for (const auto& o : obs) flat.insert(flat.end(), o.features.begin(), o.features.end());
        const Matrix p = runner_.probabilities(flat);
        std::vector<int> a(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            Eigen::Index best = 0;
            p.row(i).maxCoeff(&best);
            a[static_cast<std::size_t>(i)] = static_cast<int>(best);
        }
        return a;
    }

private:
    std::shared_ptr<const PolicyModel> model_;
    PolicyRunner runner_;
};

}  // namespace

eval::PolicyFactory checkpoint_policy(std::shared_ptr<const PolicyModel> model) {
    return [model](std::uint64_t) -> std::unique_ptr<eval::RolloutPolicy> { return std::make_unique<CheckpointRollout>(model); };
}

const WeightSidecar::EpisodeWeights& WeightSidecar::find(const std::string& uid) const {
    for (const auto& e : episodes) {
        if (e.uid == uid) return e;
    }
    throw LookupError("weight sidecar has no entry for episode '" + uid + "'");
}

WeightSidecar compute_sidecar(const data::Dataset& annotated, const PolicyModel& policy,
                              const weighting::WeightConfig& config) {
    config.validate();
    if (!(annotated.fingerprint == policy.fingerprint())) throw IncompatibleError("dataset and policy fingerprints differ");
    if (!annotated.annotated()) throw PreconditionError("weights need an annotated dataset (run annotate first)");
    std::vector<double> returns;
    for (const auto& ep : annotated.episodes) returns.push_back(ep.ret);
    const auto rbps = weighting::rbps_distribution(returns, config);
    WeightSidecar out;
    out.config = config;
    out.fingerprint = annotated.fingerprint;
    const int n = annotated.fingerprint.num_agents();
    for (std::size_t k = 0; k < annotated.episodes.size(); ++k) {
        const auto& ep = annotated.episodes[k];
        const data::Episode* one[] = {&ep};
        const Matrix lp = policy.log_probs(bpm::make_tensors(one, annotated.fingerprint));
        WeightSidecar::EpisodeWeights e{ep.meta.uid, rbps[k], {}};
        for (int t = 0; t < ep.length(); ++t) {
            const auto& tr = ep.transitions[static_cast<std::size_t>(t)];
            e.w_is.push_back(weighting::is_weight(config.is_form, taken_probs(lp, t * n, tr.actions), *tr.estimated_prob));
        }
        out.episodes.push_back(std::move(e));
    }
    return out;
}

void save_sidecar(const WeightSidecar& sidecar, const std::filesystem::path& path) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : sidecar.episodes) eps.push_back({{"uid", e.uid}, {"rbps", e.rbps}, {"w_is", e.w_is}});
    const nlohmann::json j = {{"format", "offlight-weights"},
                              {"schema_version", kSidecarSchemaVersion},
                              {"config", sidecar.config},
                              {"fingerprint", sidecar.fingerprint},
                              {"episodes", eps}};
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << j.dump() << "\n";
}

WeightSidecar load_sidecar(const std::filesystem::path& path) {
    const nlohmann::json j = read_json(path);
    if (j.value("format", "") != "offlight-weights") throw ParseError(path.string() + ": not a weight sidecar", 0);
    const int version = j.value("schema_version", -1);
    if (version != kSidecarSchemaVersion) {
        throw VersionError("weight sidecar schema version " + std::to_string(version) + " is not supported");
    }
    WeightSidecar s;
    s.config = j.at("config").get<weighting::WeightConfig>();
    s.fingerprint = j.at("fingerprint").get<data::Fingerprint>();
    for (const auto& e : j.at("episodes")) {
        s.episodes.push_back({e.at("uid").get<std::string>(), e.at("rbps").get<double>(), e.at("w_is").get<std::vector<double>>()});
    }
    return s;
}

data::Dataset annotate_from_policy(const data::Dataset& dataset, const PolicyModel& policy, double floor) {
    if (!(dataset.fingerprint == policy.fingerprint())) throw IncompatibleError("dataset and policy fingerprints differ");
    data::Dataset out = dataset;
    const int n = dataset.fingerprint.num_agents();
    const int phases = dataset.fingerprint.num_phases;
    for (auto& ep : out.episodes) {
        const data::Episode* one[] = {&ep};
        const Matrix lp = policy.log_probs(bpm::make_tensors(one, dataset.fingerprint));
        for (int t = 0; t < ep.length(); ++t) {
            auto& tr = ep.transitions[static_cast<std::size_t>(t)];
            std::vector<double> taken = taken_probs(lp, t * n, tr.actions);
            for (double& p : taken) p = std::max(floor, p);
            std::vector<double> dist;
            for (int i = 0; i < n; ++i) {
                for (int a = 0; a < phases; ++a) dist.push_back(std::exp(lp(t * n + i, a)));
            }
            tr.estimated_prob = std::move(taken);
            tr.estimated_dist = std::move(dist);
        }
    }
    return out;
}

}  // namespace offlight::train
