#include "offlight/train/trainers.hpp"

#include "offlight/errors.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

namespace offlight::train {

using nn::Matrix;

Trainer::Trainer(const TrainerConfig& config, const data::Dataset& dataset, const WeightSidecar* sidecar)
    : model_(config, dataset.fingerprint), dataset_(&dataset) {
    init(sidecar);
}

Trainer::Trainer(PolicyModel model, const data::Dataset& dataset, const WeightSidecar* sidecar)
    : model_(std::move(model)), dataset_(&dataset) {
    init(sidecar);
}

void Trainer::init(const WeightSidecar* sidecar) {
    const data::Dataset& ds = *dataset_;
    const TrainerConfig& c = model_.config();
    if (ds.episodes.empty()) throw ArgumentError("training dataset is empty");
    if (!(ds.fingerprint == model_.fingerprint())) throw IncompatibleError("dataset fingerprint does not match the policy");
    const std::size_t m = ds.episodes.size();
    if (c.offlight) {
        if (!sidecar) throw ArgumentError("offlight training requires a weight sidecar (weights_path)");
        if (!ds.annotated()) throw PreconditionError("offlight training requires a dataset annotated by the behavior model");
        if (!(sidecar->fingerprint == ds.fingerprint)) throw IncompatibleError("weight sidecar fingerprint does not match the dataset");
        weight_config_ = sidecar->config;
        std::unordered_map<std::string, double> by_uid;
        for (const auto& e : sidecar->episodes) by_uid[e.uid] = e.rbps;
        for (const auto& ep : ds.episodes) {
            auto it = by_uid.find(ep.meta.uid);
            if (it == by_uid.end()) throw LookupError("weight sidecar has no entry for episode '" + ep.meta.uid + "'");
            rbps_.push_back(it->second);
        }
    } else {
        rbps_.assign(m, 1.0 / static_cast<double>(m));
    }
    sampler_ = weighting::EpisodeSampler(rbps_, c.seed + 0x2545f491);

    auto add = [](std::vector<nn::Var>& dst, const AgentNet& net) {
        const auto v = net.parameters().vars();
        dst.insert(dst.end(), v.begin(), v.end());
    };
    switch (c.algo) {
        case Algo::kBc: add(main_params_, model_.net("policy")); break;
        case Algo::kCql: add(main_params_, model_.net("q")); break;
        case Algo::kTd3Bc:
            add(main_params_, model_.net("q1"));
            add(main_params_, model_.net("q2"));
            add(actor_params_, model_.net("actor"));
            opt_actor_ = std::make_unique<nn::Adam>(actor_params_, nn::Adam::Options{.lr = c.lr});
            break;
    }
    if (c.learn_mixer && c.algo != Algo::kBc) main_params_.push_back(model_.mixer());
    opt_main_ = std::make_unique<nn::Adam>(main_params_, nn::Adam::Options{.lr = c.lr});
}

Batch Trainer::batch_of(std::span<const int> episodes) const {
    std::vector<const data::Episode*> eps;
    eps.reserve(episodes.size());
    for (int k : episodes) {
        if (k < 0 || k >= static_cast<int>(dataset_->episodes.size())) throw ArgumentError("episode index out of range");
        eps.push_back(&dataset_->episodes[static_cast<std::size_t>(k)]);
    }
    return make_batch(eps, model_.fingerprint(), model_.config().reward_scale);
}

void Trainer::apply(nn::Adam& opt, const nn::Var& loss, const std::vector<nn::Var>& params) {
    if (!std::isfinite(loss.item())) {
        throw DivergenceError("training loss became non-finite at step " + std::to_string(steps_), steps_);
    }
    opt.zero_grad();
    loss.backward();
    nn::clip_grad_norm(params, model_.config().grad_clip);
    opt.step();
}

weighting::CombinedWeights Trainer::batch_weights(std::span<const int> episodes) const {
    const std::vector<double> w_is = is_weights(episodes);
    std::vector<double> w_rbps;
    w_rbps.reserve(w_is.size());
    for (std::size_t g = 0; g < w_is.size(); ++g) w_rbps.push_back(rbps_[static_cast<std::size_t>(episodes[g % episodes.size()])]);
    return weighting::combine_or_uniform(w_is, w_rbps, weight_config_);
}

std::vector<double> Trainer::is_weights(std::span<const int> episodes) const {
    const Batch b = batch_of(episodes);
    const Matrix lp = model_.log_probs(b.x);
    const int n = b.x.agents;
    const int batch = b.x.batch;
    std::vector<double> w_is(static_cast<std::size_t>(b.x.graphs()));
    std::vector<double> target(static_cast<std::size_t>(n));
    for (int t = 0; t < b.x.steps; ++t) {
        for (int e = 0; e < batch; ++e) {
            const int k = episodes[static_cast<std::size_t>(e)];
            const auto& tr = dataset_->episodes[static_cast<std::size_t>(k)].transitions[static_cast<std::size_t>(t)];
            if (!tr.estimated_prob) throw PreconditionError("transition lacks an estimated behavior probability");
            const int g = t * batch + e;
            for (int i = 0; i < n; ++i) target[static_cast<std::size_t>(i)] = std::exp(lp(g * n + i, tr.actions[static_cast<std::size_t>(i)]));
            w_is[static_cast<std::size_t>(g)] = weighting::is_weight(weight_config_.is_form, target, *tr.estimated_prob);
        }
    }
    return w_is;
}

StepLog Trainer::update(std::span<const int> episodes, const Eigen::VectorXd& weights) {
    const TrainerConfig& c = model_.config();
    const Batch b = batch_of(episodes);
    StepLog log;
    try {
        LossTerms t;
        switch (c.algo) {
            case Algo::kBc:
                t = bc_loss(model_.net("policy"), b, weights);
                apply(*opt_main_, t.loss, main_params_);
                break;
            case Algo::kCql: {
                const Eigen::VectorXd y = cql_targets(model_.net("q_target"), b, model_.mixer().value(), c.net.gamma);
                t = cql_loss(model_.net("q"), b, y, model_.mixer(), c.alpha_cql, weights);
                apply(*opt_main_, t.loss, main_params_);
                break;
            }
            case Algo::kTd3Bc: {
                const Eigen::VectorXd y = td3bc_targets(model_.net("actor_target"), model_.net("q1_target"),
                                                        model_.net("q2_target"), b, model_.mixer().value(), c.net.gamma);
                t = td3bc_critic_loss(model_.net("q1"), model_.net("q2"), b, y, model_.mixer(), weights);
                apply(*opt_main_, t.loss, main_params_);
                if ((steps_ + 1) % c.policy_delay == 0) {
                    const LossTerms a = td3bc_actor_loss(model_.net("actor"), model_.net("q1"), b, c.alpha_td3bc, weights);
                    apply(*opt_actor_, a.loss, actor_params_);
                    last_actor_ = a.actor;
                    last_bc_ = a.bc;
                    polyak_update(model_.net("actor_target"), model_.net("actor"), c.tau);
                    polyak_update(model_.net("q1_target"), model_.net("q1"), c.tau);
                    polyak_update(model_.net("q2_target"), model_.net("q2"), c.tau);
                }
                t.actor = last_actor_;
                t.bc = last_bc_;
                break;
            }
        }
        log.loss = t.loss.item();
        log.td = t.td;
        log.regularizer = t.regularizer;
        log.bc = t.bc;
        log.actor = t.actor;
    } catch (const NumericError& e) {
        throw DivergenceError("training diverged at step " + std::to_string(steps_) + ": " + e.what(), steps_);
    }
    const long before = episodes_seen_;
    episodes_seen_ += static_cast<long>(episodes.size());
    if (c.algo == Algo::kCql && episodes_seen_ / c.target_update_interval > before / c.target_update_interval) {
        polyak_update(model_.net("q_target"), model_.net("q"), 1.0);
    }
    ++steps_;
    log.step = steps_;
    log.episodes_seen = episodes_seen_;
    log.w_mean = weights.mean();
    log.w_max = weights.maxCoeff();
    return log;
}

StepLog Trainer::step() {
    const TrainerConfig& c = model_.config();
    const std::vector<int> episodes = sampler_.sample(c.batch_size);
    if (!c.offlight) {
        const int rows = dataset_->episodes[static_cast<std::size_t>(episodes.front())].length() * c.batch_size;
        return update(episodes, Eigen::VectorXd::Ones(rows));
    }
    const weighting::CombinedWeights cw = batch_weights(episodes);
    StepLog log = update(episodes, Eigen::Map<const Eigen::VectorXd>(cw.weights.data(), static_cast<Eigen::Index>(cw.weights.size())));
    log.clamp_rate = cw.clamp_rate();
    log.fallback_uniform = cw.fallback_uniform;
    return log;
}

TrainResult train(const data::Dataset& dataset, const TrainerConfig& config, const WeightSidecar* sidecar,
                  const StepCallback& on_step) {
    Trainer trainer(config, dataset, sidecar);
    std::vector<StepLog> log;
    log.reserve(static_cast<std::size_t>(config.train_steps));
    for (int s = 0; s < config.train_steps; ++s) {
        log.push_back(trainer.step());
        if (on_step) on_step(log.back());
    }
    return {trainer.model(), std::move(log)};
}

double action_match(const PolicyModel& model, const data::Dataset& dataset) {
    long hits = 0;
    long total = 0;
    for (const auto& ep : dataset.episodes) {
        const data::Episode* one[] = {&ep};
        const bpm::EpisodeTensors x = bpm::make_tensors(one, dataset.fingerprint);
        const Matrix lp = model.log_probs(x);
        for (Eigen::Index r = 0; r < lp.rows(); ++r) {
            Eigen::Index best = 0;
            lp.row(r).maxCoeff(&best);
            hits += best == x.actions[static_cast<std::size_t>(r)] ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw ArgumentError("action_match: empty dataset");
    return static_cast<double>(hits) / static_cast<double>(total);
}

void write_log_csv(const std::vector<StepLog>& log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out.precision(10);
    out << "step,episodes_seen,loss,td,regularizer,bc,actor,w_mean,w_max,clamp_rate,fallback_uniform\n";
    for (const auto& s : log) {
        out << s.step << "," << s.episodes_seen << "," << s.loss << "," << s.td << "," << s.regularizer << "," << s.bc
            << "," << s.actor << "," << s.w_mean << "," << s.w_max << "," << s.clamp_rate << ","
            << (s.fallback_uniform ? 1 : 0) << "\n";
    }
}

}  // namespace offlight::train
