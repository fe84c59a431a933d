#include "offlight/bpm/gmm_vgae.hpp"

#include "offlight/errors.hpp"
#include "offlight/sim/network.hpp"

#include <cmath>
#include <fstream>

namespace offlight::bpm {

using nn::Matrix;
using nn::Var;

void GmmVgaeConfig::validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (components < 1) throw ConfigError("components must be >= 1");
    if (!(kl_weight >= 0)) throw ConfigError("kl_weight must be >= 0");
    if (gat_layers_enc < 1 || gat_layers_dec < 1) throw ConfigError("at least one GAT layer is required");
    if (attention_heads < 1 || hidden < attention_heads || hidden % attention_heads != 0) {
        throw ConfigError("hidden must be a positive multiple of attention_heads");
    }
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (batch < 1 || epochs < 0) throw ConfigError("batch must be >= 1 and epochs >= 0");
    if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
    if (!(prob_floor > 0 && prob_floor < 1)) throw ConfigError("prob_floor must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const GmmVgaeConfig& c) {
    j = {{"latent_dim", c.latent_dim},
         {"components", c.components},
         {"gat_layers_enc", c.gat_layers_enc},
         {"gat_layers_dec", c.gat_layers_dec},
         {"attention_heads", c.attention_heads},
         {"hidden", c.hidden},
         {"kl_weight", c.kl_weight},
         {"lr", c.lr},
         {"batch", c.batch},
         {"epochs", c.epochs},
         {"prior_init_epoch", c.prior_init_epoch},
         {"prior_refit", c.prior_refit},
         {"grad_clip", c.grad_clip},
         {"prob_floor", c.prob_floor},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GmmVgaeConfig& c) {
    GmmVgaeConfig d;
    c.latent_dim = j.value("latent_dim", d.latent_dim);
    c.components = j.value("components", d.components);
    c.gat_layers_enc = j.value("gat_layers_enc", d.gat_layers_enc);
    c.gat_layers_dec = j.value("gat_layers_dec", d.gat_layers_dec);
    c.attention_heads = j.value("attention_heads", d.attention_heads);
    c.hidden = j.value("hidden", d.hidden);
    c.kl_weight = j.value("kl_weight", d.kl_weight);
    c.lr = j.value("lr", d.lr);
    c.batch = j.value("batch", d.batch);
    c.epochs = j.value("epochs", d.epochs);
    c.prior_init_epoch = j.value("prior_init_epoch", d.prior_init_epoch);
    c.prior_refit = j.value("prior_refit", d.prior_refit);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.prob_floor = j.value("prob_floor", d.prob_floor);
    c.seed = j.value("seed", d.seed);
}

std::vector<double> observation_scale(const data::Fingerprint& fp) {
    std::vector<double> s(static_cast<std::size_t>(fp.obs_size), 1.0);
    const double inv = fp.lane_capacity > 0 ? 1.0 / fp.lane_capacity : 1.0;
    for (int l = 0; l < sim::kLanesPerIntersection; ++l) {
        s[static_cast<std::size_t>(3 * l)] = inv;
        s[static_cast<std::size_t>(3 * l + 2)] = inv;
    }
    return s;
}

EpisodeTensors make_tensors(std::span<const data::Episode* const> episodes, const data::Fingerprint& fp) {
    if (episodes.empty()) throw ArgumentError("no episodes in batch");
    EpisodeTensors x;
    x.batch = static_cast<int>(episodes.size());
    x.steps = episodes.front()->length();
    x.agents = fp.num_agents();
    const int obs_size = fp.obs_size;
    const int phases = fp.num_phases;
    if (x.steps == 0) throw ArgumentError("episode has no transitions");
    for (const auto* ep : episodes) {
        if (ep->length() != x.steps) throw ShapeError("episodes in one batch must have equal length");
    }
    const auto scale = observation_scale(fp);
    x.obs.resize(x.nodes(), obs_size);
    x.prev_action = Matrix::Zero(x.nodes(), phases + 1);
    x.actions.resize(static_cast<std::size_t>(x.nodes()));
    x.graph_of_node.resize(static_cast<std::size_t>(x.nodes()));
    for (int t = 0; t < x.steps; ++t) {
        for (int b = 0; b < x.batch; ++b) {
            const auto& tr = episodes[static_cast<std::size_t>(b)]->transitions[static_cast<std::size_t>(t)];
            if (static_cast<int>(tr.obs.size()) != x.agents * obs_size || static_cast<int>(tr.actions.size()) != x.agents) {
                throw ShapeError("transition arity does not match the model fingerprint");
            }
            const auto* prev = t > 0 ? &episodes[static_cast<std::size_t>(b)]->transitions[static_cast<std::size_t>(t - 1)] : nullptr;
            for (int i = 0; i < x.agents; ++i) {
                const int row = (t * x.batch + b) * x.agents + i;
                for (int k = 0; k < obs_size; ++k) {
                    x.obs(row, k) = tr.obs[static_cast<std::size_t>(i * obs_size + k)] * scale[static_cast<std::size_t>(k)];
                }
                const int a = tr.actions[static_cast<std::size_t>(i)];
                if (a < 0 || a >= phases) throw ShapeError("action outside the phase set");
                x.actions[static_cast<std::size_t>(row)] = a;
                x.prev_action(row, prev ? prev->actions[static_cast<std::size_t>(i)] : phases) = 1.0;
                x.graph_of_node[static_cast<std::size_t>(row)] = t * x.batch + b;
            }
        }
    }
    const auto graph = sim::grid_adjacency(fp.grid_rows, fp.grid_cols);
    x.edges = nn::EdgeIndex::replicate(graph.neighbour_lists(), x.graphs());
    return x;
}

GmmVgae::GmmVgae(const GmmVgaeConfig& config, const data::Fingerprint& fingerprint)
    : config_(config), fingerprint_(fingerprint) {
    config_.validate();
    if (fingerprint.num_agents() < 1 || fingerprint.num_phases < 1) throw ConfigError("model needs agents and phases");
    neighbours_ = sim::grid_adjacency(fingerprint.grid_rows, fingerprint.grid_cols).neighbour_lists();
    nn::Rng rng(config_.seed);
    const int h = config_.hidden;
    const int heads = config_.attention_heads;
    const int phases = fingerprint.num_phases;
    const int obs = fingerprint.obs_size;

    enc_in_ = nn::Linear(obs + phases + 1, h, rng);
    params_.extend("enc_in", enc_in_.parameters());
    for (int l = 0; l < config_.gat_layers_enc; ++l) {
        enc_gat_.emplace_back(h, heads, h / heads, rng);
        params_.extend("enc_gat" + std::to_string(l), enc_gat_.back().parameters());
    }
    enc_rnn_ = nn::LstmCell(h, h, rng);
    params_.extend("enc_rnn", enc_rnn_.parameters());
    enc_mu_ = nn::Linear(h, config_.latent_dim, rng);
    params_.extend("enc_mu", enc_mu_.parameters());
    enc_log_var_ = nn::Linear(h, config_.latent_dim, rng);
    params_.extend("enc_log_var", enc_log_var_.parameters());

    dec_obs_ = nn::Linear(obs, h, rng);
    params_.extend("dec_obs", dec_obs_.parameters());
    dec_in_ = nn::Linear(h + config_.latent_dim, h, rng);
    params_.extend("dec_in", dec_in_.parameters());
    for (int l = 0; l < config_.gat_layers_dec; ++l) {
        dec_gat_.emplace_back(h, heads, h / heads, rng);
        params_.extend("dec_gat" + std::to_string(l), dec_gat_.back().parameters());
    }
    dec_out_ = nn::Linear(h, phases, rng);
    params_.extend("dec_out", dec_out_.parameters());

    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix means(config_.components, config_.latent_dim);
    for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = normal(rng);
    prior_logits_ = nn::parameter(Matrix::Zero(1, config_.components));
    prior_means_ = nn::parameter(means);
    prior_log_vars_ = nn::parameter(Matrix::Zero(config_.components, config_.latent_dim));
    params_.add("prior.logits", prior_logits_);
    params_.add("prior.means", prior_means_);
    params_.add("prior.log_vars", prior_log_vars_);
}

std::size_t GmmVgae::network_parameter_count() const {
    return params_.scalar_count() - static_cast<std::size_t>(prior_logits_.value().size() + prior_means_.value().size() +
                                                            prior_log_vars_.value().size());
}

Posterior GmmVgae::encode(const EpisodeTensors& x) const {
    if (x.obs.cols() != fingerprint_.obs_size || x.prev_action.cols() != fingerprint_.num_phases + 1 ||
        x.agents != fingerprint_.num_agents()) {
        throw ShapeError("encode: input arity does not match the model");
    }
    Var parts[] = {nn::constant(x.obs), nn::constant(x.prev_action)};
    Var hdn = nn::leaky_relu(enc_in_(nn::concat_cols(parts)));
    // Residual GAT stack keeps each node's own signal from being averaged away.
    for (const auto& gat : enc_gat_) hdn = nn::add(hdn, nn::leaky_relu(gat(hdn, x.edges)));
    Var pooled = nn::segment_mean(hdn, x.graph_of_node, x.graphs());
    nn::LstmState state = enc_rnn_.initial(x.batch);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(x.steps));
    for (int t = 0; t < x.steps; ++t) {
        state = enc_rnn_(nn::slice_rows(pooled, static_cast<Eigen::Index>(t) * x.batch, x.batch), state);
        outs.push_back(state.h);
    }
    Var seq = nn::concat_rows(outs);
    return {enc_mu_(seq), enc_log_var_(seq)};
}

Var GmmVgae::decode_log_probs(const EpisodeTensors& x, const Var& z) const {
    if (z.rows() != x.graphs() || z.cols() != config_.latent_dim) throw ShapeError("decode: latent shape");
    Var zn = nn::gather_rows(z, x.graph_of_node);
    Var parts[] = {nn::leaky_relu(dec_obs_(nn::constant(x.obs))), zn};
    Var hdn = nn::leaky_relu(dec_in_(nn::concat_cols(parts)));
    for (const auto& gat : dec_gat_) hdn = nn::add(hdn, nn::leaky_relu(gat(hdn, x.edges)));
    return nn::log_softmax_rows(dec_out_(hdn));
}

Eigen::VectorXd GmmVgae::prior_weights() const {
    const Matrix& l = prior_logits_.value();
    Eigen::VectorXd w = (l.row(0).array() - l.maxCoeff()).exp().transpose();
    return w / w.sum();
}

Matrix GmmVgae::prior_variances() const { return prior_log_vars_.value().array().exp().matrix(); }

void GmmVgae::set_prior(const Eigen::VectorXd& weights, const Matrix& means, const Matrix& variances) {
    const int k = config_.components;
    if (weights.size() != k || means.rows() != k || variances.rows() != k || means.cols() != config_.latent_dim ||
        variances.cols() != config_.latent_dim) {
        throw ShapeError("set_prior: shapes");
    }
    if ((weights.array() <= 0).any() || (variances.array() <= 0).any()) throw ArgumentError("set_prior: nonpositive entries");
    prior_logits_.mutable_value() = weights.array().log().matrix().transpose();
    prior_means_.mutable_value() = means;
    prior_log_vars_.mutable_value() = variances.array().log().matrix();
}

std::vector<LatentStep> encode(const GmmVgae& model, const data::Episode& episode) {
    nn::NoGradGuard guard;
    const data::Episode* one[] = {&episode};
    const EpisodeTensors x = make_tensors(one, model.fingerprint());
    const Posterior p = model.encode(x);
    std::vector<LatentStep> out;
    for (int t = 0; t < x.steps; ++t) {
        out.push_back({p.mu.value().row(t).transpose(), p.log_var.value().row(t).transpose()});
    }
    return out;
}

Matrix decode(const GmmVgae& model, std::span<const double> obs, const Eigen::VectorXd& z) {
    nn::NoGradGuard guard;
    const auto& fp = model.fingerprint();
    if (static_cast<int>(obs.size()) != fp.num_agents() * fp.obs_size) throw ShapeError("decode: observation arity");
    if (z.size() != model.config().latent_dim) throw ShapeError("decode: latent dimension");
    data::Episode ep;
    data::Transition tr;
    tr.obs.assign(obs.begin(), obs.end());
    tr.actions.assign(static_cast<std::size_t>(fp.num_agents()), 0);
    ep.transitions.push_back(std::move(tr));
    const data::Episode* one[] = {&ep};
    const EpisodeTensors x = make_tensors(one, fp);
    const Var lp = model.decode_log_probs(x, nn::constant(z.transpose()));
    if (!lp.value().allFinite()) throw NumericError("decode: non-finite logits");
    return lp.value().array().exp().matrix();
}

ElboTerms elbo_loss(const GmmVgae& model, const EpisodeTensors& x, const Matrix& eps) {
    if (x.batch < 1) throw ArgumentError("elbo_loss: empty batch");
    const Posterior post = model.encode(x);
    if (eps.rows() != post.mu.rows() || eps.cols() != post.mu.cols()) throw ShapeError("elbo_loss: noise shape");
    Var sigma = nn::exp(nn::scale(post.log_var, 0.5));
    Var z = nn::add(post.mu, nn::mul(sigma, nn::constant(eps)));
    Var log_probs = model.decode_log_probs(x, z);
    Var recon = nn::scale(nn::sum(nn::pick(log_probs, x.actions)), -1.0 / x.batch);
    Var log_q = nn::diag_gaussian_log_prob(z, post.mu, post.log_var);
    Var log_p = nn::gmm_log_prob(z, model.prior_logits(), model.prior_means_var(), model.prior_log_vars());
    Var kl = nn::mean(nn::sub(log_q, log_p));
    ElboTerms out;
    out.loss = nn::add(recon, nn::scale(kl, model.config().kl_weight));
    out.reconstruction = recon.item();
    out.kl = kl.item();
    long hits = 0;
    const Matrix& lp = log_probs.value();
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        Eigen::Index best = 0;
        lp.row(r).maxCoeff(&best);
        hits += best == x.actions[static_cast<std::size_t>(r)] ? 1 : 0;
    }
    out.accuracy = static_cast<double>(hits) / static_cast<double>(lp.rows());
    return out;
}

ElboTerms elbo_loss(const GmmVgae& model, std::span<const data::Episode* const> episodes, nn::Rng& rng) {
    if (episodes.empty()) throw ArgumentError("elbo_loss: empty batch");
    const EpisodeTensors x = make_tensors(episodes, model.fingerprint());
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix eps(x.graphs(), model.config().latent_dim);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
    return elbo_loss(model, x, eps);
}

std::vector<double> responsibilities(const GmmVgae& model, const data::Episode& episode) {
    const auto steps = encode(model, episode);
    const int k = model.config().components;
    const Eigen::VectorXd w = model.prior_weights();
    const Matrix mu = model.prior_means();
    const Matrix var = model.prior_variances();
    std::vector<double> gamma(static_cast<std::size_t>(k), 0.0);
    Eigen::VectorXd logp(k);
    for (const auto& s : steps) {
        for (int c = 0; c < k; ++c) {
            const Eigen::ArrayXd d = s.mu.array() - mu.row(c).transpose().array();
            const Eigen::ArrayXd v = var.row(c).transpose().array();
            logp(c) = std::log(w(c)) - 0.5 * ((d * d / v).sum() + v.log().sum());
        }
        const double m = logp.maxCoeff();
        const Eigen::VectorXd p = (logp.array() - m).exp();
        const double z = p.sum();
        for (int c = 0; c < k; ++c) gamma[static_cast<std::size_t>(c)] += p(c) / z;
    }
    for (double& g : gamma) g /= static_cast<double>(steps.size());
    return gamma;
}

nlohmann::json model_to_json(const GmmVgae& model) {
    return {{"format", "offlight-bpm"},
            {"schema_version", kModelSchemaVersion},
            {"config", model.config()},
            {"fingerprint", model.fingerprint()},
            {"parameters", model.parameters().to_json()}};
}

GmmVgae model_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "offlight-bpm") throw ParseError("not a behavior model checkpoint", 0);
    const int version = j.value("schema_version", -1);
    if (version != kModelSchemaVersion) {
        throw VersionError("behavior model schema version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kModelSchemaVersion) + ")");
    }
    GmmVgae model(j.at("config").get<GmmVgaeConfig>(), j.at("fingerprint").get<data::Fingerprint>());
    model.parameters().load_json(j.at("parameters"));
    return model;
}

void save_model(const GmmVgae& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << model_to_json(model).dump() << "\n";
    if (!out) throw ArgumentError("write failed for " + path.string());
}

GmmVgae load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), e.byte);
    }
    return model_from_json(j);
}

}  // namespace offlight::bpm
