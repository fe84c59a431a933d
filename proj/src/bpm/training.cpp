#include "offlight/bpm/training.hpp"

#include "offlight/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

namespace offlight::bpm {

using nn::Matrix;

namespace {

constexpr int kEncodeChunk = 16;
constexpr double kVarianceFloor = 1e-4;

void require_compatible(const data::Dataset& ds, const GmmVgae& model) {
    if (!(ds.fingerprint == model.fingerprint())) {
        throw IncompatibleError("dataset fingerprint does not match the behavior model");
    }
}

// Posterior means of every step of every episode, stacked row-wise.
Matrix all_posterior_means(const GmmVgae& model, const data::Dataset& ds) {
    nn::NoGradGuard guard;
    std::vector<Matrix> blocks;
    Eigen::Index rows = 0;
    for (std::size_t start = 0; start < ds.episodes.size(); start += kEncodeChunk) {
        std::vector<const data::Episode*> chunk;
        for (std::size_t k = start; k < std::min(ds.episodes.size(), start + kEncodeChunk); ++k) chunk.push_back(&ds.episodes[k]);
        const EpisodeTensors x = make_tensors(chunk, model.fingerprint());
        blocks.push_back(model.encode(x).mu.value());
        rows += blocks.back().rows();
    }
    Matrix out(rows, model.config().latent_dim);
    Eigen::Index r = 0;
    for (const auto& b : blocks) {
        out.middleRows(r, b.rows()) = b;
        r += b.rows();
    }
    return out;
}

double uniform01(nn::Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

namespace {

struct MixtureFit {
    Eigen::VectorXd weights;
    Matrix means;
    Matrix vars;
    double log_likelihood = -std::numeric_limits<double>::infinity();
};

// Per-row log pi_k + log N(z | mu_k, diag var_k), up to the shared constant.
Matrix component_log_density(const Matrix& z, const MixtureFit& m) {
    const Eigen::Index k = m.means.rows();
    Matrix lp(z.rows(), k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::RowVectorXd inv = m.vars.row(c).cwiseInverse();
        const double norm = std::log(m.weights(c)) - 0.5 * m.vars.row(c).array().log().sum();
        lp.col(c) = ((z.rowwise() - m.means.row(c)).array().square().rowwise() * inv.array()).rowwise().sum().matrix() * -0.5;
        lp.col(c).array() += norm;
    }
    return lp;
}

MixtureFit run_em(const Matrix& z, Matrix resp, int em_iterations);

MixtureFit fit_mixture(const Matrix& z, int k, int em_iterations, nn::Rng& rng) {
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();

    // k-means++ seeding.
    Matrix centers(k, d);
    centers.row(0) = z.row(static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(n)) % n);
    Eigen::VectorXd dist2 = (z.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = dist2.sum();
        Eigen::Index pick = 0;
        if (total > 0) {
            double u = uniform01(rng) * total;
            for (pick = 0; pick < n - 1; ++pick) {
                u -= dist2(pick);
                if (u <= 0) break;
            }
        }
        centers.row(c) = z.row(pick);
        dist2 = dist2.cwiseMin((z.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }
    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    for (int it = 0; it < 50; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            (centers.rowwise() - z.row(i)).rowwise().squaredNorm().minCoeff(&best);
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
                changed = true;
            }
        }
        Matrix sums = Matrix::Zero(k, d);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += z.row(i);
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        }
        if (!changed && it > 0) break;
    }

    Matrix resp = Matrix::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) resp(i, assign[static_cast<std::size_t>(i)]) = 1.0;
    return run_em(z, std::move(resp), em_iterations);
}

// Diagonal-covariance EM starting from the given responsibilities.
MixtureFit run_em(const Matrix& z, Matrix resp, int em_iterations) {
    const Eigen::Index n = z.rows();
    const Eigen::Index d = z.cols();
    const Eigen::Index k = resp.cols();
    MixtureFit m{Eigen::VectorXd(k), Matrix(k, d), Matrix(k, d)};
    for (int it = 0; it <= em_iterations; ++it) {
        for (int c = 0; c < k; ++c) {
            const double nk = resp.col(c).sum() + 1e-10;
            m.weights(c) = nk / static_cast<double>(n);
            m.means.row(c) = (resp.col(c).transpose() * z) / nk;
            const Matrix diff = z.rowwise() - m.means.row(c);
            m.vars.row(c) = (resp.col(c).transpose() * diff.array().square().matrix()) / nk;
        }
        m.vars = m.vars.cwiseMax(kVarianceFloor);
        m.weights = m.weights.cwiseMax(1e-6);
        m.weights /= m.weights.sum();
        const Matrix lp = component_log_density(z, m);
        const Eigen::VectorXd mx = lp.rowwise().maxCoeff();
        const Matrix p = (lp.colwise() - mx).array().exp().matrix();
        const Eigen::VectorXd total = p.rowwise().sum();
        m.log_likelihood = (mx.array() + total.array().log()).sum();
        if (it == em_iterations) break;
        resp = p.array().colwise() / total.array();
    }
    return m;
}

void fit_prior(GmmVgae& model, const data::Dataset& dataset, bool from_current, int em_iterations, int restarts) {
    const Matrix z = all_posterior_means(model, dataset);
    const int k = model.config().components;
    if (z.rows() < k) return;
    nn::Rng rng(model.config().seed + 0x51ed270b27);
    MixtureFit best;
    if (from_current) {
        MixtureFit cur{model.prior_weights(), model.prior_means(), model.prior_variances()};
        const Matrix lp = component_log_density(z, cur);
        const Eigen::VectorXd mx = lp.rowwise().maxCoeff();
        const Matrix p = (lp.colwise() - mx).array().exp().matrix();
        best = run_em(z, p.array().colwise() / p.rowwise().sum().array(), em_iterations);
    }
    for (int r = 0; r < std::max(1, restarts); ++r) {
        MixtureFit m = fit_mixture(z, k, em_iterations, rng);
        if (m.log_likelihood > best.log_likelihood) best = std::move(m);
    }
    model.set_prior(best.weights, best.means, best.vars);
}

}  // namespace

void initialize_prior(GmmVgae& model, const data::Dataset& dataset, int em_iterations, int restarts) {
    fit_prior(model, dataset, false, em_iterations, restarts);
}

void refine_prior(GmmVgae& model, const data::Dataset& dataset, int em_iterations, int restarts) {
    fit_prior(model, dataset, true, em_iterations, restarts);
}

FitResult fit(const data::Dataset& dataset, const GmmVgaeConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.episodes.empty()) throw ArgumentError("fit: dataset is empty");
    GmmVgae model(config, dataset.fingerprint);
    const std::vector<nn::Var> params = model.parameters().vars();
    nn::Adam opt(params, {.lr = config.lr});
    nn::Rng rng(config.seed + 1);
    std::vector<int> order(dataset.episodes.size());
    std::iota(order.begin(), order.end(), 0);
    const int batch = std::min<int>(config.batch, static_cast<int>(order.size()));
    std::vector<EpochLog> log;

    const int init_at = config.prior_init_epoch < 0 ? -1 : std::min(config.prior_init_epoch, config.epochs);
    if (init_at == 0) initialize_prior(model, dataset);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        data::shuffle_indices(order, rng());
        EpochLog entry;
        entry.epoch = epoch;
        int batches = 0;
        for (std::size_t start = 0; start + static_cast<std::size_t>(batch) <= order.size(); start += static_cast<std::size_t>(batch)) {
            std::vector<const data::Episode*> eps;
            for (int k = 0; k < batch; ++k) eps.push_back(&dataset.episodes[static_cast<std::size_t>(order[start + static_cast<std::size_t>(k)])]);
            opt.zero_grad();
            ElboTerms terms;
            try {
                terms = elbo_loss(model, eps, rng);
            } catch (const NumericError& e) {
                throw DivergenceError("behavior model diverged at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
            }
            const double loss = terms.loss.item();
            if (!std::isfinite(loss)) throw DivergenceError("behavior model loss became non-finite at epoch " + std::to_string(epoch), epoch);
            terms.loss.backward();
            entry.grad_norm = std::max(entry.grad_norm, nn::clip_grad_norm(params, config.grad_clip));
            opt.step();
            entry.loss += loss;
            entry.reconstruction += terms.reconstruction;
            entry.kl += terms.kl;
            entry.accuracy += terms.accuracy;
            ++batches;
        }
        entry.loss /= batches;
        entry.reconstruction /= batches;
        entry.kl /= batches;
        entry.accuracy /= batches;
        log.push_back(entry);
        if (on_epoch) on_epoch(entry);
        if (epoch + 1 == init_at) initialize_prior(model, dataset);
    }
    if (config.prior_refit && config.epochs > 0) refine_prior(model, dataset);
    return {std::move(model), std::move(log)};
}

data::Dataset annotate(const data::Dataset& dataset, const GmmVgae& model) {
    require_compatible(dataset, model);
    nn::NoGradGuard guard;
    data::Dataset out = dataset;
    const int agents = model.fingerprint().num_agents();
    const int phases = model.fingerprint().num_phases;
    const double floor = model.config().prob_floor;
    for (auto& ep : out.episodes) {
        const data::Episode* one[] = {&ep};
        const EpisodeTensors x = make_tensors(one, model.fingerprint());
        const Posterior post = model.encode(x);
        const Matrix log_probs = model.decode_log_probs(x, post.mu).value();
        if (!log_probs.allFinite()) throw NumericError("annotate: non-finite decoded logits");
        const Matrix probs = log_probs.array().exp().matrix();
        for (int t = 0; t < x.steps; ++t) {
            auto& tr = ep.transitions[static_cast<std::size_t>(t)];
            std::vector<double> taken, dist;
            for (int i = 0; i < agents; ++i) {
                const int row = t * agents + i;
                taken.push_back(std::max(floor, probs(row, tr.actions[static_cast<std::size_t>(i)])));
                for (int p = 0; p < phases; ++p) dist.push_back(probs(row, p));
            }
            tr.estimated_prob = std::move(taken);
            tr.estimated_dist = std::move(dist);
        }
    }
    return out;
}

std::vector<LatentRecord> dump_latents(const data::Dataset& dataset, const GmmVgae& model) {
    require_compatible(dataset, model);
    std::vector<LatentRecord> rows;
    for (const auto& ep : dataset.episodes) {
        LatentRecord r;
        r.uid = ep.meta.uid;
        r.label = ep.meta.controller;
        const auto steps = encode(model, ep);
        r.mean_z = Eigen::VectorXd::Zero(model.config().latent_dim);
        for (const auto& s : steps) r.mean_z += s.mu;
        r.mean_z /= static_cast<double>(steps.size());
        r.gamma = responsibilities(model, ep);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_latents_csv(const std::vector<LatentRecord>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path);
    out.precision(17);
    out << "uid,label";
    if (!rows.empty()) {
        for (Eigen::Index d = 0; d < rows.front().mean_z.size(); ++d) out << ",z" << d;
        for (std::size_t k = 0; k < rows.front().gamma.size(); ++k) out << ",gamma" << k;
    }
    out << "\n";
    for (const auto& r : rows) {
        out << r.uid << "," << r.label;
        for (Eigen::Index d = 0; d < r.mean_z.size(); ++d) out << "," << r.mean_z(d);
        for (double g : r.gamma) out << "," << g;
        out << "\n";
    }
}

std::vector<int> cluster_assignments(const data::Dataset& dataset, const GmmVgae& model) {
    require_compatible(dataset, model);
    std::vector<int> out;
    for (const auto& ep : dataset.episodes) {
        const auto g = responsibilities(model, ep);
        out.push_back(static_cast<int>(std::max_element(g.begin(), g.end()) - g.begin()));
    }
    return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty()) throw ArgumentError("adjusted_rand_index: label vectors differ in size");
    std::map<std::pair<int, int>, long> table;
    std::map<int, long> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++table[{a[i], b[i]}];
        ++ra[a[i]];
        ++rb[b[i]];
    }
    auto c2 = [](long x) { return static_cast<double>(x) * static_cast<double>(x - 1) / 2.0; };
    double index = 0, sa = 0, sb = 0;
    for (const auto& [key, v] : table) index += c2(v);
    for (const auto& [key, v] : ra) sa += c2(v);
    for (const auto& [key, v] : rb) sb += c2(v);
    const double total = c2(static_cast<long>(a.size()));
    const double expected = sa * sb / total;
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

double decoded_accuracy(const data::Dataset& annotated) {
    long hits = 0, total = 0;
    const int phases = annotated.fingerprint.num_phases;
    for (const auto& ep : annotated.episodes) {
        for (const auto& tr : ep.transitions) {
            if (!tr.estimated_dist) throw PreconditionError("decoded_accuracy: dataset is not annotated");
            for (std::size_t i = 0; i < tr.actions.size(); ++i) {
                const auto begin = tr.estimated_dist->begin() + static_cast<std::ptrdiff_t>(i * phases);
                const auto best = std::max_element(begin, begin + phases) - begin;
                hits += best == tr.actions[i] ? 1 : 0;
                ++total;
            }
        }
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace offlight::bpm
