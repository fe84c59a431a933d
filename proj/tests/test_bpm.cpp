#include "offlight/bpm/training.hpp"
#include "offlight/errors.hpp"
#include "offlight/sim/scenarios.hpp"

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace offlight;
using namespace offlight::bpm;

namespace {

data::Dataset make_data(control::ControllerKind kind, int episodes, std::uint64_t seed,
                        const std::string& scenario = "toy-2x2") {
    data::GenerationRequest r;
    r.network = sim::scenario_spec(scenario, "medium");
    r.controller.kind = kind;
    r.episodes = episodes;
    r.seed = seed;
    r.scenario = scenario;
    r.demand = "medium";
    return data::generate_dataset(r);
}

GmmVgaeConfig small_config() {
    GmmVgaeConfig c;
    c.latent_dim = 3;
    c.components = 2;
    c.gat_layers_enc = 1;
    c.gat_layers_dec = 1;
    c.attention_heads = 2;
    c.hidden = 8;
    c.batch = 4;
    c.epochs = 2;
    c.seed = 5;
    return c;
}

void zero_network(GmmVgae& model) {
    for (auto& [name, v] : model.parameters().entries()) {
        if (name.rfind("prior.", 0) == 0) continue;
        auto p = v;
        p.mutable_value().setZero();
    }
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "offlight_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

double binomial_halfwidth_99(double p, long n) { return 2.5758 * std::sqrt(p * (1 - p) / static_cast<double>(n)); }

}  // namespace

TEST(BehaviorModel, EncodeShape) {
    const auto ds = make_data(control::ControllerKind::kGreedy, 1, 3);
    GmmVgaeConfig c;
    c.hidden = 16;
    const GmmVgae model(c, ds.fingerprint);
    const auto steps = encode(model, ds.episodes[0]);
    ASSERT_EQ(steps.size(), 72u);
    for (const auto& s : steps) {
        EXPECT_EQ(s.mu.size(), 8);
        EXPECT_EQ(s.log_var.size(), 8);
        EXPECT_TRUE(s.mu.allFinite());
        EXPECT_TRUE(s.log_var.allFinite());
    }
}

TEST(BehaviorModel, IdenticalEpisodesGiveIdenticalPosteriors) {
    const auto ds = make_data(control::ControllerKind::kRandom, 1, 4);
    const GmmVgae model(small_config(), ds.fingerprint);
    const auto a = encode(model, ds.episodes[0]);
    const data::Episode copy = ds.episodes[0];
    const auto b = encode(model, copy);
    for (std::size_t t = 0; t < a.size(); ++t) {
        EXPECT_EQ(a[t].mu, b[t].mu);
        EXPECT_EQ(a[t].log_var, b[t].log_var);
    }
}

TEST(BehaviorModel, ArityMismatchIsShapeError) {
    const auto ds = make_data(control::ControllerKind::kRandom, 1, 4);
    const auto big = make_data(control::ControllerKind::kRandom, 1, 4, "toy-3x3");
    const GmmVgae model(small_config(), ds.fingerprint);
    EXPECT_THROW(encode(model, big.episodes[0]), ShapeError);
    std::vector<double> obs(3, 0.0);
    EXPECT_THROW(decode(model, obs, Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST(BehaviorModel, ZeroWeightsGiveZeroMeansAndUniformDecode) {
    const auto ds = make_data(control::ControllerKind::kGreedy, 1, 6);
    GmmVgae model(small_config(), ds.fingerprint);
    zero_network(model);
    for (const auto& s : encode(model, ds.episodes[0])) EXPECT_EQ(s.mu.cwiseAbs().maxCoeff(), 0.0);
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(3, 0.7);
    const auto probs = decode(model, ds.episodes[0].transitions[10].obs, z);
    EXPECT_TRUE(probs.isApproxToConstant(0.25, 1e-15));
}

TEST(BehaviorModel, DecodedRowsAreDistributions) {
    const auto ds = make_data(control::ControllerKind::kRandom, 1, 7);
    const GmmVgae model(small_config(), ds.fingerprint);
    nn::Rng rng(1);
    std::normal_distribution<double> normal(0.0, 5.0);
    for (int k = 0; k < 10; ++k) {
        Eigen::VectorXd z(3);
        for (int d = 0; d < 3; ++d) z(d) = normal(rng);
        const auto p = decode(model, ds.episodes[0].transitions[static_cast<std::size_t>(k)].obs, z);
        ASSERT_EQ(p.rows(), 4);
        ASSERT_EQ(p.cols(), 4);
        EXPECT_GE(p.minCoeff(), 0.0);
        for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
    }
    Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
    bad(0) = std::nan("");
    EXPECT_THROW(decode(model, ds.episodes[0].transitions[0].obs, bad), NumericError);
}

TEST(BehaviorModel, ZeroKlWeightLeavesReconstruction) {
    const auto ds = make_data(control::ControllerKind::kGreedy, 2, 8);
    GmmVgaeConfig c = small_config();
    c.kl_weight = 0.0;
    const GmmVgae model(c, ds.fingerprint);
    const data::Episode* eps[] = {&ds.episodes[0], &ds.episodes[1]};
    nn::Rng rng(3);
    const ElboTerms t = elbo_loss(model, eps, rng);
    EXPECT_EQ(t.loss.item(), t.reconstruction);
    EXPECT_GT(t.kl, -1e300);
}

TEST(BehaviorModel, UniformDecoderCostsLogFourPerAgentStep) {
    const auto ds = make_data(control::ControllerKind::kRandom, 2, 9);
    GmmVgaeConfig c = small_config();
    c.kl_weight = 0.0;
    GmmVgae model(c, ds.fingerprint);
    for (auto& [name, v] : model.parameters().entries()) {
        if (name.rfind("dec_", 0) == 0) {
            auto p = v;
            p.mutable_value().setZero();
        }
    }
    const data::Episode* eps[] = {&ds.episodes[0], &ds.episodes[1]};
    nn::Rng rng(3);
    const ElboTerms t = elbo_loss(model, eps, rng);
    EXPECT_NEAR(t.reconstruction / (72.0 * 4.0), std::log(4.0), 1e-12);
}

TEST(BehaviorModel, EmptyBatchIsArgumentError) {
    const auto ds = make_data(control::ControllerKind::kRandom, 1, 9);
    const GmmVgae model(small_config(), ds.fingerprint);
    std::vector<const data::Episode*> none;
    nn::Rng rng(1);
    EXPECT_THROW(elbo_loss(model, none, rng), ArgumentError);
}

TEST(BehaviorModel, KlEstimateVanishesWhenPosteriorEqualsPrior) {
    const int n = 10000;
    nn::Rng rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);
    nn::Matrix z(n, 4);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
    const auto zero = nn::constant(nn::Matrix::Zero(n, 4));
    const auto log_q = nn::diag_gaussian_log_prob(nn::constant(z), zero, zero);
    const auto log_p = nn::gmm_log_prob(nn::constant(z), nn::constant(nn::Matrix::Zero(1, 1)),
                                        nn::constant(nn::Matrix::Zero(1, 4)), nn::constant(nn::Matrix::Zero(1, 4)));
    const Eigen::ArrayXd diff = (log_q.value() - log_p.value()).array();
    const double mean = diff.mean();
    const double sd = std::sqrt((diff - mean).square().sum() / (n - 1));
    EXPECT_LE(std::abs(mean), 3.0 * std::max(sd, 1e-12) / 100.0);
}

TEST(BehaviorModel, ElboGradientsMatchFiniteDifferences) {
    auto ds = make_data(control::ControllerKind::kGreedy, 2, 12);
    for (auto& ep : ds.episodes) ep.transitions.resize(4);
    GmmVgaeConfig c = small_config();
    c.kl_weight = 0.3;
    GmmVgae model(c, ds.fingerprint);
    // Spread the prior so each component contributes.
    nn::Matrix means(2, 3);
    means << 0.5, -0.2, 0.1, -0.4, 0.3, 0.2;
    model.set_prior(Eigen::Vector2d(0.4, 0.6), means, nn::Matrix::Constant(2, 3, 0.8));
    const data::Episode* eps[] = {&ds.episodes[0], &ds.episodes[1]};
    const EpisodeTensors x = make_tensors(eps, ds.fingerprint);
    nn::Rng rng(2);
    std::normal_distribution<double> normal(0.0, 1.0);
    nn::Matrix noise(x.graphs(), 3);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
    std::vector<nn::Var> params;
    std::vector<std::string> names;
    for (const auto& [name, v] : model.parameters().entries()) {
        params.push_back(v);
        names.push_back(name);
    }
    const auto res = check::gradcheck([&] { return elbo_loss(model, x, noise).loss; }, params, names, 1e-6, 24);
    EXPECT_LT(res.worst_relative, 1e-3) << res.worst_name;
}

TEST(BehaviorModel, NetworkParameterCountIndependentOfGridSize) {
    const auto a = make_data(control::ControllerKind::kRandom, 1, 1, "toy-2x2");
    const auto b = make_data(control::ControllerKind::kRandom, 1, 1, "toy-3x3");
    const GmmVgaeConfig c;
    EXPECT_EQ(GmmVgae(c, a.fingerprint).network_parameter_count(), GmmVgae(c, b.fingerprint).network_parameter_count());
}

TEST(BehaviorModel, ResponsibilitiesSingleComponent) {
    const auto ds = make_data(control::ControllerKind::kRandom, 1, 2);
    GmmVgaeConfig c = small_config();
    c.components = 1;
    const GmmVgae model(c, ds.fingerprint);
    const auto g = responsibilities(model, ds.episodes[0]);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_NEAR(g[0], 1.0, 1e-12);
}

TEST(BehaviorModel, ResponsibilitiesFollowDominantComponent) {
    const auto ds = make_data(control::ControllerKind::kRandom, 1, 2);
    GmmVgae model(small_config(), ds.fingerprint);
    zero_network(model);  // every posterior mean is exactly 0
    nn::Matrix means(2, 3);
    means << 0, 0, 0, 50, 50, 50;
    model.set_prior(Eigen::Vector2d(0.5, 0.5), means, nn::Matrix::Ones(2, 3));
    const auto g = responsibilities(model, ds.episodes[0]);
    EXPECT_NEAR(g[0], 1.0, 1e-9);
    EXPECT_NEAR(g[0] + g[1], 1.0, 1e-12);
}

TEST(BehaviorModel, FitLogsFiniteLossesAndIsDeterministic) {
    const auto ds = make_data(control::ControllerKind::kFixedTime, 20, 13);
    GmmVgaeConfig c = small_config();
    c.epochs = 5;
    const FitResult a = fit(ds, c);
    const FitResult b = fit(ds, c);
    ASSERT_EQ(a.log.size(), 5u);
    for (std::size_t e = 0; e < a.log.size(); ++e) {
        EXPECT_TRUE(std::isfinite(a.log[e].loss));
        EXPECT_EQ(a.log[e].loss, b.log[e].loss);
    }
    const auto w = a.model.prior_weights();
    EXPECT_NEAR(w.sum(), 1.0, 1e-6);
    EXPECT_GT(a.model.prior_variances().minCoeff(), 0.0);
}

TEST(BehaviorModel, DivergenceReportsEpoch) {
    const auto ds = make_data(control::ControllerKind::kRandom, 8, 14);
    GmmVgaeConfig c = small_config();
    c.lr = 1e300;
    c.epochs = 3;
    try {
        fit(ds, c);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.index(), 0);
        EXPECT_LT(e.index(), 3);
    }
}

TEST(BehaviorModel, AnnotateBoundsIdempotenceAndFingerprint) {
    const auto ds = make_data(control::ControllerKind::kGreedy, 4, 15);
    GmmVgaeConfig c = small_config();
    const FitResult r = fit(ds, c);
    const data::Dataset once = annotate(ds, r.model);
    const data::Dataset twice = annotate(once, r.model);
    for (std::size_t k = 0; k < once.episodes.size(); ++k) {
        for (std::size_t t = 0; t < once.episodes[k].transitions.size(); ++t) {
            const auto& tr = once.episodes[k].transitions[t];
            ASSERT_TRUE(tr.estimated_prob.has_value());
            for (double p : *tr.estimated_prob) {
                EXPECT_GE(p, c.prob_floor);
                EXPECT_LE(p, 1.0);
            }
            EXPECT_EQ(*tr.estimated_prob, *twice.episodes[k].transitions[t].estimated_prob);
        }
    }
    const auto other = make_data(control::ControllerKind::kGreedy, 1, 15, "toy-3x3");
    EXPECT_THROW(annotate(other, r.model), IncompatibleError);
}

TEST(BehaviorModel, CheckpointRoundTrip) {
    const auto ds = make_data(control::ControllerKind::kGreedy, 1, 16);
    GmmVgae model(small_config(), ds.fingerprint);
    nn::Matrix means(2, 3);
    means << 1, 2, 3, -1, -2, -3;
    model.set_prior(Eigen::Vector2d(0.3, 0.7), means, nn::Matrix::Constant(2, 3, 0.5));
    const auto path = temp_file("bpm.json");
    save_model(model, path);
    const GmmVgae back = load_model(path);
    const auto a = encode(model, ds.episodes[0]);
    const auto b = encode(back, ds.episodes[0]);
    for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t].mu, b[t].mu);
    EXPECT_EQ(responsibilities(model, ds.episodes[0]), responsibilities(back, ds.episodes[0]));

    auto j = model_to_json(model);
    j["schema_version"] = kModelSchemaVersion + 1;
    EXPECT_THROW(model_from_json(j), VersionError);

    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto cut = temp_file("bpm_cut.json");
    std::ofstream(cut) << text.substr(0, text.size() / 2);
    EXPECT_THROW(load_model(cut), ParseError);
}

TEST(BehaviorModel, RandomActionsAreUnpredictable) {
    const auto train = make_data(control::ControllerKind::kRandom, 16, 21);
    const auto held = make_data(control::ControllerKind::kRandom, 6, 22);
    GmmVgaeConfig c = small_config();
    c.hidden = 16;
    c.epochs = 6;
    const FitResult r = fit(train, c);
    const double acc = decoded_accuracy(annotate(held, r.model));
    const long n = 6L * 72 * 4;
    EXPECT_NEAR(acc, 0.25, binomial_halfwidth_99(0.25, n));
}

TEST(BehaviorModel, FixedTimeIsLearnedFromThePhaseSignal) {
    const auto train = make_data(control::ControllerKind::kFixedTime, 16, 23);
    const auto held = make_data(control::ControllerKind::kFixedTime, 4, 24);
    GmmVgaeConfig c;
    c.hidden = 32;
    c.components = 2;
    c.batch = 4;
    c.epochs = 30;
    c.seed = 1;
    const FitResult r = fit(train, c);
    const auto ann = annotate(held, r.model);
    EXPECT_GE(decoded_accuracy(ann), 0.95);
}

TEST(BehaviorModel, AdjustedRandIndexReferenceValues) {
    EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1}, {5, 5, 7, 7}), 1.0);
    EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}), -0.5, 1e-12);
    EXPECT_THROW(adjusted_rand_index({0}, {0, 1}), ArgumentError);
}
