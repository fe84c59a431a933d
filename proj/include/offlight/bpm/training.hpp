#pragma once

#include "offlight/bpm/gmm_vgae.hpp"

#include <functional>
#include <string>
#include <vector>

namespace offlight::bpm {

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
    double accuracy = 0.0;
    double grad_norm = 0.0;  // largest pre-clip gradient norm in the epoch
};

struct FitResult {
    GmmVgae model;
    std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains encoder, decoder and prior jointly with Adam on the ELBO. Throws
// DivergenceError carrying the epoch index if the loss becomes non-finite.
FitResult fit(const data::Dataset& dataset, const GmmVgaeConfig& config, const EpochCallback& on_epoch = {});

// Fits the prior to the posterior means of `dataset` with k-means++ seeding
// followed by EM on a diagonal Gaussian mixture; the best of `restarts`
// fits by log-likelihood is kept.
void initialize_prior(GmmVgae& model, const data::Dataset& dataset, int em_iterations = 100, int restarts = 10);

// Maximum-likelihood refit of the prior on the posterior means with the
// encoder held fixed. EM is run from the current prior and from fresh
// k-means++ seeds; the highest-likelihood result is kept.
void refine_prior(GmmVgae& model, const data::Dataset& dataset, int em_iterations = 100, int restarts = 10);

// Fills estimated_prob (floored decoded probability of the taken action)
// and estimated_dist on every transition. Latents are the posterior means.
data::Dataset annotate(const data::Dataset& dataset, const GmmVgae& model);

struct LatentRecord {
    std::string uid;
    std::string label;
    Eigen::VectorXd mean_z;
    std::vector<double> gamma;
};

std::vector<LatentRecord> dump_latents(const data::Dataset& dataset, const GmmVgae& model);
void write_latents_csv(const std::vector<LatentRecord>& rows, const std::string& path);

// Hard cluster assignment (argmax responsibility) per episode.
std::vector<int> cluster_assignments(const data::Dataset& dataset, const GmmVgae& model);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// Fraction of transitions where the decoded argmax equals the taken action,
// over all agents. Requires an annotated dataset.
double decoded_accuracy(const data::Dataset& annotated);

}  // namespace offlight::bpm
