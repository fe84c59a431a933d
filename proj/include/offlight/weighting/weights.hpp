#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace offlight::weighting {

// Floor applied to estimated behavior probabilities before forming ratios.
inline constexpr double kProbFloor = 1e-3;

enum class IsForm { kMean, kProduct };
enum class RescaleMode { kSumToOne, kMeanOne };

struct WeightConfig {
    double p_base = 0.1;
    double clip_max = 10.0;
    IsForm is_form = IsForm::kMean;
    RescaleMode rescale = RescaleMode::kMeanOne;

    void validate() const;
};

void to_json(nlohmann::json& j, const WeightConfig& c);
void from_json(const nlohmann::json& j, WeightConfig& c);

// Mean over agents of target / behavior probability of the taken actions.
double is_weight_mean(std::span<const double> target, std::span<const double> behavior,
                      double floor = kProbFloor);
// Product over agents of the same ratios.
double is_weight_product(std::span<const double> target, std::span<const double> behavior,
                         double floor = kProbFloor);
double is_weight(IsForm form, std::span<const double> target, std::span<const double> behavior,
                 double floor = kProbFloor);

// C * ((G - G_min) / (G_max - G_min) + p_base); the normalized term is 0 when G_max == G_min.
double rbps_weight(double g, double g_min, double g_max, const WeightConfig& config, double c = 1.0);

// Episode weights with C chosen so they sum to one.
std::vector<double> rbps_distribution(std::span<const double> returns, const WeightConfig& config);

struct CombinedWeights {
    std::vector<double> weights;
    int clamped = 0;
    bool fallback_uniform = false;

    double clamp_rate() const;
    double max() const;
    double mean() const;
};

// w = w_IS * w_RBPS, normalized over the batch (sum-to-one or mean-one) then
// clamped to clip_max. Throws DegenerateBatchError when every product is zero.
CombinedWeights combine_normalize_clip(std::span<const double> w_is, std::span<const double> w_rbps,
                                       const WeightConfig& config);

// Same, but an all-zero batch falls back to uniform weights (logged).
CombinedWeights combine_or_uniform(std::span<const double> w_is, std::span<const double> w_rbps,
                                   const WeightConfig& config);

// I.i.d. categorical episode sampler owning its random stream.
class EpisodeSampler {
public:
    EpisodeSampler(std::vector<double> probabilities, std::uint64_t seed);

    int next();
    std::vector<int> sample(int count);
    const std::vector<double>& probabilities() const { return probs_; }

private:
    std::vector<double> probs_;
    std::vector<double> cumulative_;
    std::mt19937_64 rng_;
};

std::vector<int> sample_episodes(std::span<const double> weights, int batch_size, std::uint64_t seed);

}  // namespace offlight::weighting
