#include "offlight/weighting/weights.hpp"

#include "offlight/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace offlight::weighting {

void WeightConfig::validate() const {
    if (!(p_base > 0)) throw ConfigError("p_base must be positive");
    if (!(clip_max >= 1)) throw ConfigError("clip_max must be at least 1");
}

void to_json(nlohmann::json& j, const WeightConfig& c) {
    j = {{"p_base", c.p_base},
         {"clip_max", c.clip_max},
         {"is_form", c.is_form == IsForm::kMean ? "mean" : "product"},
         {"rescale_mode", c.rescale == RescaleMode::kMeanOne ? "mean-one" : "sum-to-one"}};
}

void from_json(const nlohmann::json& j, WeightConfig& c) {
    WeightConfig d;
    c.p_base = j.value("p_base", d.p_base);
    c.clip_max = j.value("clip_max", d.clip_max);
    const std::string form = j.value("is_form", std::string("mean"));
    if (form == "mean") {
        c.is_form = IsForm::kMean;
    } else if (form == "product") {
        c.is_form = IsForm::kProduct;
    } else {
        throw ConfigError("is_form must be 'mean' or 'product'");
    }
    const std::string mode = j.value("rescale_mode", std::string("mean-one"));
    if (mode == "mean-one") {
        c.rescale = RescaleMode::kMeanOne;
    } else if (mode == "sum-to-one") {
        c.rescale = RescaleMode::kSumToOne;
    } else {
        throw ConfigError("rescale_mode must be 'mean-one' or 'sum-to-one'");
    }
}

namespace {

void check_ratio_inputs(std::span<const double> target, std::span<const double> behavior, double floor) {
    if (target.size() != behavior.size() || target.empty()) {
        throw ShapeError("importance weight: target and behavior arities differ or are empty");
    }
    for (double b : behavior) {
        if (!(b > 0.0) || b < floor) {
            throw PreconditionError("behavior probability " + std::to_string(b) + " below floor " + std::to_string(floor));
        }
    }
}

}  // namespace

double is_weight_mean(std::span<const double> target, std::span<const double> behavior, double floor) {
    check_ratio_inputs(target, behavior, floor);
    double s = 0.0;
    for (std::size_t n = 0; n < target.size(); ++n) s += target[n] / behavior[n];
    return s / static_cast<double>(target.size());
}

double is_weight_product(std::span<const double> target, std::span<const double> behavior, double floor) {
    check_ratio_inputs(target, behavior, floor);
    double p = 1.0;
    for (std::size_t n = 0; n < target.size(); ++n) p *= target[n] / behavior[n];
    return p;
}

double is_weight(IsForm form, std::span<const double> target, std::span<const double> behavior, double floor) {
    return form == IsForm::kMean ? is_weight_mean(target, behavior, floor) : is_weight_product(target, behavior, floor);
}

double rbps_weight(double g, double g_min, double g_max, const WeightConfig& config, double c) {
    if (g_min > g_max) throw ArgumentError("rbps_weight: G_min exceeds G_max");
    if (g < g_min || g > g_max) throw ArgumentError("rbps_weight: return outside [G_min, G_max]");
    const double range = g_max - g_min;
    const double normalized = range > 0 ? (g - g_min) / range : 0.0;
    return c * (normalized + config.p_base);
}

std::vector<double> rbps_distribution(std::span<const double> returns, const WeightConfig& config) {
    if (returns.empty()) throw ArgumentError("rbps_distribution: no episodes");
    const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
    std::vector<double> w;
    w.reserve(returns.size());
    for (double g : returns) w.push_back(rbps_weight(g, *lo, *hi, config));
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return w;
}

double CombinedWeights::clamp_rate() const {
    return weights.empty() ? 0.0 : static_cast<double>(clamped) / static_cast<double>(weights.size());
}

double CombinedWeights::max() const { return weights.empty() ? 0.0 : *std::max_element(weights.begin(), weights.end()); }

double CombinedWeights::mean() const {
    return weights.empty() ? 0.0 : std::accumulate(weights.begin(), weights.end(), 0.0) / static_cast<double>(weights.size());
}

CombinedWeights combine_normalize_clip(std::span<const double> w_is, std::span<const double> w_rbps,
                                       const WeightConfig& config) {
    if (w_is.empty() || w_is.size() != w_rbps.size()) throw ArgumentError("combine: empty or mismatched batch");
    CombinedWeights out;
    out.weights.resize(w_is.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w_is.size(); ++i) {
        if (!std::isfinite(w_is[i]) || !std::isfinite(w_rbps[i]) || w_is[i] < 0 || w_rbps[i] < 0) {
            throw ArgumentError("combine: weights must be finite and nonnegative");
        }
        out.weights[i] = w_is[i] * w_rbps[i];
        total += out.weights[i];
    }
    if (!(total > 0.0)) throw DegenerateBatchError("combine: every combined weight in the batch is zero");
    const double scale = config.rescale == RescaleMode::kMeanOne ? static_cast<double>(w_is.size()) : 1.0;
    for (double& w : out.weights) {
        w = w / total * scale;
        if (w > config.clip_max) {
            w = config.clip_max;
            ++out.clamped;
        }
    }
    return out;
}

CombinedWeights combine_or_uniform(std::span<const double> w_is, std::span<const double> w_rbps,
                                   const WeightConfig& config) {
    try {
        return combine_normalize_clip(w_is, w_rbps, config);
    } catch (const DegenerateBatchError&) {
        std::cerr << "warning: degenerate weight batch, falling back to uniform weights\n";
        CombinedWeights out;
        const double v = config.rescale == RescaleMode::kMeanOne ? 1.0 : 1.0 / static_cast<double>(w_is.size());
        out.weights.assign(w_is.size(), v);
        out.fallback_uniform = true;
        return out;
    }
}

EpisodeSampler::EpisodeSampler(std::vector<double> probabilities, std::uint64_t seed)
    : probs_(std::move(probabilities)), rng_(seed) {
    if (probs_.empty()) throw ArgumentError("sampler: no episodes");
    double total = 0.0;
    for (double p : probs_) {
        if (!(p >= 0) || !std::isfinite(p)) throw ArgumentError("sampler: invalid weight");
        total += p;
        cumulative_.push_back(total);
    }
    if (!(total > 0)) throw ArgumentError("sampler: weights sum to zero");
    for (double& c : cumulative_) c /= total;
    cumulative_.back() = 1.0;
}

int EpisodeSampler::next() {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative_.begin(), static_cast<std::ptrdiff_t>(probs_.size()) - 1));
}

std::vector<int> EpisodeSampler::sample(int count) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) out.push_back(next());
    return out;
}

std::vector<int> sample_episodes(std::span<const double> weights, int batch_size, std::uint64_t seed) {
    EpisodeSampler sampler(std::vector<double>(weights.begin(), weights.end()), seed);
    return sampler.sample(batch_size);
}

}  // namespace offlight::weighting
