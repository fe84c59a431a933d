#pragma once

#include "offlight/control/controllers.hpp"
#include "offlight/sim/simulator.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace offlight::data {

inline constexpr int kDatasetSchemaVersion = 1;

// One control step of the joint system. Observations are stored flat,
// agent-major: obs[agent * obs_size + k].
struct Transition {
    int t = 0;
    std::vector<double> obs;
    std::vector<int> actions;
    double reward = 0.0;
    std::vector<double> next_obs;
    // Probability of the taken action under the generating controller.
    std::optional<std::vector<double>> behavior_prob;
    // Floored model estimate of the same quantity, and the full decoded
    // distribution (agent-major, num_phases per agent).
    std::optional<std::vector<double>> estimated_prob;
    std::optional<std::vector<double>> estimated_dist;

    bool operator==(const Transition&) const = default;
};

struct EpisodeMeta {
    std::string uid;
    std::string controller;
    std::string demand;
    std::string scenario;
    std::uint64_t seed = 0;
    std::string source;  // provenance label set when mixing

    bool operator==(const EpisodeMeta&) const = default;
};

struct Episode {
    std::vector<Transition> transitions;
    double ret = 0.0;
    EpisodeMeta meta;

    int length() const { return static_cast<int>(transitions.size()); }
    double recompute_return() const;

    bool operator==(const Episode&) const = default;
};

// Structural identity of a network: datasets, models and checkpoints must agree on it.
struct Fingerprint {
    int grid_rows = 0;
    int grid_cols = 0;
    int num_phases = 0;
    int obs_size = 0;
    int action_interval_s = 0;
    int episode_length_s = 0;
    int lane_capacity = 0;

    static Fingerprint of(const sim::NetworkSpec& spec);
    int num_agents() const { return grid_rows * grid_cols; }
    int control_steps() const { return action_interval_s > 0 ? episode_length_s / action_interval_s : 0; }

    bool operator==(const Fingerprint&) const = default;
};

void to_json(nlohmann::json& j, const Fingerprint& f);
void from_json(const nlohmann::json& j, Fingerprint& f);

struct Dataset {
    Fingerprint fingerprint;
    sim::NetworkSpec network;
    std::vector<Episode> episodes;
    double g_min = 0.0;
    double g_max = 0.0;

    void recompute_stats();
    bool annotated() const;
    // Throws ShapeError/ArgumentError when an invariant is broken.
    void validate() const;

    bool operator==(const Dataset&) const = default;
};

// Runs one full episode from a fresh network state.
Episode record_episode(const sim::NetworkSpec& spec, control::Controller& controller, EpisodeMeta meta);

struct GenerationRequest {
    sim::NetworkSpec network;
    control::ControllerSpec controller;
    int episodes = 10;
    std::uint64_t seed = 0;
    std::string scenario = "custom";
    std::string demand = "custom";
};

Dataset generate_dataset(const GenerationRequest& request);

// Draws round(fraction * M) episodes without replacement from each part,
// where M is the smallest part size (or `total` when given).
Dataset mix_datasets(const std::vector<std::pair<Dataset, double>>& parts, std::uint64_t seed,
                     std::optional<int> total = std::nullopt);

void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

// Deterministic in-place Fisher-Yates permutation.
void shuffle_indices(std::vector<int>& idx, std::uint64_t seed);

}  // namespace offlight::data
