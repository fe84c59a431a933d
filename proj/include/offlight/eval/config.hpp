#pragma once

#include "offlight/bpm/gmm_vgae.hpp"
#include "offlight/control/controllers.hpp"
#include "offlight/sim/network.hpp"
#include "offlight/train/trainers.hpp"
#include "offlight/weighting/weights.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace offlight::eval {

struct MixturePart {
    control::ControllerSpec controller;
    double fraction = 0.0;
};

// Everything one end-to-end run needs. Loaded from a JSON file; sections
// omitted from the file keep their defaults. The `bpm` and `trainer` seeds
// default to the top-level seed.
struct PipelineConfig {
    std::string scenario = "toy-2x2";
    std::string demand = "medium";
    nlohmann::json network_overrides = nlohmann::json::object();  // patched over the preset
    std::vector<MixturePart> mixture;                               // default: 50/50 greedy + random
    int episodes = 60;
    std::uint64_t seed = 0;
    bpm::GmmVgaeConfig bpm;
    weighting::WeightConfig weights;
    train::TrainerConfig trainer;  // offlight on by default here
    int eval_episodes = 10;
    std::vector<std::uint64_t> eval_seeds = {0, 1, 2};
    int curve_interval = 0;  // steps between training-time evaluations; 0 = train_steps / 10
    int curve_episodes = 1;
    int curve_window = 3;

    PipelineConfig();
    void validate() const;
    sim::NetworkSpec network() const;
    // Sets the top-level, behavior-model and trainer seeds.
    void set_seed(std::uint64_t s);
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace offlight::eval
