#pragma once

#include "offlight/data/dataset.hpp"
#include "offlight/eval/config.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace offlight::eval {

inline constexpr int kManifestSchemaVersion = 1;

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex(std::uint64_t h);
// Hash of the canonical (key-sorted) JSON form of the whole config.
std::string config_hash(const PipelineConfig& config);

// Stage bodies, shared by the pipeline and the individual CLI subcommands.
data::Dataset generate_mixture(const PipelineConfig& config);
void stage_gen_data(const PipelineConfig& config, const std::filesystem::path& dataset_out);
void stage_train_bpm(const PipelineConfig& config, const std::filesystem::path& dataset,
                     const std::filesystem::path& model_out, const std::filesystem::path& log_out);
void stage_annotate(const std::filesystem::path& dataset, const std::filesystem::path& model,
                    const std::filesystem::path& out);
void stage_weigh(const PipelineConfig& config, const std::filesystem::path& annotated, const std::filesystem::path& out);
// `weights` is ignored unless trainer.offlight. `curve_out` receives
// step,episodes_seen,ql,att rows from periodic greedy evaluations.
void stage_train(const PipelineConfig& config, const std::filesystem::path& annotated,
                 const std::filesystem::path& weights, const std::filesystem::path& policy_out,
                 const std::filesystem::path& log_out, const std::filesystem::path& curve_out);
void stage_evaluate(const PipelineConfig& config, const std::filesystem::path& policy,
                    const std::filesystem::path& report_out);
// Each input is (legend label, training-curve CSV).
void stage_plot(const std::vector<std::pair<std::string, std::filesystem::path>>& curves, int window,
                const std::filesystem::path& csv_out, const std::filesystem::path& svg_out,
                const std::string& title = "");

struct StageOutcome {
    std::string name;
    bool ran = false;
    double seconds = 0.0;
};

struct PipelineOptions {
    bool force = false;
    std::function<void(const std::string& stage, bool ran)> on_stage;
};

// gen-data -> train-bpm -> annotate -> weigh -> train -> evaluate -> plot.
// A stage is skipped when the manifest holds the same stage hash and its
// recorded outputs are present with matching hashes. An output whose hash
// no longer matches halts with StageError naming the stage. Any other
// failure is rethrown as StageError naming the stage.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir,
                                       const PipelineOptions& options = {});

std::vector<std::string> pipeline_stage_names();

}  // namespace offlight::eval
