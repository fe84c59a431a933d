#include "offlight/eval/pipeline.hpp"

#include "offlight/bpm/training.hpp"
#include "offlight/errors.hpp"
#include "offlight/eval/curves.hpp"
#include "offlight/eval/evaluate.hpp"
#include "offlight/train/trainers.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace offlight::eval {

namespace fs = std::filesystem;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LookupError("cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    }
    return h;
}

std::string hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const PipelineConfig& config) { return hex(fnv1a(nlohmann::json(config).dump())); }

data::Dataset generate_mixture(const PipelineConfig& config) {
    const sim::NetworkSpec spec = config.network();
    std::vector<std::pair<data::Dataset, double>> parts;
    for (std::size_t k = 0; k < config.mixture.size(); ++k) {
        const auto& part = config.mixture[k];
        data::GenerationRequest r;
        r.network = spec;
        r.controller = part.controller;
        r.episodes = std::max(1, static_cast<int>(std::ceil(part.fraction * config.episodes)) + 1);
        r.seed = config.seed * 131ULL + k;
        r.scenario = config.scenario;
        r.demand = config.demand;
        parts.emplace_back(data::generate_dataset(r), part.fraction);
    }
    return data::mix_datasets(parts, config.seed, config.episodes);
}

void stage_gen_data(const PipelineConfig& config, const fs::path& dataset_out) {
    data::save(generate_mixture(config), dataset_out);
}

void stage_train_bpm(const PipelineConfig& config, const fs::path& dataset, const fs::path& model_out,
                     const fs::path& log_out) {
    const data::Dataset ds = data::load(dataset);
    const bpm::FitResult fit = bpm::fit(ds, config.bpm);
    bpm::save_model(fit.model, model_out);
    std::ofstream out(log_out);
    if (!out) throw ArgumentError("cannot write " + log_out.string());
    out.precision(10);
    out << "epoch,loss,reconstruction,kl,accuracy,grad_norm\n";
    for (const auto& e : fit.log) {
        out << e.epoch << "," << e.loss << "," << e.reconstruction << "," << e.kl << "," << e.accuracy << ","
            << e.grad_norm << "\n";
    }
}

void stage_annotate(const fs::path& dataset, const fs::path& model, const fs::path& out) {
    data::save(bpm::annotate(data::load(dataset), bpm::load_model(model)), out);
}

void stage_weigh(const PipelineConfig& config, const fs::path& annotated, const fs::path& out) {
    const data::Dataset ds = data::load(annotated);
    // Diagnostic IS weights are taken against the freshly initialised policy;
    // the trainer recomputes them every batch.
    const train::PolicyModel init(config.trainer, ds.fingerprint);
    train::save_sidecar(train::compute_sidecar(ds, init, config.weights), out);
}

namespace {

struct CurveRow {
    long step;
    long episodes_seen;
    double ql;
    double att;
};

CurveRow curve_point(const train::Trainer& trainer, const sim::NetworkSpec& spec, const PipelineConfig& config) {
    auto snapshot = std::make_shared<const train::PolicyModel>(trainer.model());
    const EvalReport r = evaluate(train::checkpoint_policy(snapshot), spec, config.curve_episodes,
                                  {config.eval_seeds.front()});
    return {trainer.steps(), trainer.episodes_seen(), r.ql_mean, r.att_mean.value_or(0.0)};
}

std::vector<CurveRow> read_curve(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LookupError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "step,episodes_seen,ql,att") throw ParseError("unexpected curve header in " + path.string(), 0);
    std::vector<CurveRow> rows;
    std::size_t offset = line.size() + 1;
    while (std::getline(in, line)) {
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (line.empty()) continue;
        std::istringstream ss(line);
        CurveRow r{};
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ss >> r.step >> c1 >> r.episodes_seen >> c2 >> r.ql >> c3 >> r.att) || c1 != ',' || c2 != ',' || c3 != ',') {
            throw ParseError("malformed curve row in " + path.string(), here);
        }
        rows.push_back(r);
    }
    if (rows.empty()) throw ParseError("empty curve file " + path.string(), offset);
    return rows;
}

std::string algorithm_label(const train::TrainerConfig& c) {
    return (c.offlight ? "offlight-" : "") + train::to_string(c.algo);
}

}  // namespace

void stage_train(const PipelineConfig& config, const fs::path& annotated, const fs::path& weights,
                 const fs::path& policy_out, const fs::path& log_out, const fs::path& curve_out) {
    const data::Dataset ds = data::load(annotated);
    train::WeightSidecar sidecar;
    const train::WeightSidecar* sc = nullptr;
    if (config.trainer.offlight) {
        sidecar = train::load_sidecar(weights);
        sc = &sidecar;
    }
    const sim::NetworkSpec spec = config.network();
    const int steps = config.trainer.train_steps;
    const int interval = config.curve_interval > 0 ? config.curve_interval : std::max(1, steps / 10);
    train::Trainer trainer(config.trainer, ds, sc);
    std::vector<train::StepLog> log;
    std::vector<CurveRow> curve = {curve_point(trainer, spec, config)};
    for (int s = 1; s <= steps; ++s) {
        log.push_back(trainer.step());
        if (s % interval == 0 || s == steps) curve.push_back(curve_point(trainer, spec, config));
    }
    train::save_checkpoint(trainer.model(), trainer.steps(), trainer.episodes_seen(), policy_out);
    train::write_log_csv(log, log_out);
    std::ofstream out(curve_out);
    if (!out) throw ArgumentError("cannot write " + curve_out.string());
    out.precision(10);
    out << "step,episodes_seen,ql,att\n";
    for (const auto& r : curve) out << r.step << "," << r.episodes_seen << "," << r.ql << "," << r.att << "\n";
}

void stage_evaluate(const PipelineConfig& config, const fs::path& policy, const fs::path& report_out) {
    const train::Checkpoint ck = train::load_checkpoint(policy);
    auto model = std::make_shared<const train::PolicyModel>(ck.model);
    const EvalReport r = evaluate(train::checkpoint_policy(model), config.network(), config.eval_episodes,
                                  config.eval_seeds, algorithm_label(ck.model.config()), config.scenario,
                                  config.demand);
    std::ofstream out(report_out);
    if (!out) throw ArgumentError("cannot write " + report_out.string());
    out << nlohmann::json(r).dump(2) << "\n";
}

void stage_plot(const std::vector<std::pair<std::string, fs::path>>& curves, int window, const fs::path& csv_out,
                const fs::path& svg_out, const std::string& title) {
    if (curves.empty()) throw ArgumentError("plot: no curves given");
    std::vector<Series> series;
    for (const auto& [label, path] : curves) {
        const auto rows = read_curve(path);
        std::vector<double> x, y;
        for (const auto& r : rows) {
            x.push_back(static_cast<double>(r.step));
            y.push_back(r.ql);
        }
        series.push_back(learning_curve(x, y, window, label));
    }
    write_series_csv(series, csv_out);
    PlotOptions o;
    o.title = title.empty() ? "Evaluation queue length during training" : title;
    write_svg_plot(series, svg_out, o);
}

std::vector<std::string> pipeline_stage_names() {
    return {"gen-data", "train-bpm", "annotate", "weigh", "train", "evaluate", "plot"};
}

namespace {

struct Stage {
    std::string name;
    nlohmann::json settings;          // config fields the stage reads
    std::vector<std::string> inputs;  // artifacts of earlier stages
    std::vector<std::string> outputs;
    std::function<void()> run;
};

nlohmann::json read_manifest(const fs::path& path) {
    if (!fs::exists(path)) return nlohmann::json::object();
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        nlohmann::json j = nlohmann::json::parse(buf.str());
        if (j.value("format", "") != "offlight-manifest") throw ParseError("not a pipeline manifest", 0);
        if (j.value("schema_version", 0) != kManifestSchemaVersion) {
            throw VersionError("unsupported manifest schema version " + std::to_string(j.value("schema_version", 0)));
        }
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("corrupted manifest " + path.string(), e.byte);
    }
}

void write_manifest(const fs::path& path, const nlohmann::json& j) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw ArgumentError("cannot write " + tmp.string());
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

const nlohmann::json* find_stage(const nlohmann::json& manifest, const std::string& name) {
    if (!manifest.contains("stages")) return nullptr;
    for (const auto& s : manifest.at("stages")) {
        if (s.value("name", "") == name) return &s;
    }
    return nullptr;
}

}  // namespace

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, const fs::path& out_dir,
                                       const PipelineOptions& options) {
    config.validate();
    fs::create_directories(out_dir);
    const fs::path manifest_path = out_dir / "manifest.json";
    nlohmann::json manifest;
    try {
        manifest = read_manifest(manifest_path);
    } catch (const Error& e) {
        throw StageError("manifest", e.what());
    }
    auto p = [&](const std::string& f) { return out_dir / f; };
    const nlohmann::json cfg = config;

    std::vector<Stage> stages = {
        {"gen-data",
         {{"network", config.network()}, {"mixture", cfg["mixture"]}, {"episodes", config.episodes}, {"seed", config.seed}},
         {},
         {"dataset.json"},
         [&] { stage_gen_data(config, p("dataset.json")); }},
        {"train-bpm",
         {{"bpm", cfg["bpm"]}},
         {"dataset.json"},
         {"bpm.json", "bpm_log.csv"},
         [&] { stage_train_bpm(config, p("dataset.json"), p("bpm.json"), p("bpm_log.csv")); }},
        {"annotate",
         nlohmann::json::object(),
         {"dataset.json", "bpm.json"},
         {"annotated.json"},
         [&] { stage_annotate(p("dataset.json"), p("bpm.json"), p("annotated.json")); }},
        {"weigh",
         {{"weights", cfg["weights"]}, {"trainer", cfg["trainer"]}},
         {"annotated.json"},
         {"weights.json"},
         [&] { stage_weigh(config, p("annotated.json"), p("weights.json")); }},
        {"train",
         {{"trainer", cfg["trainer"]},
          {"network", config.network()},
          {"eval_seed", config.eval_seeds.front()},
          {"curve_interval", config.curve_interval},
          {"curve_episodes", config.curve_episodes}},
         {"annotated.json", "weights.json"},
         {"policy.json", "train_log.csv", "train_curve.csv"},
         [&] {
             stage_train(config, p("annotated.json"), p("weights.json"), p("policy.json"), p("train_log.csv"),
                         p("train_curve.csv"));
         }},
        {"evaluate",
         {{"network", config.network()}, {"eval_episodes", config.eval_episodes}, {"eval_seeds", config.eval_seeds}},
         {"policy.json"},
         {"eval.json"},
         [&] { stage_evaluate(config, p("policy.json"), p("eval.json")); }},
        {"plot",
         {{"curve_window", config.curve_window}},
         {"train_curve.csv"},
         {"curve.csv", "curve.svg"},
         [&] {
             stage_plot({{algorithm_label(config.trainer), p("train_curve.csv")}}, config.curve_window, p("curve.csv"),
                        p("curve.svg"));
         }},
    };

    const std::string top_hash = config_hash(config);
    bool dirty = manifest.value("config_hash", "") != top_hash;
    nlohmann::json entries = nlohmann::json::array();
    std::vector<StageOutcome> outcomes;
    for (const auto& stage : stages) {
        std::string inputs_key;
        for (const auto& in : stage.inputs) {
            try {
                inputs_key += in + "=" + hex(hash_file(p(in))) + ";";
            } catch (const Error& e) {
                throw StageError(stage.name, std::string("missing input: ") + e.what());
            }
        }
        const std::string stage_hash = hex(fnv1a(stage.name + "|" + stage.settings.dump() + "|" + inputs_key));
        const nlohmann::json* prev = options.force ? nullptr : find_stage(manifest, stage.name);
        bool reuse = prev && prev->value("hash", "") == stage_hash;
        if (reuse) {
            for (const auto& out : prev->at("outputs")) {
                const fs::path f = p(out.at("path").get<std::string>());
                if (!fs::exists(f)) {
                    reuse = false;
                    break;
                }
                if (hex(hash_file(f)) != out.at("hash").get<std::string>()) {
                    throw StageError(stage.name, "output " + f.filename().string() +
                                                     " does not match its recorded hash (modified or corrupted); "
                                                     "rerun with --force");
                }
            }
        }
        StageOutcome outcome{stage.name, !reuse, 0.0};
        if (reuse) {
            entries.push_back(*prev);
        } else {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                stage.run();
            } catch (const StageError&) {
                throw;
            } catch (const std::exception& e) {
                throw StageError(stage.name, e.what());
            }
            outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            nlohmann::json outs = nlohmann::json::array();
            for (const auto& o : stage.outputs) outs.push_back({{"path", o}, {"hash", hex(hash_file(p(o)))}});
            entries.push_back({{"name", stage.name},
                               {"hash", stage_hash},
                               {"settings", stage.settings},
                               {"inputs", stage.inputs},
                               {"outputs", outs},
                               {"seconds", outcome.seconds}});
            dirty = true;
            // Persist progress so a later failure can resume from here.
            nlohmann::json partial = {{"format", "offlight-manifest"},
                                      {"schema_version", kManifestSchemaVersion},
                                      {"config_hash", top_hash},
                                      {"seed", config.seed},
                                      {"config", cfg},
                                      {"stages", entries}};
            write_manifest(manifest_path, partial);
        }
        if (options.on_stage) options.on_stage(stage.name, outcome.ran);
        outcomes.push_back(outcome);
    }
    if (dirty) {
        write_manifest(manifest_path, {{"format", "offlight-manifest"},
                                       {"schema_version", kManifestSchemaVersion},
                                       {"config_hash", top_hash},
                                       {"seed", config.seed},
                                       {"config", cfg},
                                       {"stages", entries}});
    }
    return outcomes;
}

}  // namespace offlight::eval
