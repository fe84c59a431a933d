// offlight command-line tool.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.

#include "offlight/bpm/training.hpp"
#include "offlight/errors.hpp"
#include "offlight/eval/bench.hpp"
#include "offlight/eval/config.hpp"
#include "offlight/eval/evaluate.hpp"
#include "offlight/eval/pipeline.hpp"
#include "offlight/train/trainers.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace offlight;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out_dir = ".";
    bool force = false;
};

eval::PipelineConfig base_config(const Globals& g) {
    eval::PipelineConfig c = g.config.empty() ? eval::PipelineConfig{} : eval::load_config(g.config);
    if (g.seed) c.set_seed(*g.seed);
    return c;
}

fs::path in_out_dir(const Globals& g, const std::string& given, const std::string& fallback) {
    fs::create_directories(g.out_dir);
    return given.empty() ? fs::path(g.out_dir) / fallback : fs::path(given);
}

// "greedy:0.5" -> mixture part.
eval::MixturePart parse_part(const std::string& text) {
    const auto colon = text.find(':');
    eval::MixturePart p;
    p.controller.kind = control::parse_controller_kind(text.substr(0, colon));
    try {
        p.fraction = colon == std::string::npos ? 1.0 : std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("bad mixture entry '" + text + "' (expected kind:fraction)");
    }
    return p;
}

std::vector<std::pair<int, int>> parse_grids(const std::string& text) {
    std::vector<std::pair<int, int>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        try {
            if (x == std::string::npos) throw std::invalid_argument("no x");
            out.emplace_back(std::stoi(item.substr(0, x)), std::stoi(item.substr(x + 1)));
        } catch (const std::exception&) {
            throw ConfigError("bad grid size '" + item + "' (expected RxC)");
        }
    }
    if (out.empty()) throw ConfigError("no grid sizes given");
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Offline multi-agent traffic signal control with behavior-model weighting"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Seed for data generation, behavior model and trainer");
    app.add_option("--config", g.config, "Pipeline config (JSON)");
    app.add_option("--out-dir", g.out_dir, "Directory for default output paths");
    app.add_flag("--force", g.force, "Recompute pipeline stages even when their outputs are current");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Roll out controllers and record an offline dataset");
    std::vector<std::string> gen_mix;
    std::optional<int> gen_episodes;
    std::string gen_scenario, gen_demand, gen_out;
    gen->add_option("--mix", gen_mix, "Controller mixture entries kind:fraction (e.g. greedy:0.5 random:0.5)");
    gen->add_option("--episodes", gen_episodes, "Total episodes");
    gen->add_option("--scenario", gen_scenario, "toy-2x2, toy-3x3 or toy-4x4");
    gen->add_option("--demand", gen_demand, "low, medium or high");
    gen->add_option("--out", gen_out, "Dataset file");

    // train-bpm
    auto* tbpm = app.add_subcommand("train-bpm", "Fit the behavior model to a dataset");
    std::string tbpm_data, tbpm_out, tbpm_log;
    std::optional<int> tbpm_epochs;
    tbpm->add_option("--dataset", tbpm_data, "Dataset file")->required();
    tbpm->add_option("--out", tbpm_out, "Model checkpoint");
    tbpm->add_option("--log", tbpm_log, "Per-epoch CSV log");
    tbpm->add_option("--epochs", tbpm_epochs, "Training epochs");

    // annotate
    auto* ann = app.add_subcommand("annotate", "Attach estimated behavior probabilities to a dataset");
    std::string ann_data, ann_model, ann_out;
    ann->add_option("--dataset", ann_data, "Dataset file")->required();
    ann->add_option("--bpm-checkpoint", ann_model, "Behavior model checkpoint")->required();
    ann->add_option("--out", ann_out, "Annotated dataset file");

    // weigh
    auto* weigh = app.add_subcommand("weigh", "Compute return-based sampling weights for an annotated dataset");
    std::string weigh_data, weigh_out;
    weigh->add_option("--dataset", weigh_data, "Annotated dataset file")->required();
    weigh->add_option("--out", weigh_out, "Weight sidecar file");

    // train
    auto* tr = app.add_subcommand("train", "Train an offline policy (BC, CQL or TD3+BC)");
    std::string tr_algo, tr_data, tr_bpm, tr_weights, tr_out, tr_log, tr_curve;
    bool tr_offlight = false;
    std::optional<int> tr_steps;
    tr->add_option("--algo", tr_algo, "bc, cql or td3bc");
    tr->add_flag("--offlight", tr_offlight, "Weight the loss and sample episodes with the behavior model");
    tr->add_option("--dataset", tr_data, "Dataset file (annotated unless --bpm-checkpoint is given)")->required();
    tr->add_option("--bpm-checkpoint", tr_bpm, "Behavior model used to annotate an unannotated dataset");
    tr->add_option("--weights", tr_weights, "Weight sidecar; computed from the config when omitted");
    tr->add_option("--steps", tr_steps, "Gradient steps");
    tr->add_option("--out", tr_out, "Policy checkpoint");
    tr->add_option("--log", tr_log, "Per-step CSV metrics");
    tr->add_option("--curve", tr_curve, "Learning-curve CSV (periodic evaluation)");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline controller");
    std::string ev_policy, ev_controller, ev_out;
    std::optional<int> ev_episodes;
    std::vector<std::uint64_t> ev_seeds;
    ev->add_option("--policy", ev_policy, "Policy checkpoint");
    ev->add_option("--controller", ev_controller, "Baseline controller kind");
    ev->add_option("--episodes", ev_episodes, "Episodes per seed");
    ev->add_option("--seeds", ev_seeds, "Evaluation seeds");
    ev->add_option("--out", ev_out, "Report file (JSON)");

    // plot
    auto* pl = app.add_subcommand("plot", "Plot one or more learning curves");
    std::vector<std::string> pl_curves;
    std::optional<int> pl_window;
    std::string pl_out, pl_csv, pl_title;
    pl->add_option("--curve", pl_curves, "label=path to a learning-curve CSV (repeatable)")->required();
    pl->add_option("--window", pl_window, "Smoothing window");
    pl->add_option("--out", pl_out, "SVG file");
    pl->add_option("--csv", pl_csv, "Smoothed series CSV");
    pl->add_option("--title", pl_title, "Figure title");

    // bench
    auto* be = app.add_subcommand("bench", "Per-step wall time versus network size");
    std::string be_grids = "2x2,3x3,4x4,6x6", be_out, be_csv;
    int be_episodes = 3;
    be->add_option("--grids", be_grids, "Comma-separated RxC sizes")->capture_default_str();
    be->add_option("--episodes", be_episodes, "Timed episodes per grid")->capture_default_str();
    be->add_option("--out", be_out, "Result file (JSON)");
    be->add_option("--csv", be_csv, "Result table (CSV)");

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "Run every stage end to end with resumable artifacts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        eval::PipelineConfig cfg = base_config(g);
        if (*gen) {
            if (!gen_mix.empty()) {
                cfg.mixture.clear();
                for (const auto& m : gen_mix) cfg.mixture.push_back(parse_part(m));
            }
            if (gen_episodes) cfg.episodes = *gen_episodes;
            if (!gen_scenario.empty()) cfg.scenario = gen_scenario;
            if (!gen_demand.empty()) cfg.demand = gen_demand;
            cfg.validate();
            const fs::path out = in_out_dir(g, gen_out, "dataset.json");
            eval::stage_gen_data(cfg, out);
            std::cout << "wrote " << out.string() << "\n";
        } else if (*tbpm) {
            if (tbpm_epochs) cfg.bpm.epochs = *tbpm_epochs;
            cfg.bpm.validate();
            const fs::path out = in_out_dir(g, tbpm_out, "bpm.json");
            const fs::path log = in_out_dir(g, tbpm_log, "bpm_log.csv");
            eval::stage_train_bpm(cfg, tbpm_data, out, log);
            std::cout << "wrote " << out.string() << "\n";
        } else if (*ann) {
            const fs::path out = in_out_dir(g, ann_out, "annotated.json");
            eval::stage_annotate(ann_data, ann_model, out);
            std::cout << "wrote " << out.string() << "\n";
        } else if (*weigh) {
            cfg.validate();
            const fs::path out = in_out_dir(g, weigh_out, "weights.json");
            eval::stage_weigh(cfg, weigh_data, out);
            std::cout << "wrote " << out.string() << "\n";
        } else if (*tr) {
            if (!tr_algo.empty()) cfg.trainer.algo = train::parse_algo(tr_algo);
            // The flag turns weighting on; a config may also enable it.
            if (g.config.empty()) cfg.trainer.offlight = tr_offlight;
            else cfg.trainer.offlight = cfg.trainer.offlight || tr_offlight;
            if (tr_steps) cfg.trainer.train_steps = *tr_steps;
            cfg.validate();
            fs::path dataset = tr_data;
            if (!tr_bpm.empty()) {
                dataset = in_out_dir(g, "", "annotated.json");
                eval::stage_annotate(tr_data, tr_bpm, dataset);
            }
            fs::path weights = tr_weights;
            if (cfg.trainer.offlight && weights.empty()) {
                weights = in_out_dir(g, "", "weights.json");
                eval::stage_weigh(cfg, dataset, weights);
            }
            const fs::path out = in_out_dir(g, tr_out, "policy.json");
            eval::stage_train(cfg, dataset, weights, out, in_out_dir(g, tr_log, "train_log.csv"),
                              in_out_dir(g, tr_curve, "train_curve.csv"));
            std::cout << "wrote " << out.string() << "\n";
        } else if (*ev) {
            if (ev_episodes) cfg.eval_episodes = *ev_episodes;
            if (!ev_seeds.empty()) cfg.eval_seeds = ev_seeds;
            cfg.validate();
            if (ev_policy.empty() == ev_controller.empty()) throw ConfigError("give exactly one of --policy or --controller");
            const fs::path out = in_out_dir(g, ev_out, "eval.json");
            if (!ev_policy.empty()) {
                eval::stage_evaluate(cfg, ev_policy, out);
            } else {
                control::ControllerSpec spec;
                spec.kind = control::parse_controller_kind(ev_controller);
                const auto r = eval::evaluate(eval::controller_policy(spec), cfg.network(), cfg.eval_episodes,
                                              cfg.eval_seeds, ev_controller, cfg.scenario, cfg.demand);
                write_json(out, r);
            }
            std::ifstream in(out);
            std::cout << in.rdbuf();
        } else if (*pl) {
            std::vector<std::pair<std::string, fs::path>> curves;
            for (const auto& c : pl_curves) {
                const auto eq = c.find('=');
                if (eq == std::string::npos) throw ConfigError("--curve expects label=path, got '" + c + "'");
                curves.emplace_back(c.substr(0, eq), c.substr(eq + 1));
            }
            const fs::path svg = in_out_dir(g, pl_out, "curve.svg");
            eval::stage_plot(curves, pl_window.value_or(cfg.curve_window), in_out_dir(g, pl_csv, "curve.csv"), svg,
                             pl_title);
            std::cout << "wrote " << svg.string() << "\n";
        } else if (*be) {
            eval::BenchOptions o;
            o.episodes = be_episodes;
            o.seed = cfg.seed;
            o.net = cfg.trainer.net;
            const auto r = eval::scaling_benchmark(parse_grids(be_grids), o);
            const nlohmann::json j = r;
            if (!be_out.empty()) write_json(be_out, j);
            if (!be_csv.empty()) eval::write_scaling_csv(r, be_csv);
            std::cout << j.dump(2) << "\n";
        } else if (*pipe) {
            eval::PipelineOptions o;
            o.force = g.force;
            o.on_stage = [](const std::string& stage, bool ran) {
                std::cout << (ran ? "ran     " : "skipped ") << stage << std::endl;
            };
            eval::run_pipeline(cfg, g.out_dir, o);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const StageError& e) {
        std::cerr << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
    return 0;
}
