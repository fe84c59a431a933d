#include "offlight/data/dataset.hpp"
#include "offlight/errors.hpp"
#include "offlight/eval/bench.hpp"
#include "offlight/eval/evaluate.hpp"
#include "offlight/eval/pipeline.hpp"
#include "offlight/sim/scenarios.hpp"
#include "offlight/sim/simulator.hpp"
#include "offlight/train/trainers.hpp"
#include "offlight/weighting/weights.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

namespace py = pybind11;
using namespace offlight;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python layer converts to dicts.
json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

Eigen::MatrixXd stack(const std::vector<sim::Observation>& obs) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(obs.size()),
                      obs.empty() ? 0 : static_cast<Eigen::Index>(obs.front().features.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) {
        for (std::size_t k = 0; k < obs[i].features.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = obs[i].features[k];
    }
    return m;
}

class PySimulator {
public:
    explicit PySimulator(const std::string& spec_json) : spec_(parse(spec_json).get<sim::NetworkSpec>()) {
        spec_.validate();
        reset(spec_.seed);
    }

    Eigen::MatrixXd reset(std::uint64_t seed) {
        spec_.seed = seed;
        state_ = std::make_unique<sim::SimState>(sim::build_grid(spec_).first);
        return stack(sim::observe_all(*state_));
    }

    py::tuple step(const std::vector<int>& actions) {
        const sim::StepResult r = sim::step(*state_, actions);
        return py::make_tuple(r.reward, stack(r.observations), r.done);
    }

    int total_queue() const { return state_->total_queue(); }
    int clock() const { return state_->clock; }
    int num_agents() const { return state_->num_agents(); }
    int num_phases() const { return spec_.num_phases(); }
    bool done() const { return state_->done(); }
    std::vector<int> travel_times() const { return state_->travel_times(state_->clock); }

private:
    sim::NetworkSpec spec_;
    std::unique_ptr<sim::SimState> state_;
};

class PyPolicy {
public:
    explicit PyPolicy(const std::string& path)
        : model_(std::make_shared<const train::PolicyModel>(train::load_checkpoint(path).model)), runner_(*model_) {}

    void reset() { runner_.reset(); }

    Eigen::MatrixXd probabilities(const Eigen::MatrixXd& obs) {
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = obs;
        return runner_.probabilities(std::span<const double>(rows.data(), static_cast<std::size_t>(rows.size())));
    }

    std::string algorithm() const { return train::to_string(model_->config().algo); }
    bool offlight() const { return model_->config().offlight; }

private:
    std::shared_ptr<const train::PolicyModel> model_;
    train::PolicyRunner runner_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Offline multi-agent traffic signal control core";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<ArgumentError>(m, "ArgumentError", base);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<IncompatibleError>(m, "IncompatibleError", base);
    py::register_exception<PreconditionError>(m, "PreconditionError", base);
    py::register_exception<ParseError>(m, "ParseError", base);
    py::register_exception<VersionError>(m, "VersionError", base);
    py::register_exception<DegenerateBatchError>(m, "DegenerateBatchError", base);
    py::register_exception<DivergenceError>(m, "DivergenceError", base);
    py::register_exception<StageError>(m, "StageError", base);
    py::register_exception<LookupError>(m, "LookupError", base);
    py::register_exception<ActionError>(m, "ActionError", base);
    py::register_exception<NumericError>(m, "NumericError", base);

    m.def("scenario_spec", [](const std::string& scenario, const std::string& demand) {
        return json(sim::scenario_spec(scenario, demand)).dump();
    });

    py::class_<PySimulator>(m, "Simulator")
        .def(py::init<const std::string&>(), py::arg("spec_json"))
        .def("reset", &PySimulator::reset, py::arg("seed") = 0)
        .def("step", &PySimulator::step, py::arg("actions"))
        .def_property_readonly("total_queue", &PySimulator::total_queue)
        .def_property_readonly("clock", &PySimulator::clock)
        .def_property_readonly("num_agents", &PySimulator::num_agents)
        .def_property_readonly("num_phases", &PySimulator::num_phases)
        .def_property_readonly("done", &PySimulator::done)
        .def("travel_times", &PySimulator::travel_times);

    m.def("is_weight_mean",
          [](const std::vector<double>& t, const std::vector<double>& b) { return weighting::is_weight_mean(t, b); });
    m.def("is_weight_product",
          [](const std::vector<double>& t, const std::vector<double>& b) { return weighting::is_weight_product(t, b); });
    m.def(
        "rbps_weight",
        [](double g, double g_min, double g_max, const std::string& cfg, double c) {
            return weighting::rbps_weight(g, g_min, g_max, parse(cfg).get<weighting::WeightConfig>(), c);
        },
        py::arg("g"), py::arg("g_min"), py::arg("g_max"), py::arg("config_json") = "", py::arg("c") = 1.0);
    m.def(
        "rbps_distribution",
        [](const std::vector<double>& returns, const std::string& cfg) {
            return weighting::rbps_distribution(returns, parse(cfg).get<weighting::WeightConfig>());
        },
        py::arg("returns"), py::arg("config_json") = "");
    m.def(
        "combine_weights",
        [](const std::vector<double>& w_is, const std::vector<double>& w_rbps, const std::string& cfg) {
            const auto r = weighting::combine_or_uniform(w_is, w_rbps, parse(cfg).get<weighting::WeightConfig>());
            return json{{"weights", r.weights}, {"clamped", r.clamped}, {"fallback_uniform", r.fallback_uniform}}.dump();
        },
        py::arg("w_is"), py::arg("w_rbps"), py::arg("config_json") = "");

    m.def(
        "evaluate_controller",
        [](const std::string& kind, const std::string& spec_json, int episodes, const std::vector<std::uint64_t>& seeds) {
            control::ControllerSpec cs;
            cs.kind = control::parse_controller_kind(kind);
            const auto spec = parse(spec_json).get<sim::NetworkSpec>();
            return json(eval::evaluate(eval::controller_policy(cs), spec, episodes, seeds, kind)).dump();
        },
        py::arg("kind"), py::arg("spec_json"), py::arg("episodes") = 10,
        py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2});

    m.def(
        "evaluate_checkpoint",
        [](const std::filesystem::path& path, const std::string& spec_json, int episodes,
           const std::vector<std::uint64_t>& seeds) {
            auto model = std::make_shared<const train::PolicyModel>(train::load_checkpoint(path).model);
            const auto spec = parse(spec_json).get<sim::NetworkSpec>();
            return json(eval::evaluate(train::checkpoint_policy(model), spec, episodes, seeds,
                                       train::to_string(model->config().algo)))
                .dump();
        },
        py::arg("path"), py::arg("spec_json"), py::arg("episodes") = 10,
        py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2});

    py::class_<PyPolicy>(m, "Policy")
        .def(py::init<const std::string&>(), py::arg("path"))
        .def("reset", &PyPolicy::reset)
        .def("probabilities", &PyPolicy::probabilities, py::arg("obs"))
        .def_property_readonly("algorithm", &PyPolicy::algorithm)
        .def_property_readonly("offlight", &PyPolicy::offlight);

    m.def("default_config", [] { return json(eval::PipelineConfig{}).dump(); });
    m.def(
        "generate_dataset",
        [](const std::string& cfg_json, const std::filesystem::path& out) {
            auto cfg = parse(cfg_json).get<eval::PipelineConfig>();
            cfg.validate();
            py::gil_scoped_release release;
            const data::Dataset ds = eval::generate_mixture(cfg);
            data::save(ds, out);
            return static_cast<int>(ds.episodes.size());
        },
        py::arg("config_json"), py::arg("out"));
    m.def(
        "run_pipeline",
        [](const std::string& cfg_json, const std::filesystem::path& out_dir, bool force) {
            auto cfg = parse(cfg_json).get<eval::PipelineConfig>();
            eval::PipelineOptions o;
            o.force = force;
            std::vector<std::pair<std::string, bool>> out;
            {
                py::gil_scoped_release release;
                for (const auto& s : eval::run_pipeline(cfg, out_dir, o)) out.emplace_back(s.name, s.ran);
            }
            return out;
        },
        py::arg("config_json"), py::arg("out_dir"), py::arg("force") = false);
    m.def("config_hash", [](const std::string& cfg_json) {
        return eval::config_hash(parse(cfg_json).get<eval::PipelineConfig>());
    });
    m.def(
        "scaling_benchmark",
        [](const std::vector<std::pair<int, int>>& grids, int episodes) {
            eval::BenchOptions o;
            o.episodes = episodes;
            py::gil_scoped_release release;
            return json(eval::scaling_benchmark(grids, o)).dump();
        },
        py::arg("grids"), py::arg("episodes") = 3);
    m.def("fnv1a", [](const py::bytes& b) { return eval::fnv1a(std::string(b)); });
}
