#include "offlight/errors.hpp"
#include "offlight/eval/bench.hpp"
#include "offlight/eval/curves.hpp"
#include "offlight/eval/evaluate.hpp"
#include "offlight/eval/pipeline.hpp"
#include "offlight/sim/scenarios.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace offlight;
using namespace offlight::eval;
namespace fs = std::filesystem;

namespace {

control::ControllerSpec spec_of(control::ControllerKind kind) {
    control::ControllerSpec s;
    s.kind = kind;
    return s;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "offlight_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

PipelineConfig tiny_config() {
    PipelineConfig c;
    c.episodes = 6;
    c.bpm.hidden = 8;
    c.bpm.latent_dim = 3;
    c.bpm.components = 2;
    c.bpm.attention_heads = 2;
    c.bpm.gat_layers_enc = 1;
    c.bpm.gat_layers_dec = 1;
    c.bpm.epochs = 1;
    c.bpm.batch = 3;
    c.trainer.net.fc_hidden = 4;
    c.trainer.net.rnn_hidden = 4;
    c.trainer.net.attention_heads = 2;
    c.trainer.batch_size = 2;
    c.trainer.train_steps = 4;
    c.curve_interval = 2;
    c.eval_episodes = 1;
    c.eval_seeds = {0};
    return c;
}

}  // namespace

TEST(Evaluate, ZeroDemandHasNoVehicles) {
    auto spec = sim::scenario_spec("toy-2x2", "medium");
    spec.demand_rate = 0.0;
    const auto r = evaluate(controller_policy(spec_of(control::ControllerKind::kGreedy)), spec, 2, {0, 1});
    EXPECT_EQ(r.vehicles, 0);
    EXPECT_FALSE(r.att_mean.has_value());
    EXPECT_EQ(r.ql_mean, 0.0);
    const nlohmann::json j = r;
    EXPECT_FALSE(j.contains("att_mean"));
    EXPECT_EQ(j.at("vehicles"), 0);
}

TEST(Evaluate, GreedyBeatsRandomOnTravelTime) {
    const auto spec = sim::scenario_spec("toy-2x2", "medium");
    const std::vector<std::uint64_t> seeds = {0, 1, 2};
    const auto greedy = evaluate(controller_policy(spec_of(control::ControllerKind::kGreedy)), spec, 3, seeds);
    const auto random = evaluate(controller_policy(spec_of(control::ControllerKind::kRandom)), spec, 3, seeds);
    ASSERT_TRUE(greedy.att_mean && random.att_mean);
    EXPECT_LT(*greedy.att_mean, *random.att_mean);
}

TEST(Evaluate, QueueLengthIsNegativeMeanReward) {
    const auto spec = sim::scenario_spec("toy-2x2", "high");
    auto policy = controller_policy(spec_of(control::ControllerKind::kMaxPressure))(5);
    const EpisodeStats st = run_episode(spec, *policy);
    const double mean_reward = std::accumulate(st.rewards.begin(), st.rewards.end(), 0.0) / st.rewards.size();
    EXPECT_EQ(st.ql, -mean_reward);
}

TEST(Evaluate, StdPresentOnlyWithTwoSeeds) {
    const auto spec = sim::scenario_spec("toy-2x2", "low");
    const auto f = controller_policy(spec_of(control::ControllerKind::kFixedTime));
    const auto one = evaluate(f, spec, 1, {3});
    EXPECT_FALSE(one.att_std.has_value());
    EXPECT_FALSE(one.ql_std.has_value());
    const auto two = evaluate(f, spec, 1, {3, 4});
    EXPECT_TRUE(two.att_std.has_value());
    EXPECT_TRUE(two.ql_std.has_value());
}

TEST(Evaluate, DeterministicPerSeed) {
    const auto spec = sim::scenario_spec("toy-2x2", "medium");
    const auto f = controller_policy(spec_of(control::ControllerKind::kRandom));
    const nlohmann::json a = evaluate(f, spec, 2, {7});
    const nlohmann::json b = evaluate(f, spec, 2, {7});
    EXPECT_EQ(a.dump(), b.dump());
}

TEST(Curves, ConstantMetricIsFlat) {
    const std::vector<double> x = {0, 10, 20, 30, 40};
    const std::vector<double> y(5, 0.1);
    const Series s = learning_curve(x, y, 3);
    for (double v : s.y) EXPECT_NEAR(v, 0.1, 1e-15);
}

TEST(Curves, WindowOneIsIdentity) {
    const std::vector<double> x = {0, 1, 2, 3};
    const std::vector<double> y = {3.5, -1.25, 7.0, 0.3};
    const Series s = learning_curve(x, y, 1, "a");
    EXPECT_EQ(s.x, x);
    EXPECT_EQ(s.y, y);
}

TEST(Curves, TrailingMean) {
    const std::vector<double> x = {0, 1, 2, 3};
    const std::vector<double> y = {1, 2, 3, 4};
    const Series s = learning_curve(x, y, 2);
    EXPECT_EQ(s.y, (std::vector<double>{1.0, 1.5, 2.5, 3.5}));
    EXPECT_THROW(learning_curve(x, std::vector<double>{}, 2), ArgumentError);
    EXPECT_THROW(learning_curve(x, y, 0), ArgumentError);
}

TEST(Curves, CsvRoundTrip) {
    const auto dir = fresh_dir("curves_csv");
    const std::vector<Series> in = {{"plain", {0, 5}, {2.5, 2.0}}, {"offlight", {0, 5}, {2.5, 1.5}}};
    write_series_csv(in, dir / "c.csv");
    const auto out = read_series_csv(dir / "c.csv");
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[1].label, "offlight");
    EXPECT_EQ(out[1].y, in[1].y);
}

TEST(Curves, OverlaidPlotMetadata) {
    const auto dir = fresh_dir("curves_svg");
    const std::vector<Series> in = {{"cql", {0, 5, 10}, {3, 2, 1}}, {"offlight-cql", {0, 5, 10}, {3, 1.5, 0.5}}};
    PlotOptions o;
    o.title = "toy-2x2 medium";
    write_svg_plot(in, dir / "p.svg", o);
    const std::string svg = slurp(dir / "p.svg");
    const auto a = svg.find("<metadata>");
    const auto b = svg.find("</metadata>");
    ASSERT_NE(a, std::string::npos);
    ASSERT_NE(b, std::string::npos);
    std::string text = svg.substr(a + 10, b - a - 10);
    for (std::size_t k; (k = text.find("&quot;")) != std::string::npos;) text.replace(k, 6, "\"");
    const auto meta = nlohmann::json::parse(text);
    EXPECT_EQ(meta.at("title"), "toy-2x2 medium");
    ASSERT_EQ(meta.at("series").size(), 2u);
    EXPECT_EQ(meta.at("series")[0].at("label"), "cql");
    EXPECT_EQ(meta.at("series")[1].at("label"), "offlight-cql");
    EXPECT_EQ(meta.at("series")[1].at("points"), 3);
    EXPECT_NE(svg.find("class=\"legend\""), std::string::npos);
    std::size_t lines = 0;
    for (std::size_t k = svg.find("<polyline"); k != std::string::npos; k = svg.find("<polyline", k + 1)) ++lines;
    EXPECT_EQ(lines, 2u);
}

TEST(Bench, LineFitExact) {
    const auto f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
    EXPECT_NEAR(f.slope, 2.0, 1e-12);
    EXPECT_NEAR(f.intercept, 1.0, 1e-12);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    EXPECT_THROW(fit_line({1}, {1}), ArgumentError);
}

TEST(Bench, SingleGridHasNoFit) {
    BenchOptions o;
    o.episodes = 1;
    o.net.fc_hidden = o.net.rnn_hidden = 8;
    o.net.attention_heads = 2;
    const auto r = scaling_benchmark({{2, 2}}, o);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0].nodes, 4);
    EXPECT_EQ(r.rows[0].edges, 4);
    EXPECT_GT(r.rows[0].step_ms, 0.0);
    EXPECT_FALSE(r.fit.has_value());
}

TEST(Bench, LargestGridRowPresent) {
    BenchOptions o;
    o.episodes = 1;
    o.net.fc_hidden = o.net.rnn_hidden = 8;
    o.net.attention_heads = 2;
    const auto r = scaling_benchmark({{2, 2}, {14, 14}}, o);
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.rows[1].nodes, 196);
    EXPECT_EQ(r.rows[1].edges, 2 * 14 * 13);
    EXPECT_TRUE(r.fit.has_value());
}

TEST(Bench, SmallGridsScaleLinearly) {
    const auto r = scaling_benchmark({{2, 2}, {3, 3}, {4, 4}});
    ASSERT_TRUE(r.fit.has_value());
    EXPECT_GE(r.fit->r2, 0.9);
    EXPECT_GT(r.fit->slope, 0.0);
}

TEST(Pipeline, FnvKnownValues) {
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Pipeline, ConfigHashTracksEveryField) {
    const PipelineConfig base = tiny_config();
    EXPECT_EQ(config_hash(base), config_hash(tiny_config()));
    auto a = base;
    a.curve_window += 1;
    auto b = base;
    b.trainer.tau = 0.01;
    auto c = base;
    c.bpm.kl_weight = 0.5;
    auto d = base;
    d.network_overrides = {{"lane_capacity", 25}};
    for (const auto* other : {&a, &b, &c, &d}) EXPECT_NE(config_hash(*other), config_hash(base));
}

TEST(Pipeline, ConfigFileRoundTripAndUnknownKeys) {
    const auto dir = fresh_dir("pipeline_config");
    const PipelineConfig c = tiny_config();
    {
        std::ofstream out(dir / "c.json");
        out << nlohmann::json(c).dump(2);
    }
    EXPECT_EQ(config_hash(load_config(dir / "c.json")), config_hash(c));
    {
        std::ofstream out(dir / "bad.json");
        out << R"({"episodez": 3})";
    }
    EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
    {
        std::ofstream out(dir / "seed.json");
        out << R"({"seed": 9})";
    }
    const auto s = load_config(dir / "seed.json");
    EXPECT_EQ(s.bpm.seed, 9u);
    EXPECT_EQ(s.trainer.seed, 9u);
    EXPECT_TRUE(s.trainer.offlight);
}

TEST(Pipeline, RunsResumesAndDetectsCorruption) {
    const auto dir = fresh_dir("pipeline_run");
    const PipelineConfig c = tiny_config();
    const auto first = run_pipeline(c, dir);
    ASSERT_EQ(first.size(), 7u);
    for (const auto& s : first) EXPECT_TRUE(s.ran) << s.name;
    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    ASSERT_EQ(manifest.at("stages").size(), 7u);
    EXPECT_EQ(manifest.at("config_hash"), config_hash(c));
    EXPECT_EQ(manifest.at("stages")[6].at("name"), "plot");
    for (const char* f : {"dataset.json", "bpm.json", "annotated.json", "weights.json", "policy.json", "eval.json",
                          "curve.svg", "curve.csv", "train_curve.csv"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }

    std::vector<fs::file_time_type> stamps;
    for (const auto& e : fs::directory_iterator(dir)) stamps.push_back(fs::last_write_time(e.path()));
    const auto second = run_pipeline(c, dir);
    for (const auto& s : second) EXPECT_FALSE(s.ran) << s.name;
    std::size_t k = 0;
    for (const auto& e : fs::directory_iterator(dir)) EXPECT_EQ(fs::last_write_time(e.path()), stamps[k++]);

    auto replot = c;
    replot.curve_window = 1;
    const auto third = run_pipeline(replot, dir);
    for (const auto& s : third) EXPECT_EQ(s.ran, s.name == "plot") << s.name;

    { std::ofstream(dir / "annotated.json", std::ios::app) << "garbage"; }
    try {
        run_pipeline(replot, dir);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "annotate");
    }

    const auto forced = run_pipeline(replot, dir, {.force = true});
    for (const auto& s : forced) EXPECT_TRUE(s.ran) << s.name;
}

TEST(Pipeline, UnreadableInputNamesStage) {
    const auto dir = fresh_dir("pipeline_bad_input");
    const PipelineConfig c = tiny_config();
    { std::ofstream(dir / "dataset.json") << "{not json"; }
    // Seed a manifest that claims gen-data already produced the broken file.
    const auto h = hex(hash_file(dir / "dataset.json"));
    const nlohmann::json settings = {{"network", c.network()},
                                     {"mixture", nlohmann::json(c)["mixture"]},
                                     {"episodes", c.episodes},
                                     {"seed", c.seed}};
    const nlohmann::json m = {{"format", "offlight-manifest"},
                              {"schema_version", kManifestSchemaVersion},
                              {"config_hash", config_hash(c)},
                              {"stages",
                               {{{"name", "gen-data"},
                                 {"hash", hex(fnv1a("gen-data|" + settings.dump() + "|"))},
                                 {"outputs", {{{"path", "dataset.json"}, {"hash", h}}}}}}}};
    { std::ofstream(dir / "manifest.json") << m.dump(); }
    try {
        run_pipeline(c, dir);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "train-bpm");
    }
}
