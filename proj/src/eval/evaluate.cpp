#include "offlight/eval/evaluate.hpp"

#include "offlight/errors.hpp"

#include <cmath>
#include <numeric>

namespace offlight::eval {

namespace {

class ControllerPolicy : public RolloutPolicy {
public:
    ControllerPolicy(control::ControllerSpec spec) : spec_(spec) {}

    void reset(const sim::SimState& state) override {
        controller_ = std::make_unique<control::Controller>(spec_, state.num_agents(), state.spec().num_phases());
    }

    std::vector<int> act(const std::vector<sim::Observation>& obs, const sim::SimState& state, int t) override {
        std::vector<int> a;
        for (const auto& d : controller_->act_all(obs, state, t)) a.push_back(d.phase);
        return a;
    }

private:
    control::ControllerSpec spec_;
    std::unique_ptr<control::Controller> controller_;
};

double sample_std(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

PolicyFactory controller_policy(const control::ControllerSpec& spec) {
    return [spec](std::uint64_t episode_seed) -> std::unique_ptr<RolloutPolicy> {
        control::ControllerSpec s = spec;
        s.seed = episode_seed ^ 0x5851f42d4c957f2dULL;
        return std::make_unique<ControllerPolicy>(s);
    };
}

EpisodeStats run_episode(const sim::NetworkSpec& spec, RolloutPolicy& policy) {
    auto [state, graph] = sim::build_grid(spec);
    (void)graph;
    policy.reset(state);
    EpisodeStats st;
    std::vector<sim::Observation> obs = sim::observe_all(state);
    for (int t = 0; !state.done(); ++t) {
        const std::vector<int> a = policy.act(obs, state, t);
        auto r = sim::step(state, a);
        st.rewards.push_back(r.reward);
        obs = std::move(r.observations);
    }
    const auto tt = state.travel_times(state.clock);
    st.vehicles = static_cast<long>(tt.size());
    st.att = tt.empty() ? 0.0 : std::accumulate(tt.begin(), tt.end(), 0.0) / static_cast<double>(tt.size());
    st.ql = st.rewards.empty()
                ? 0.0
                : -std::accumulate(st.rewards.begin(), st.rewards.end(), 0.0) / static_cast<double>(st.rewards.size());
    return st;
}

std::uint64_t eval_episode_seed(std::uint64_t seed, int episode) {
    return 0x9e3779b97f4a7c15ULL * (seed + 1) + 7777ULL * static_cast<std::uint64_t>(episode) + 1;
}

EvalReport evaluate(const PolicyFactory& factory, const sim::NetworkSpec& spec, int episodes,
                    const std::vector<std::uint64_t>& seeds, std::string algorithm, std::string scenario,
                    std::string demand) {
    if (episodes <= 0) throw ArgumentError("evaluate: episode count must be positive");
    if (seeds.empty()) throw ArgumentError("evaluate: at least one seed required");
    spec.validate();
    EvalReport rep;
    rep.algorithm = std::move(algorithm);
    rep.scenario = std::move(scenario);
    rep.demand = std::move(demand);
    rep.seeds = seeds;
    rep.episodes = episodes;
    std::vector<double> atts, qls;
    for (std::uint64_t seed : seeds) {
        SeedResult sr;
        sr.seed = seed;
        double tt_total = 0.0, ql_total = 0.0;
        for (int e = 0; e < episodes; ++e) {
            sim::NetworkSpec s = spec;
            s.seed = eval_episode_seed(seed, e);
            auto policy = factory(s.seed);
            const EpisodeStats st = run_episode(s, *policy);
            tt_total += st.att * static_cast<double>(st.vehicles);
            sr.vehicles += st.vehicles;
            ql_total += st.ql;
        }
        sr.ql = ql_total / episodes;
        if (sr.vehicles > 0) {
            sr.att = tt_total / static_cast<double>(sr.vehicles);
            atts.push_back(*sr.att);
        }
        qls.push_back(sr.ql);
        rep.vehicles += sr.vehicles;
        rep.per_seed.push_back(sr);
    }
    rep.ql_mean = std::accumulate(qls.begin(), qls.end(), 0.0) / static_cast<double>(qls.size());
    if (qls.size() >= 2) rep.ql_std = sample_std(qls);
    if (!atts.empty()) {
        rep.att_mean = std::accumulate(atts.begin(), atts.end(), 0.0) / static_cast<double>(atts.size());
        if (atts.size() >= 2) rep.att_std = sample_std(atts);
    }
    return rep;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = {{"scenario", r.scenario}, {"demand", r.demand},     {"algorithm", r.algorithm},
         {"seeds", r.seeds},       {"episodes", r.episodes}, {"ql_mean", r.ql_mean},
         {"vehicles", r.vehicles}};
    if (r.att_mean) j["att_mean"] = *r.att_mean;
    if (r.att_std) j["att_std"] = *r.att_std;
    if (r.ql_std) j["ql_std"] = *r.ql_std;
    nlohmann::json per = nlohmann::json::array();
    for (const auto& s : r.per_seed) {
        nlohmann::json e = {{"seed", s.seed}, {"ql", s.ql}, {"vehicles", s.vehicles}};
        if (s.att) e["att"] = *s.att;
        per.push_back(e);
    }
    j["per_seed"] = per;
}

void from_json(const nlohmann::json& j, EvalReport& r) {
    r.scenario = j.value("scenario", "");
    r.demand = j.value("demand", "");
    r.algorithm = j.value("algorithm", "");
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.episodes = j.at("episodes").get<int>();
    r.ql_mean = j.at("ql_mean").get<double>();
    r.vehicles = j.value("vehicles", 0L);
    if (j.contains("att_mean")) r.att_mean = j["att_mean"].get<double>();
    if (j.contains("att_std")) r.att_std = j["att_std"].get<double>();
    if (j.contains("ql_std")) r.ql_std = j["ql_std"].get<double>();
    r.per_seed.clear();
    for (const auto& e : j.value("per_seed", nlohmann::json::array())) {
        SeedResult s;
        s.seed = e.at("seed").get<std::uint64_t>();
        s.ql = e.at("ql").get<double>();
        s.vehicles = e.value("vehicles", 0L);
        if (e.contains("att")) s.att = e["att"].get<double>();
        r.per_seed.push_back(s);
    }
}

}  // namespace offlight::eval
