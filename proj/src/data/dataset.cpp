#include "offlight/data/dataset.hpp"

#include "offlight/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace offlight::data {

double Episode::recompute_return() const {
    double g = 0.0;
    for (const auto& tr : transitions) g += tr.reward;
    return g;
}

Fingerprint Fingerprint::of(const sim::NetworkSpec& spec) {
    return {spec.grid_rows,         spec.grid_cols,        spec.num_phases(),  spec.observation_size(),
            spec.action_interval_s, spec.episode_length_s, spec.lane_capacity};
}

void to_json(nlohmann::json& j, const Fingerprint& f) {
    j = {{"grid_rows", f.grid_rows},
         {"grid_cols", f.grid_cols},
         {"num_phases", f.num_phases},
         {"obs_size", f.obs_size},
         {"action_interval_s", f.action_interval_s},
         {"episode_length_s", f.episode_length_s},
         {"lane_capacity", f.lane_capacity}};
}

void from_json(const nlohmann::json& j, Fingerprint& f) {
    f.grid_rows = j.at("grid_rows").get<int>();
    f.grid_cols = j.at("grid_cols").get<int>();
    f.num_phases = j.at("num_phases").get<int>();
    f.obs_size = j.at("obs_size").get<int>();
    f.action_interval_s = j.at("action_interval_s").get<int>();
    f.episode_length_s = j.at("episode_length_s").get<int>();
    f.lane_capacity = j.at("lane_capacity").get<int>();
}

void Dataset::recompute_stats() {
    if (episodes.empty()) {
        g_min = g_max = 0.0;
        return;
    }
    g_min = std::numeric_limits<double>::infinity();
    g_max = -std::numeric_limits<double>::infinity();
    for (const auto& ep : episodes) {
        g_min = std::min(g_min, ep.ret);
        g_max = std::max(g_max, ep.ret);
    }
}

bool Dataset::annotated() const {
    for (const auto& ep : episodes) {
        for (const auto& tr : ep.transitions) {
            if (!tr.estimated_prob) return false;
        }
    }
    return !episodes.empty();
}

void Dataset::validate() const {
    const int n = fingerprint.num_agents();
    const auto width = static_cast<std::size_t>(n * fingerprint.obs_size);
    for (const auto& ep : episodes) {
        if (ep.recompute_return() != ep.ret) throw ArgumentError("episode " + ep.meta.uid + ": stored return differs");
        if (ep.ret < g_min || ep.ret > g_max) throw ArgumentError("episode " + ep.meta.uid + ": return outside [G_min, G_max]");
        for (const auto& tr : ep.transitions) {
            if (tr.obs.size() != width || tr.next_obs.size() != width || tr.actions.size() != static_cast<std::size_t>(n)) {
                throw ShapeError("episode " + ep.meta.uid + ": transition arity mismatch");
            }
            auto check_probs = [&](const std::optional<std::vector<double>>& p, const char* what) {
                if (!p) return;
                if (p->size() != static_cast<std::size_t>(n)) throw ShapeError(std::string(what) + " arity mismatch");
                for (double v : *p) {
                    if (!(v > 0.0 && v <= 1.0)) throw ArgumentError(std::string(what) + " outside (0, 1]");
                }
            };
            check_probs(tr.behavior_prob, "behavior_prob");
            check_probs(tr.estimated_prob, "estimated_prob");
        }
    }
}

namespace {

void append_observations(std::vector<double>& flat, const std::vector<sim::Observation>& obs) {
    for (const auto& o : obs) flat.insert(flat.end(), o.features.begin(), o.features.end());
}

}  // namespace

Episode record_episode(const sim::NetworkSpec& spec, control::Controller& controller, EpisodeMeta meta) {
    auto [state, graph] = sim::build_grid(spec);
    (void)graph;
    Episode ep;
    ep.meta = std::move(meta);
    std::vector<sim::Observation> obs = sim::observe_all(state);
    for (int t = 0; !state.done(); ++t) {
        const auto decisions = controller.act_all(obs, state, t);
        Transition tr;
        tr.t = t;
        append_observations(tr.obs, obs);
        std::vector<double> probs;
        for (const auto& d : decisions) {
            tr.actions.push_back(d.phase);
            probs.push_back(d.prob);
        }
        tr.behavior_prob = std::move(probs);
        auto result = sim::step(state, tr.actions);
        tr.reward = result.reward;
        append_observations(tr.next_obs, result.observations);
        ep.transitions.push_back(std::move(tr));
        obs = std::move(result.observations);
    }
    ep.ret = ep.recompute_return();
    return ep;
}

Dataset generate_dataset(const GenerationRequest& request) {
    request.network.validate();
    request.controller.validate();
    if (request.episodes <= 0) throw ArgumentError("episode count must be positive");
    Dataset ds;
    ds.network = request.network;
    ds.fingerprint = Fingerprint::of(request.network);
    const std::string label = control::to_string(request.controller.kind);
    for (int k = 0; k < request.episodes; ++k) {
        sim::NetworkSpec spec = request.network;
        spec.seed = request.seed * 1000003ULL + static_cast<std::uint64_t>(k);
        control::ControllerSpec cs = request.controller;
        cs.seed = spec.seed ^ 0x9e3779b97f4a7c15ULL;
        control::Controller controller(cs, spec.num_intersections(), spec.num_phases());
        EpisodeMeta meta;
        meta.uid = request.scenario + "/" + request.demand + "/" + label + "/s" + std::to_string(request.seed) + "/e" +
                   std::to_string(k);
        meta.controller = label;
        meta.demand = request.demand;
        meta.scenario = request.scenario;
        meta.seed = spec.seed;
        meta.source = label;
        ds.episodes.push_back(record_episode(spec, controller, std::move(meta)));
    }
    ds.recompute_stats();
    return ds;
}

void shuffle_indices(std::vector<int>& idx, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = idx.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

Dataset mix_datasets(const std::vector<std::pair<Dataset, double>>& parts, std::uint64_t seed, std::optional<int> total) {
    if (parts.empty()) throw ArgumentError("mix_datasets needs at least one part");
    double fsum = 0.0;
    for (const auto& [ds, f] : parts) {
        if (!(f >= 0.0 && f <= 1.0)) throw ArgumentError("mixing fraction outside [0, 1]");
        fsum += f;
        if (!(ds.fingerprint == parts.front().first.fingerprint)) {
            throw IncompatibleError("mix_datasets: dataset fingerprints differ");
        }
    }
    if (std::abs(fsum - 1.0) > 1e-9) throw ArgumentError("mixing fractions must sum to 1");

    int m = total.value_or(std::numeric_limits<int>::max());
    if (!total) {
        for (const auto& [ds, f] : parts) m = std::min(m, static_cast<int>(ds.episodes.size()));
    }
    std::vector<int> counts;
    std::size_t largest = 0;
    int assigned = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        counts.push_back(static_cast<int>(std::lround(parts[i].second * m)));
        assigned += counts.back();
        if (parts[i].second > parts[largest].second) largest = i;
    }
    counts[largest] += m - assigned;

    Dataset out;
    out.fingerprint = parts.front().first.fingerprint;
    out.network = parts.front().first.network;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& src = parts[i].first.episodes;
        if (counts[i] < 0 || counts[i] > static_cast<int>(src.size())) {
            throw ArgumentError("part " + std::to_string(i) + " has too few episodes for its fraction");
        }
        std::vector<int> idx(src.size());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<int>(k);
        shuffle_indices(idx, seed + 7919ULL * i);
        for (int k = 0; k < counts[i]; ++k) out.episodes.push_back(src[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])]);
    }
    out.recompute_stats();
    return out;
}

namespace {

nlohmann::json transition_to_json(const Transition& tr, int obs_size) {
    auto nest = [obs_size](const std::vector<double>& flat) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t at = 0; at < flat.size(); at += static_cast<std::size_t>(obs_size)) {
            rows.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(at),
                                               flat.begin() + static_cast<std::ptrdiff_t>(at + static_cast<std::size_t>(obs_size))));
        }
        return rows;
    };
    nlohmann::json j = {{"t", tr.t},
                        {"obs", nest(tr.obs)},
                        {"actions", tr.actions},
                        {"reward", tr.reward},
                        {"next_obs", nest(tr.next_obs)}};
    j["behavior_prob"] = tr.behavior_prob ? nlohmann::json(*tr.behavior_prob) : nlohmann::json(nullptr);
    j["estimated_prob"] = tr.estimated_prob ? nlohmann::json(*tr.estimated_prob) : nlohmann::json(nullptr);
    j["estimated_dist"] = tr.estimated_dist ? nlohmann::json(*tr.estimated_dist) : nlohmann::json(nullptr);
    return j;
}

std::optional<std::vector<double>> optional_vector(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::vector<double>>();
}

Transition transition_from_json(const nlohmann::json& j) {
    Transition tr;
    tr.t = j.at("t").get<int>();
    for (const auto& row : j.at("obs")) {
        for (const auto& v : row) tr.obs.push_back(v.get<double>());
    }
    tr.actions = j.at("actions").get<std::vector<int>>();
    tr.reward = j.at("reward").get<double>();
    for (const auto& row : j.at("next_obs")) {
        for (const auto& v : row) tr.next_obs.push_back(v.get<double>());
    }
    tr.behavior_prob = optional_vector(j, "behavior_prob");
    tr.estimated_prob = optional_vector(j, "estimated_prob");
    tr.estimated_dist = optional_vector(j, "estimated_dist");
    return tr;
}

}  // namespace

void save(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArgumentError("cannot write " + path.string());
    nlohmann::json header = {{"format", "offlight-dataset"},
                             {"schema_version", kDatasetSchemaVersion},
                             {"fingerprint", dataset.fingerprint},
                             {"network", dataset.network},
                             {"num_episodes", dataset.episodes.size()},
                             {"g_min", dataset.g_min},
                             {"g_max", dataset.g_max}};
    out << header.dump() << '\n';
    for (const auto& ep : dataset.episodes) {
        nlohmann::json transitions = nlohmann::json::array();
        for (const auto& tr : ep.transitions) transitions.push_back(transition_to_json(tr, dataset.fingerprint.obs_size));
        nlohmann::json rec = {{"uid", ep.meta.uid},
                              {"controller", ep.meta.controller},
                              {"demand", ep.meta.demand},
                              {"scenario", ep.meta.scenario},
                              {"seed", ep.meta.seed},
                              {"source", ep.meta.source},
                              {"return", ep.ret},
                              {"transitions", std::move(transitions)}};
        out << rec.dump() << '\n';
    }
    if (!out) throw ArgumentError("write failed for " + path.string());
}

Dataset load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    std::size_t pos = 0;
    std::size_t line_no = 0;
    Dataset ds;
    std::size_t expected = 0;
    auto parse_line = [&](std::size_t start, std::size_t end) {
        try {
            return nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(start),
                                         text.begin() + static_cast<std::ptrdiff_t>(end));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path.string() + ": malformed record " + std::to_string(line_no),
                             start + (e.byte > 0 ? e.byte - 1 : 0));
        }
    };
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        if (end == pos) {
            pos = end + 1;
            continue;
        }
        const nlohmann::json j = parse_line(pos, end);
        try {
            if (line_no == 0) {
                if (j.value("format", "") != "offlight-dataset") throw ParseError(path.string() + ": not a dataset file", pos);
                const int version = j.at("schema_version").get<int>();
                if (version != kDatasetSchemaVersion) {
                    throw VersionError(path.string() + ": dataset schema version " + std::to_string(version) +
                                       " is not supported (expected " + std::to_string(kDatasetSchemaVersion) + ")");
                }
                ds.fingerprint = j.at("fingerprint").get<Fingerprint>();
                ds.network = j.at("network").get<sim::NetworkSpec>();
                expected = j.at("num_episodes").get<std::size_t>();
                ds.g_min = j.at("g_min").get<double>();
                ds.g_max = j.at("g_max").get<double>();
            } else {
                Episode ep;
                ep.meta.uid = j.at("uid").get<std::string>();
                ep.meta.controller = j.at("controller").get<std::string>();
                ep.meta.demand = j.at("demand").get<std::string>();
                ep.meta.scenario = j.at("scenario").get<std::string>();
                ep.meta.seed = j.at("seed").get<std::uint64_t>();
                ep.meta.source = j.at("source").get<std::string>();
                ep.ret = j.at("return").get<double>();
                for (const auto& tj : j.at("transitions")) ep.transitions.push_back(transition_from_json(tj));
                ds.episodes.push_back(std::move(ep));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ": record " + std::to_string(line_no) + ": " + e.what(), pos);
        }
        ++line_no;
        pos = end + 1;
    }
    if (line_no == 0) throw ParseError(path.string() + ": empty file", 0);
    if (ds.episodes.size() != expected) {
        throw ParseError(path.string() + ": expected " + std::to_string(expected) + " episodes, found " +
                             std::to_string(ds.episodes.size()),
                         text.size());
    }
    ds.validate();
    return ds;
}

}  // namespace offlight::data
