#pragma once

// Progressive search-space design: M stages of
//   stage 1        initial supernet training
//   stages 2..M-1  search -> estimate distributions -> prune -> rebind + finetune
//   stage M        final search, return the most accurate feasible architectures
// with per-stage reports, checkpointing and resume.

#include "padnas/analysis.hpp"
#include "padnas/common.hpp"
#include "padnas/evolution.hpp"
#include "padnas/latency.hpp"
#include "padnas/oracle.hpp"
#include "padnas/pruning.hpp"
#include "padnas/search_space.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <memory>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace padnas {

struct FinetuneStep {
    int epochs = 0;
    double lr = 0.0;
    bool operator==(const FinetuneStep&) const = default;
};

/// Schedule of M - 1 training steps totalling 240 epochs: (120, 0.5),
/// (80, 0.1), (40, 0.1), with the last step absorbing the remainder for
/// M < 4 and extra steps of 40 epochs at 0.1 for M > 4.
inline std::vector<FinetuneStep> default_schedule(int stages) {
    static const FinetuneStep base[] = {{120, 0.5}, {80, 0.1}, {40, 0.1}};
    std::vector<FinetuneStep> s;
    const int steps = std::max(stages - 1, 1);
    for (int i = 0; i < steps; ++i) s.push_back(i < 3 ? base[i] : FinetuneStep{40, 0.1});
    if (steps < 3) {
        int used = 0;
        for (int i = 0; i + 1 < steps; ++i) used += s[static_cast<std::size_t>(i)].epochs;
        s.back().epochs = 240 - used;
    }
    return s;
}

inline LatencyBand default_band(std::string_view profile) {
    if (profile == "basic") return {60.0, 70.0};
    if (profile == "large") return {50.0, 100.0};
    return {};
}

struct PipelineConfig {
    std::string profile = "basic";
    /// LUT file; synthesized from cost_model when empty.
    std::string lut_path;
    CostModel cost_model = CostModel::for_profile("basic");
    LatencyBand band = default_band("basic");
    int stages = 4;
    double p_th = 0.01;
    int rank_cutoff = 10;
    CountingSource counting = CountingSource::FinalPopulation;
    std::vector<FinetuneStep> schedule = default_schedule(4);
    CesConfig ces;
    OracleConfig oracle;
    std::size_t top_n = 5;
    std::size_t tau_sample = 30;
    std::uint64_t seed = 0;
    /// Reports are persisted here when non-empty.
    std::string output_dir;

    /// Profile-dependent defaults for a fresh config.
    static PipelineConfig for_profile(std::string profile, int stages = 4) {
        PipelineConfig c;
        c.cost_model = CostModel::for_profile(profile);
        c.band = default_band(profile);
        c.profile = std::move(profile);
        c.stages = stages;
        c.schedule = default_schedule(stages);
        return c;
    }

    void check() const {
        if (stages < 2) throw ConfigError("stages (M) must be >= 2");
        if (schedule.size() != static_cast<std::size_t>(stages - 1))
            throw ConfigError("finetune schedule must have M - 1 entries");
        for (const auto& s : schedule)
            if (s.epochs < 0) throw ConfigError("finetune epochs must be >= 0");
        if (p_th < 0.0 || p_th >= 1.0) throw ConfigError("p_th must lie in [0, 1)");
        if (rank_cutoff < 1) throw ConfigError("rank_cutoff must be >= 1");
        if (top_n < 1) throw ConfigError("top_n must be >= 1");
        ces.check();
    }
};

//----------------------------------------------------------------------------//
// Config JSON
//----------------------------------------------------------------------------//

namespace detail {

inline std::string cost_kind_name(CostModel::Kind k) {
    switch (k) {
        case CostModel::Kind::Mbv2Basic: return "mbv2-basic";
        case CostModel::Kind::Mbv2Large: return "mbv2-large";
        case CostModel::Kind::Uniform: return "uniform";
    }
    return "uniform";
}

inline CostModel::Kind cost_kind_from(std::string_view s) {
    if (s == "mbv2-basic") return CostModel::Kind::Mbv2Basic;
    if (s == "mbv2-large") return CostModel::Kind::Mbv2Large;
    if (s == "uniform") return CostModel::Kind::Uniform;
    throw ConfigError("unknown cost model kind: " + std::string(s));
}

}  // namespace detail

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json sched = nlohmann::json::array();
    for (const auto& s : c.schedule) sched.push_back({{"epochs", s.epochs}, {"lr", s.lr}});
    const auto& l = c.oracle.landscape;
    const auto& x = c.oracle.external;
    return {
        {"profile", c.profile},
        {"lut", c.lut_path},
        {"cost_model",
         {{"kind", detail::cost_kind_name(c.cost_model.kind)},
          {"ms_per_mflop", c.cost_model.ms_per_mflop},
          {"unit_ms", c.cost_model.unit_ms},
          {"layer_jitter", c.cost_model.layer_jitter},
          {"fixed_overhead_ms", c.cost_model.fixed_overhead_ms}}},
        {"band", {{"lat_min", c.band.lat_min}, {"lat_max", std::isinf(c.band.lat_max) ? nlohmann::json() : nlohmann::json(c.band.lat_max)}}},
        {"stages", c.stages},
        {"p_th", c.p_th},
        {"rank_cutoff", c.rank_cutoff},
        {"counting_source", c.counting == CountingSource::Archive ? "archive" : "final_population"},
        {"finetune_schedule", sched},
        {"top_n", c.top_n},
        {"tau_sample", c.tau_sample},
        {"seed", c.seed},
        {"ces",
         {{"population_size", c.ces.population_size},
          {"iterations", c.ces.iterations},
          {"crossover_prob", c.ces.crossover_prob},
          {"mutation_prob", c.ces.mutation_prob},
          {"mutation_eta", c.ces.mutation_eta},
          {"retry_budget", c.ces.retry_budget},
          {"init_max_factor", c.ces.init_max_factor},
          {"spos_topk", c.ces.spos_topk},
          {"threads", c.ces.threads}}},
        {"oracle",
         {{"backend", to_string(c.oracle.backend)},
          {"sigma0", c.oracle.sigma0},
          {"decay_epochs", c.oracle.decay_epochs},
          {"landscape",
           {{"unary_noise", l.unary_noise},
            {"pair_noise", l.pair_noise},
            {"center_capacity", l.center_capacity},
            {"temperature", l.temperature}}},
          {"external",
           {{"command", x.command},
            {"host", x.host},
            {"port", x.port},
            {"timeout_ms", x.timeout_ms},
            {"max_retries", x.max_retries}}}}},
    };
}

/// Missing keys take profile defaults.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
    try {
        const std::string profile = j.value("profile", std::string("basic"));
        const int stages = j.value("stages", 4);
        PipelineConfig c = PipelineConfig::for_profile(profile, stages);
        c.lut_path = j.value("lut", nlohmann::json()).is_string() ? j["lut"].get<std::string>() : "";
        if (j.contains("cost_model")) {
            const auto& m = j["cost_model"];
            if (m.contains("kind")) c.cost_model.kind = detail::cost_kind_from(m["kind"].get<std::string>());
            c.cost_model.ms_per_mflop = m.value("ms_per_mflop", c.cost_model.ms_per_mflop);
            c.cost_model.unit_ms = m.value("unit_ms", c.cost_model.unit_ms);
            c.cost_model.layer_jitter = m.value("layer_jitter", c.cost_model.layer_jitter);
            c.cost_model.fixed_overhead_ms = m.value("fixed_overhead_ms", c.cost_model.fixed_overhead_ms);
        }
        if (j.contains("band")) {
            const auto& b = j["band"];
            const double lo = b.value("lat_min", c.band.lat_min);
            double hi = c.band.lat_max;
            if (b.contains("lat_max")) hi = b["lat_max"].is_null() ? std::numeric_limits<double>::infinity() : b["lat_max"].get<double>();
            c.band = LatencyBand(lo, hi);
        }
        c.p_th = j.value("p_th", c.p_th);
        c.rank_cutoff = j.value("rank_cutoff", c.rank_cutoff);
        const std::string src = j.value("counting_source", std::string("final_population"));
        if (src == "archive") c.counting = CountingSource::Archive;
        else if (src == "final_population") c.counting = CountingSource::FinalPopulation;
        else throw ConfigError("unknown counting_source: " + src);
        if (j.contains("finetune_schedule")) {
            c.schedule.clear();
            for (const auto& s : j["finetune_schedule"]) c.schedule.push_back({s.at("epochs").get<int>(), s.value("lr", 0.0)});
        }
        c.top_n = j.value("top_n", c.top_n);
        c.tau_sample = j.value("tau_sample", c.tau_sample);
        c.seed = j.value("seed", c.seed);
        c.output_dir = j.value("output_dir", std::string());
        if (j.contains("ces")) {
            const auto& e = j["ces"];
            c.ces.population_size = e.value("population_size", c.ces.population_size);
            c.ces.iterations = e.value("iterations", c.ces.iterations);
            c.ces.crossover_prob = e.value("crossover_prob", c.ces.crossover_prob);
            c.ces.mutation_prob = e.value("mutation_prob", c.ces.mutation_prob);
            c.ces.mutation_eta = e.value("mutation_eta", c.ces.mutation_eta);
            c.ces.retry_budget = e.value("retry_budget", c.ces.retry_budget);
            c.ces.init_max_factor = e.value("init_max_factor", c.ces.init_max_factor);
            c.ces.spos_topk = e.value("spos_topk", c.ces.spos_topk);
            c.ces.threads = e.value("threads", c.ces.threads);
        }
        if (j.contains("oracle")) {
            const auto& o = j["oracle"];
            if (o.contains("backend")) c.oracle.backend = backend_from_string(o["backend"].get<std::string>());
            c.oracle.sigma0 = o.value("sigma0", c.oracle.sigma0);
            c.oracle.decay_epochs = o.value("decay_epochs", c.oracle.decay_epochs);
            if (o.contains("landscape")) {
                auto& l = c.oracle.landscape;
                const auto& jl = o["landscape"];
                l.unary_noise = jl.value("unary_noise", l.unary_noise);
                l.pair_noise = jl.value("pair_noise", l.pair_noise);
                l.center_capacity = jl.value("center_capacity", l.center_capacity);
                l.temperature = jl.value("temperature", l.temperature);
            }
            if (o.contains("external")) {
                auto& x = c.oracle.external;
                const auto& jx = o["external"];
                x.command = jx.value("command", x.command);
                x.host = jx.value("host", x.host);
                x.port = jx.value("port", x.port);
                x.timeout_ms = jx.value("timeout_ms", x.timeout_ms);
                x.max_retries = jx.value("max_retries", x.max_retries);
            }
        }
        c.check();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed pipeline config: ") + e.what());
    }
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

/// Hash of the canonical config document, output directory excluded.
inline std::string config_hash(const PipelineConfig& c) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config_to_json(c).dump());
    return os.str();
}

//----------------------------------------------------------------------------//
// Reports
//----------------------------------------------------------------------------//

struct FrontEntry {
    Architecture arch;
    double accuracy = 0.0;
    double latency_ms = 0.0;
    std::optional<double> true_accuracy;
};

struct StageAccounting {
    std::uint64_t queries = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t evaluations = 0;
    /// population x (iterations + 1) for a search stage.
    std::uint64_t budget = 0;
};

struct StageReport {
    int stage = 0;
    std::string kind;
    std::string input_size;
    std::string output_size;
    double input_log10_size = 0.0;
    double output_log10_size = 0.0;
    std::vector<LayerDistribution> distributions;
    std::optional<PruneReport> prune;
    std::vector<FrontEntry> front;
    std::optional<double> tau;
    /// Members the tau estimate was computed on.
    std::vector<FrontEntry> tau_sample;
    /// The final population held fewer members than the requested sample.
    bool tau_sample_short = false;
    std::optional<FinetuneStep> training;
    std::uint64_t oracle_version = 0;
    int oracle_epochs = 0;
    double mean_sigma = 0.0;
    StageAccounting accounting;
};

namespace detail {

inline nlohmann::json entries_to_json(const std::vector<FrontEntry>& entries) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& f : entries) {
        nlohmann::json e = {{"arch", f.arch}, {"accuracy", f.accuracy}, {"latency_ms", f.latency_ms}};
        if (f.true_accuracy) e["true_accuracy"] = *f.true_accuracy;
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<FrontEntry> entries_from_json(const nlohmann::json& j) {
    std::vector<FrontEntry> out;
    for (const auto& e : j) {
        FrontEntry f{e.at("arch").get<Architecture>(), e.at("accuracy").get<double>(), e.at("latency_ms").get<double>(),
                     std::nullopt};
        if (e.contains("true_accuracy")) f.true_accuracy = e["true_accuracy"].get<double>();
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace detail

inline nlohmann::json report_to_json(const StageReport& r) {
    nlohmann::json j = {{"stage", r.stage},
                        {"kind", r.kind},
                        {"input_size", r.input_size},
                        {"output_size", r.output_size},
                        {"input_log10_size", r.input_log10_size},
                        {"output_log10_size", r.output_log10_size},
                        {"distributions", r.distributions},
                        {"prune", r.prune ? nlohmann::json(*r.prune) : nlohmann::json()},
                        {"front", detail::entries_to_json(r.front)},
                        {"tau", r.tau ? nlohmann::json(*r.tau) : nlohmann::json()},
                        {"tau_sample", detail::entries_to_json(r.tau_sample)},
                        {"tau_sample_short", r.tau_sample_short},
                        {"training", r.training ? nlohmann::json{{"epochs", r.training->epochs}, {"lr", r.training->lr}}
                                                : nlohmann::json()},
                        {"oracle_version", r.oracle_version},
                        {"oracle_epochs", r.oracle_epochs},
                        {"mean_sigma", r.mean_sigma},
                        {"accounting",
                         {{"queries", r.accounting.queries},
                          {"cache_hits", r.accounting.cache_hits},
                          {"evaluations", r.accounting.evaluations},
                          {"budget", r.accounting.budget}}}};
    return j;
}

inline StageReport report_from_json(const nlohmann::json& j) {
    StageReport r;
    r.stage = j.at("stage").get<int>();
    r.kind = j.at("kind").get<std::string>();
    r.input_size = j.at("input_size").get<std::string>();
    r.output_size = j.at("output_size").get<std::string>();
    r.input_log10_size = j.at("input_log10_size").get<double>();
    r.output_log10_size = j.at("output_log10_size").get<double>();
    r.distributions = j.at("distributions").get<std::vector<LayerDistribution>>();
    if (!j.at("prune").is_null()) r.prune = j["prune"].get<PruneReport>();
    r.front = detail::entries_from_json(j.at("front"));
    if (!j.at("tau").is_null()) r.tau = j["tau"].get<double>();
    r.tau_sample = detail::entries_from_json(j.at("tau_sample"));
    r.tau_sample_short = j.at("tau_sample_short").get<bool>();
    if (!j.at("training").is_null()) r.training = FinetuneStep{j["training"].at("epochs").get<int>(), j["training"].at("lr").get<double>()};
    r.oracle_version = j.at("oracle_version").get<std::uint64_t>();
    r.oracle_epochs = j.at("oracle_epochs").get<int>();
    r.mean_sigma = j.at("mean_sigma").get<double>();
    const auto& a = j.at("accounting");
    r.accounting = {a.at("queries").get<std::uint64_t>(), a.at("cache_hits").get<std::uint64_t>(),
                    a.at("evaluations").get<std::uint64_t>(), a.at("budget").get<std::uint64_t>()};
    return r;
}

struct TauSample {
    std::optional<double> tau;
    std::vector<FrontEntry> sample;
    bool short_front = false;
};

/// Whole non-domination fronts of a ranked population, best first, until at
/// least n members are collected. A short rank-1 set is thus extended by the
/// nearest fronts rather than yielding a tiny sample.
inline std::vector<FrontEntry> frontier_pool(std::span<const Individual> population, std::size_t n) {
    std::vector<const Individual*> sorted;
    for (const auto& ind : population) sorted.push_back(&ind);
    std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
    std::vector<FrontEntry> out;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (out.size() >= n && sorted[i]->rank != sorted[i - 1]->rank) break;
        out.push_back({sorted[i]->arch, sorted[i]->accuracy, sorted[i]->latency_ms, std::nullopt});
    }
    return out;
}

/// Kendall tau between search-time and true accuracy over n members spread
/// by latency. Undefined (nullopt) when the sample is degenerate.
inline TauSample tau_on_front(const std::vector<FrontEntry>& front, std::size_t n) {
    TauSample out;
    std::vector<FrontEntry> usable;
    for (const auto& f : front)
        if (f.true_accuracy) usable.push_back(f);
    out.short_front = usable.size() < n;
    out.sample = spread_sample(std::move(usable), n);
    const auto& sample = out.sample;
    if (sample.size() < 2) return out;
    std::vector<double> pred, truth;
    for (const auto& f : sample) {
        pred.push_back(f.accuracy);
        truth.push_back(*f.true_accuracy);
    }
    try {
        out.tau = kendall_tau(pred, truth);
    } catch (const ContractError&) {
    }
    return out;
}

/// Tau per search stage, recomputed from the persisted sample (stages
/// without a search give nullopt).
inline std::vector<std::optional<double>> tau_pipeline_report(const std::vector<StageReport>& reports,
                                                              std::size_t n = 30) {
    std::vector<std::optional<double>> out;
    for (const auto& r : reports) {
        const auto& pool = r.tau_sample.empty() ? r.front : r.tau_sample;
        out.push_back(pool.empty() ? std::nullopt : tau_on_front(pool, n).tau);
    }
    return out;
}

struct BestArchitecture {
    Architecture arch;
    double accuracy = 0.0;
    double latency_ms = 0.0;
    /// Evaluation-phase analog: ground truth under local backends.
    std::optional<double> true_accuracy;
};

struct PipelineResult {
    std::vector<BestArchitecture> best;
    std::vector<StageReport> reports;
    SearchSpace final_space;
    /// Space searched in each search stage, S_1 first.
    std::vector<SearchSpace> space_chain;
};

struct RunOptions {
    /// Resume from the checkpoint in cfg.output_dir.
    bool resume = false;
    /// Stop (as if killed) once this stage's checkpoint is written.
    std::optional<int> stop_after_stage;
    /// Pre-built LUT; overrides cfg.lut_path and the cost model.
    const LatencyTable* table = nullptr;
    /// Oracle factory override (e.g. an attached external client).
    std::function<std::unique_ptr<Oracle>(const OracleConfig&, const SearchSpace&)> make_oracle;
};

//----------------------------------------------------------------------------//
// Baselines
//----------------------------------------------------------------------------//

/// n feasible uniform samples evaluated by the oracle's active backend.
inline std::vector<Evaluation> random_search_baseline(const SearchSpace& space, const LatencyTable& table,
                                                      const LatencyBand& band, Oracle& oracle, std::size_t n,
                                                      Rng& rng) {
    if (n < 1) throw ContractError("random_search_baseline: n must be >= 1");
    table.check_coverage(space);
    std::vector<Evaluation> out;
    const std::size_t budget = 1000 * n;
    std::size_t tries = 0;
    while (out.size() < n) {
        if (tries++ >= budget) {
            const auto [lo, hi] = latency_range(table, space);
            throw InfeasibleBandError(band.lat_min, band.lat_max, lo, hi);
        }
        Architecture a = sample_uniform(space, rng);
        if (is_feasible(table, band, a)) out.push_back(oracle.evaluate(a, table));
    }
    return out;
}

struct MeanSpread {
    double mean = 0.0;
    double stddev = 0.0;
};

inline MeanSpread summarize(std::span<const double> xs) {
    MeanSpread m;
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - m.mean) * (x - m.mean);
        m.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return m;
}

//----------------------------------------------------------------------------//
// Pipeline
//----------------------------------------------------------------------------//

namespace detail {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot read " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint file " + path.string() + ": " + e.what());
    }
}

inline nlohmann::json oracle_state_to_json(const OracleState& s) {
    return {{"backend", to_string(s.backend)}, {"seed", s.seed},       {"version", s.version},
            {"epochs", s.epochs},              {"sigma", s.sigma},     {"space", space_to_json(s.bound)}};
}

inline OracleState oracle_state_from_json(const nlohmann::json& j) {
    OracleState s;
    s.backend = backend_from_string(j.at("backend").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.version = j.at("version").get<std::uint64_t>();
    s.epochs = j.at("epochs").get<int>();
    s.sigma = j.at("sigma").get<std::vector<double>>();
    s.bound = space_from_json(j.at("space"));
    return s;
}

inline std::string stage_file(int k) { return "stages/stage-" + std::to_string(k) + ".json"; }

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Landscape seed of a run; paired runs with equal seeds share one problem instance.
inline std::uint64_t landscape_seed(std::uint64_t run_seed) { return hash_all(run_seed, 'L'); }
inline std::uint64_t lut_seed(std::uint64_t run_seed) { return hash_all(run_seed, 'T'); }

/// Resolves the latency table of a run.
inline LatencyTable pipeline_table(const PipelineConfig& cfg, const SearchSpace& space) {
    if (!cfg.lut_path.empty()) return load_lut(cfg.lut_path);
    Rng rng(lut_seed(cfg.seed));
    return synth_latency_table(space, cfg.cost_model, rng);
}

/// Top-n unique archive members by search-time accuracy (ties: lower latency).
inline std::vector<BestArchitecture> select_best(const SearchResult& sr, std::size_t n, const Oracle& oracle,
                                                 bool rescore) {
    auto pool = detail::unique_by_arch(sr.archive);
    std::stable_sort(pool.begin(), pool.end(), [](const Individual& a, const Individual& b) {
        if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
        return a.latency_ms < b.latency_ms;
    });
    if (pool.size() > n) pool.resize(n);
    std::vector<BestArchitecture> out;
    for (const auto& ind : pool) {
        BestArchitecture b{ind.arch, ind.accuracy, ind.latency_ms, std::nullopt};
        if (rescore) b.true_accuracy = oracle.true_accuracy(ind.arch);
        out.push_back(std::move(b));
    }
    return out;
}

inline nlohmann::json summary_to_json(const PipelineResult& r, const PipelineConfig& cfg) {
    nlohmann::json best = nlohmann::json::array();
    for (const auto& b : r.best) {
        nlohmann::json e = {{"arch", b.arch}, {"accuracy", b.accuracy}, {"latency_ms", b.latency_ms},
                            {"latency_ms_rounded", round_ms(b.latency_ms)}};
        if (b.true_accuracy) e["true_accuracy"] = *b.true_accuracy;
        best.push_back(std::move(e));
    }
    nlohmann::json stages = nlohmann::json::array();
    std::uint64_t evaluations = 0;
    for (const auto& rep : r.reports) {
        stages.push_back({{"stage", rep.stage},
                          {"kind", rep.kind},
                          {"output_size", rep.output_size},
                          {"output_log10_size", rep.output_log10_size},
                          {"tau", rep.tau ? nlohmann::json(*rep.tau) : nlohmann::json()}});
        evaluations += rep.accounting.evaluations;
    }
    return {{"config_hash", config_hash(cfg)},
            {"stages", stages},
            {"best", best},
            {"final_space_size", r.final_space.size().str()},
            {"total_evaluations", evaluations},
            {"note", "true_accuracy is the evaluation-phase analog (ground truth of the synthetic landscape)"}};
}

/// Tau table CSV: stage, kind, log10 size, tau.
inline void write_tau_csv(std::ostream& os, const std::vector<StageReport>& reports) {
    os << "stage,kind,log10_size,tau\n";
    for (const auto& r : reports) {
        os << r.stage << "," << r.kind << "," << r.input_log10_size << ",";
        if (r.tau) os << *r.tau;
        os << "\n";
    }
}

inline PipelineResult run_pipeline(const PipelineConfig& cfg, const RunOptions& opts = {}) {
    namespace fs = std::filesystem;
    cfg.check();
    const fs::path out_dir = cfg.output_dir;
    const bool persist = !cfg.output_dir.empty();
    if (opts.resume && !persist) throw ConfigError("resume requires an output directory");

    const SearchSpace initial = build_space(cfg.profile);
    const LatencyTable table = opts.table ? *opts.table : pipeline_table(cfg, initial);
    table.check_coverage(initial);

    OracleConfig ocfg = cfg.oracle;
    ocfg.seed = landscape_seed(cfg.seed);
    std::unique_ptr<Oracle> oracle =
        opts.make_oracle ? opts.make_oracle(ocfg, initial) : std::make_unique<Oracle>(ocfg, initial);
    const bool local_truth = oracle->backend() != Backend::External;

    const std::string hash = config_hash(cfg);
    Rng rng(cfg.seed);
    SearchSpace space = initial;
    PipelineResult result;
    result.space_chain.push_back(initial);
    int completed = 0;

    if (opts.resume) {
        const auto state = detail::read_json(out_dir / "run_state.json");
        try {
            if (state.at("config_hash").get<std::string>() != hash)
                throw CheckpointError("config hash mismatch: checkpoint " + state["config_hash"].get<std::string>() +
                                      ", config " + hash);
            completed = state.at("completed_stages").get<int>();
            space = space_from_json(state.at("space"));
            rng.load(state.at("rng").get<std::string>());
            oracle->restore(detail::oracle_state_from_json(state.at("oracle")));
            const auto& chain = state.at("space_chain");
            for (std::size_t i = 1; i < chain.size(); ++i) result.space_chain.push_back(space_from_json(chain[i]));
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(std::string("corrupt run state: ") + e.what());
        } catch (const ConfigError& e) {
            throw CheckpointError(std::string("corrupt run state: ") + e.what());
        }
        for (int k = 1; k <= completed; ++k)
            result.reports.push_back(report_from_json(detail::read_json(out_dir / detail::stage_file(k))));
    }

    nlohmann::json timing = nlohmann::json::object();
    if (persist && opts.resume && fs::exists(out_dir / "timing.json")) timing = detail::read_json(out_dir / "timing.json");

    auto checkpoint = [&](int k) {
        if (!persist) return;
        nlohmann::json chain = nlohmann::json::array();
        for (const auto& s : result.space_chain) chain.push_back(space_to_json(s));
        nlohmann::json state = {{"config_hash", hash},
                                {"completed_stages", k},
                                {"space", space_to_json(space)},
                                {"space_chain", chain},
                                {"rng", rng.save()},
                                {"oracle", detail::oracle_state_to_json(oracle->state())}};
        detail::write_text(out_dir / "run_state.json", state.dump(1) + "\n");
        detail::write_text(out_dir / "timing.json", timing.dump(1) + "\n");
    };

    auto search_stage = [&](StageReport& rep) -> SearchResult {
        CesConfig c = cfg.ces;
        c.seed = rng.next_u64();
        oracle->reset_stats();
        SearchResult sr = ces_search(space, table, cfg.band, *oracle, c);
        const auto stats = oracle->stats();
        rep.accounting = {stats.queries, stats.hits, stats.misses,
                          static_cast<std::uint64_t>(c.population_size) * (c.iterations + 1)};
        for (const auto& ind : sr.final_population) {
            if (ind.rank != 1) continue;
            FrontEntry f{ind.arch, ind.accuracy, ind.latency_ms, std::nullopt};
            if (local_truth) f.true_accuracy = oracle->true_accuracy(ind.arch);
            rep.front.push_back(std::move(f));
        }
        std::stable_sort(rep.front.begin(), rep.front.end(),
                         [](const FrontEntry& a, const FrontEntry& b) { return a.latency_ms < b.latency_ms; });
        if (local_truth) {
            auto pool = frontier_pool(sr.final_population, cfg.tau_sample);
            for (auto& f : pool) f.true_accuracy = oracle->true_accuracy(f.arch);
            auto t = tau_on_front(pool, cfg.tau_sample);
            rep.tau = t.tau;
            rep.tau_sample = std::move(t.sample);
            rep.tau_sample_short = t.short_front;
        }
        return sr;
    };

    auto finish_report = [&](StageReport& rep) {
        rep.output_size = space.size().str();
        rep.output_log10_size = space.log10_size();
        rep.oracle_version = oracle->version();
        rep.oracle_epochs = oracle->epochs();
        rep.mean_sigma = detail::mean_of(oracle->sigma());
    };

    for (int k = completed + 1; k <= cfg.stages; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        StageReport rep;
        rep.stage = k;
        rep.input_size = space.size().str();
        rep.input_log10_size = space.log10_size();
        const FinetuneStep* step = k <= static_cast<int>(cfg.schedule.size()) ? &cfg.schedule[static_cast<std::size_t>(k - 1)] : nullptr;

        try {
            if (k == 1) {
                rep.kind = "initial-training";
                oracle->train(step->epochs);
                rep.training = *step;
            } else if (k < cfg.stages) {
                rep.kind = "search-prune";
                const SearchResult sr = search_stage(rep);
                const auto counting = select_counting_set(sr, cfg.rank_cutoff, cfg.counting);
                rep.distributions = estimate_distributions(counting, space);
                auto [pruned, prune] = prune_below_threshold(space, rep.distributions, cfg.p_th, cfg.rank_cutoff);
                const auto diag = structural_constraint_check(pruned, space);
                if (!diag.constraints_ok) throw Error("pruned space violates constraints: " + diag.message);
                rep.prune = std::move(prune);
                space = std::move(pruned);
                result.space_chain.push_back(space);
                oracle->rebind_space(space);
                oracle->finetune(step->epochs);
                rep.training = *step;
            } else {
                rep.kind = "final-search";
                const SearchResult sr = search_stage(rep);
                rep.distributions = estimate_distributions(select_counting_set(sr, cfg.rank_cutoff, cfg.counting), space);
                result.best = select_best(sr, cfg.top_n, *oracle, local_truth);
            }
        } catch (const InfeasibleBandError& e) {
            throw InfeasibleBandError(cfg.band.lat_min, cfg.band.lat_max, e.achievable_min(), e.achievable_max(),
                                      "stage " + std::to_string(k) + ": ");
        }
        finish_report(rep);
        result.reports.push_back(rep);
        timing["stage-" + std::to_string(k)] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (persist) {
            detail::write_text(out_dir / detail::stage_file(k), report_to_json(rep).dump(1) + "\n");
            if (!rep.front.empty()) {
                std::vector<Individual> rows;
                for (const auto& f : rep.front) rows.push_back({f.arch, f.accuracy, f.latency_ms, 1, 0.0, 0});
                std::ostringstream csv;
                write_front_csv(csv, rows);
                detail::write_text(out_dir / ("fronts/stage-" + std::to_string(k) + ".csv"), csv.str());
            }
        }
        checkpoint(k);
        if (opts.stop_after_stage && *opts.stop_after_stage == k && k < cfg.stages) {
            result.final_space = space;
            return result;
        }
    }

    if (result.best.empty() && persist && fs::exists(out_dir / "summary.json")) {
        for (const auto& b : detail::read_json(out_dir / "summary.json").at("best")) {
            BestArchitecture ba{b.at("arch").get<Architecture>(), b.at("accuracy").get<double>(),
                                b.at("latency_ms").get<double>(), std::nullopt};
            if (b.contains("true_accuracy")) ba.true_accuracy = b["true_accuracy"].get<double>();
            result.best.push_back(std::move(ba));
        }
    }
    result.final_space = space;
    if (persist) detail::write_text(out_dir / "summary.json", summary_to_json(result, cfg).dump(1) + "\n");
    return result;
}

}  // namespace padnas
