// padnas command-line front end.
//
// Exit codes: 0 success, 1 other error, 2 configuration error,
// 3 infeasible latency band, 4 checkpoint error, 5 oracle/protocol error.

#include "padnas/analysis.hpp"
#include "padnas/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace padnas;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kInfeasible = 3, kCheckpoint = 4, kOracle = 5 };

struct BandOverride {
    std::optional<double> lat_min, lat_max;
    std::string lut;
    std::optional<std::uint64_t> seed;

    void apply(PipelineConfig& cfg) const {
        if (!lut.empty()) cfg.lut_path = lut;
        if (seed) cfg.seed = *seed;
        if (lat_min || lat_max) cfg.band = LatencyBand(lat_min.value_or(cfg.band.lat_min), lat_max.value_or(cfg.band.lat_max));
    }

    void add_to(CLI::App* cmd) {
        cmd->add_option("--lut", lut, "Latency table JSON (overrides the synthesized table)");
        cmd->add_option("--lat-min", lat_min, "Lower latency bound in ms");
        cmd->add_option("--lat-max", lat_max, "Upper latency bound in ms");
        cmd->add_option("--seed", seed, "Run seed");
    }
};

PipelineConfig config_or_profile(const std::string& path, const std::string& profile) {
    if (!path.empty()) return load_config(path);
    return PipelineConfig::for_profile(profile.empty() ? "basic" : profile);
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty() || out_path == "-")
        std::cout << text;
    else
        write_file(out_path, text);
}

void print_run(const PipelineResult& r) {
    for (const auto& rep : r.reports) {
        std::printf("stage %d %-16s log10|S| %6.2f -> %6.2f", rep.stage, rep.kind.c_str(), rep.input_log10_size,
                    rep.output_log10_size);
        if (rep.tau) std::printf("  tau %.4f", *rep.tau);
        if (rep.prune) std::printf("  removed %zu", rep.prune->removed.size());
        std::printf("\n");
    }
    for (const auto& b : r.best) {
        std::printf("best %.4f", b.accuracy);
        if (b.true_accuracy) std::printf(" (true %.4f)", *b.true_accuracy);
        std::printf(" %.2f ms  %s\n", b.latency_ms, b.arch.to_string().c_str());
    }
}

int cmd_run(const std::string& config, const std::string& profile, const std::string& out, const std::string& resume,
            std::optional<int> stop_after, const BandOverride& ov) {
    PipelineConfig cfg = config_or_profile(config, profile);
    ov.apply(cfg);
    RunOptions opts;
    if (!resume.empty()) {
        cfg.output_dir = resume;
        opts.resume = true;
    } else if (!out.empty()) {
        cfg.output_dir = out;
    }
    opts.stop_after_stage = stop_after;
    const auto result = run_pipeline(cfg, opts);
    print_run(result);
    return kOk;
}

int cmd_baseline(const std::string& mode, const std::string& config, const std::string& profile,
                 const std::string& out, std::size_t n, const BandOverride& ov) {
    PipelineConfig cfg = config_or_profile(config, profile);
    ov.apply(cfg);
    if (mode == "i-supernet") {
        cfg.stages = 2;
        cfg.schedule = default_schedule(2);
        if (!out.empty()) cfg.output_dir = out;
        print_run(run_pipeline(cfg));
        return kOk;
    }

    const SearchSpace space = build_space(cfg.profile);
    const LatencyTable table = pipeline_table(cfg, space);
    OracleConfig ocfg = cfg.oracle;
    ocfg.seed = landscape_seed(cfg.seed);
    Oracle oracle(ocfg, space);
    const bool local = oracle.backend() != Backend::External;
    nlohmann::json doc;

    if (mode == "random") {
        Rng rng(cfg.seed);
        const auto evals = random_search_baseline(space, table, cfg.band, oracle, n, rng);
        nlohmann::json rows = nlohmann::json::array();
        std::vector<double> acc, truth;
        for (const auto& e : evals) {
            nlohmann::json row = {{"arch", e.architecture}, {"accuracy", e.accuracy}, {"latency_ms", e.latency_ms}};
            acc.push_back(e.accuracy);
            if (local) {
                truth.push_back(oracle.true_accuracy(e.architecture));
                row["true_accuracy"] = truth.back();
            }
            rows.push_back(std::move(row));
        }
        const auto s = summarize(acc);
        doc = {{"mode", mode}, {"samples", rows}, {"mean_accuracy", s.mean}, {"stddev_accuracy", s.stddev}};
        std::printf("random n=%zu accuracy %.4f +- %.4f", n, s.mean, s.stddev);
        if (local) {
            const auto t = summarize(truth);
            doc["mean_true_accuracy"] = t.mean;
            doc["stddev_true_accuracy"] = t.stddev;
            std::printf("  true %.4f +- %.4f", t.mean, t.stddev);
        }
        std::printf("\n");
    } else if (mode == "spos") {
        oracle.train(cfg.schedule.front().epochs);
        CesConfig c = cfg.ces;
        c.seed = cfg.seed;
        const auto sr = spos_search(space, table, cfg.band, oracle, c);
        const auto counting = select_counting_set(sr, cfg.rank_cutoff, cfg.counting);
        const auto dists = estimate_distributions(counting, space);
        nlohmann::json pop = nlohmann::json::array();
        for (const auto& ind : sr.final_population)
            pop.push_back({{"arch", ind.arch}, {"accuracy", ind.accuracy}, {"latency_ms", ind.latency_ms}, {"rank", ind.rank}});
        doc = {{"mode", mode}, {"final_population", pop}, {"distributions", dists}, {"evaluations", sr.archive.size()}};
        std::printf("spos final population %zu, archive %zu, counting set %zu\n", sr.final_population.size(),
                    sr.archive.size(), counting.size());
    } else {
        throw ConfigError("unknown baseline mode: " + mode);
    }
    if (!out.empty()) write_file(fs::path(out) / ("baseline-" + mode + ".json"), doc.dump(1) + "\n");
    return kOk;
}

int cmd_space(const std::string& profile, bool as_json, const std::string& out) {
    const SearchSpace s = build_space(profile);
    if (as_json) {
        emit(out, space_to_json(s).dump(1) + "\n");
        return kOk;
    }
    std::printf("layers %zu\nsize %s\napprox %s\nlog10 %.4f\n", s.layer_count(), s.size().str().c_str(),
                scientific(s.size()).c_str(), s.log10_size());
    for (const auto& l : s.layers()) std::printf("  %2zu %-10s %zu candidates\n", l.index, l.stage_name.c_str(), l.candidates.size());
    return kOk;
}

int cmd_lut(const std::string& profile, std::uint64_t seed, const std::string& out) {
    const PipelineConfig cfg = [&] {
        auto c = PipelineConfig::for_profile(profile);
        c.seed = seed;
        return c;
    }();
    const SearchSpace s = build_space(profile);
    emit(out, lut_to_json(pipeline_table(cfg, s)).dump(1) + "\n");
    return kOk;
}

int cmd_matrix(const std::string& report, const std::string& out) {
    const StageReport rep = report_from_json(detail::read_json(report));
    if (rep.distributions.empty()) throw ConfigError(report + " holds no distributions");
    std::ostringstream os;
    write_distribution_matrix_csv(os, rep.distributions);
    emit(out, os.str());
    return kOk;
}

int cmd_tau(const std::string& run_dir, const std::string& out) {
    std::vector<StageReport> reports;
    for (int k = 1; fs::exists(fs::path(run_dir) / detail::stage_file(k)); ++k)
        reports.push_back(report_from_json(detail::read_json(fs::path(run_dir) / detail::stage_file(k))));
    if (reports.empty()) throw ConfigError("no stage reports under " + run_dir);
    std::ostringstream os;
    write_tau_csv(os, reports);
    emit(out, os.str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"padnas: progressive search-space design for one-shot NAS"};
    app.require_subcommand(1);

    std::string config, profile, out, resume, mode = "random", report, run_dir;
    std::optional<int> stop_after;
    std::size_t n = 5;
    bool as_json = false;
    std::uint64_t lut_seed_value = 0;
    BandOverride run_ov, base_ov;

    auto* run = app.add_subcommand("run", "Run the progressive pipeline");
    run->add_option("--config", config, "Pipeline config JSON")->check(CLI::ExistingFile);
    run->add_option("--profile", profile, "Built-in profile when no config is given (basic, large)");
    run->add_option("--out", out, "Output directory for reports");
    run->add_option("--resume", resume, "Resume the run persisted in this directory")->check(CLI::ExistingDirectory);
    run->add_option("--stop-after-stage", stop_after, "Stop once this stage is checkpointed");
    run_ov.add_to(run);

    auto* base = app.add_subcommand("baseline", "Run a baseline");
    base->add_option("--mode", mode, "random, spos or i-supernet")
        ->check(CLI::IsMember({"random", "spos", "i-supernet"}));
    base->add_option("--config", config, "Pipeline config JSON")->check(CLI::ExistingFile);
    base->add_option("--profile", profile, "Built-in profile when no config is given");
    base->add_option("--out", out, "Output directory");
    base->add_option("-n", n, "Sample count for random search")->check(CLI::PositiveNumber);
    base_ov.add_to(base);

    auto* space = app.add_subcommand("space", "Describe or export a search space");
    space->add_option("profile", profile, "basic, large or a profile file")->required();
    space->add_flag("--json", as_json, "Export the space as JSON");
    space->add_option("--out", out, "Output file (default stdout)");

    auto* lut = app.add_subcommand("lut", "Synthesize a latency table");
    lut->add_option("profile", profile, "basic or large")->required();
    lut->add_option("--seed", lut_seed_value, "Run seed the table is derived from");
    lut->add_option("--out", out, "Output file (default stdout)");

    auto* matrix = app.add_subcommand("matrix", "Operation-by-layer distribution CSV from a stage report");
    matrix->add_option("report", report, "stages/stage-k.json")->required()->check(CLI::ExistingFile);
    matrix->add_option("--out", out, "Output file (default stdout)");

    auto* tau = app.add_subcommand("tau", "Tau-per-stage CSV of a persisted run");
    tau->add_option("run_dir", run_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);
    tau->add_option("--out", out, "Output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*run) return cmd_run(config, profile, out, resume, stop_after, run_ov);
        if (*base) return cmd_baseline(mode, config, profile, out, n, base_ov);
        if (*space) return cmd_space(profile, as_json, out);
        if (*lut) return cmd_lut(profile, lut_seed_value, out);
        if (*matrix) return cmd_matrix(report, out);
        if (*tau) return cmd_tau(run_dir, out);
    } catch (const InfeasibleBandError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInfeasible;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const OracleError& e) {
        std::cerr << "oracle error: " << e.what() << "\n";
        return kOracle;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const CoverageError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
    return kOther;
}
