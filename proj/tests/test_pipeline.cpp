#include "padnas/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace padnas;
namespace fs = std::filesystem;

namespace {

PipelineConfig quick(const std::string& profile, int stages, std::uint64_t seed) {
    auto c = PipelineConfig::for_profile(profile, stages);
    c.ces.population_size = 16;
    c.ces.iterations = 5;
    c.seed = seed;
    return c;
}

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::path(PADNAS_TEST_TMP) / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Every file below root except timing.json, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != "timing.json")
            out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

}  // namespace

TEST(Schedule, TotalsAndShape) {
    for (int m = 2; m <= 6; ++m) {
        const auto s = default_schedule(m);
        ASSERT_EQ(s.size(), static_cast<std::size_t>(m - 1));
        if (m <= 4) {
            int total = 0;
            for (const auto& x : s) total += x.epochs;
            EXPECT_EQ(total, 240) << m;
        }
        EXPECT_EQ(s.front().lr, 0.5);
    }
    EXPECT_EQ(default_schedule(4), (std::vector<FinetuneStep>{{120, 0.5}, {80, 0.1}, {40, 0.1}}));
}

TEST(Config, JsonRoundTripAndHash) {
    auto c = quick("large", 3, 9);
    c.oracle.sigma0 = 0.002;
    c.counting = CountingSource::Archive;
    const auto back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    auto d = c;
    d.p_th = 0.02;
    EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, Validation) {
    auto c = quick("basic", 3, 1);
    c.stages = 1;
    EXPECT_THROW(c.check(), ConfigError);
    c = quick("basic", 3, 1);
    c.schedule.pop_back();
    EXPECT_THROW(c.check(), ConfigError);
    c = quick("basic", 3, 1);
    c.p_th = 1.0;
    EXPECT_THROW(c.check(), ConfigError);
    EXPECT_THROW(load_config(fs::path(PADNAS_TEST_TMP) / "missing.json"), ConfigError);
}

TEST(FrontierPool, ExtendsByWholeFronts) {
    std::vector<Individual> pop;
    for (int r = 1; r <= 4; ++r)
        for (int i = 0; i < 4; ++i) pop.push_back({Architecture{{std::to_string(r * 10 + i)}}, 0.5, 1.0 * i, r, 0.0, 0});
    EXPECT_EQ(frontier_pool(pop, 3).size(), 4u);
    EXPECT_EQ(frontier_pool(pop, 5).size(), 8u);
    EXPECT_EQ(frontier_pool(pop, 100).size(), 16u);
}

TEST(Pipeline, TwoStagesHaveNoPruning) {
    const auto r = run_pipeline(quick("basic", 2, 1));
    ASSERT_EQ(r.reports.size(), 2u);
    EXPECT_EQ(r.reports[0].kind, "initial-training");
    EXPECT_EQ(r.reports[1].kind, "final-search");
    for (const auto& rep : r.reports) EXPECT_FALSE(rep.prune);
    EXPECT_EQ(r.final_space, build_space("basic"));
    EXPECT_EQ(r.space_chain.size(), 1u);
}

TEST(Pipeline, ChainAccountingAndBest) {
    const auto cfg = quick("large", 4, 2);
    const auto r = run_pipeline(cfg);
    ASSERT_EQ(r.reports.size(), 4u);
    ASSERT_EQ(r.space_chain.size(), 3u);
    for (std::size_t i = 0; i + 1 < r.space_chain.size(); ++i)
        EXPECT_TRUE(r.space_chain[i + 1].is_subspace_of(r.space_chain[i]));
    EXPECT_EQ(r.final_space, r.space_chain.back());
    for (const auto& rep : r.reports) {
        EXPECT_EQ(rep.accounting.queries, rep.accounting.cache_hits + rep.accounting.evaluations);
        if (rep.kind != "initial-training") {
            EXPECT_EQ(rep.accounting.budget, 16u * 6u);
            EXPECT_LE(rep.accounting.evaluations, rep.accounting.budget);
            EXPECT_TRUE(rep.tau);
            EXPECT_FALSE(rep.front.empty());
        }
        if (rep.prune) { EXPECT_LE(rep.output_log10_size, rep.input_log10_size); }
    }
    const auto table = pipeline_table(cfg, build_space("large"));
    ASSERT_EQ(r.best.size(), cfg.top_n);
    for (const auto& b : r.best) {
        EXPECT_TRUE(validate(r.final_space, b.arch));
        EXPECT_TRUE(cfg.band.contains(predict_latency(table, b.arch)));
        EXPECT_TRUE(b.true_accuracy);
    }
    const auto taus = tau_pipeline_report(r.reports, cfg.tau_sample);
    for (std::size_t i = 0; i < taus.size(); ++i) EXPECT_EQ(taus[i], r.reports[i].tau);
}

TEST(Pipeline, DeterministicReports) {
    const auto a = fresh_dir("det-a"), b = fresh_dir("det-b");
    auto cfg = quick("basic", 3, 5);
    cfg.output_dir = a.string();
    run_pipeline(cfg);
    cfg.output_dir = b.string();
    run_pipeline(cfg);
    const auto ta = tree(a), tb = tree(b);
    EXPECT_EQ(ta, tb);
    EXPECT_TRUE(ta.count("summary.json"));
    EXPECT_TRUE(fs::exists(a / "timing.json"));
}

TEST(Pipeline, ResumeAtEveryBoundaryIsIdentical) {
    const auto ref = fresh_dir("resume-ref");
    auto cfg = quick("large", 4, 8);
    cfg.output_dir = ref.string();
    const auto full = run_pipeline(cfg);
    const auto expected = tree(ref);
    for (int stop = 1; stop < cfg.stages; ++stop) {
        const auto dir = fresh_dir("resume-" + std::to_string(stop));
        cfg.output_dir = dir.string();
        RunOptions first;
        first.stop_after_stage = stop;
        const auto partial = run_pipeline(cfg, first);
        EXPECT_EQ(partial.reports.size(), static_cast<std::size_t>(stop));
        EXPECT_FALSE(fs::exists(dir / "summary.json"));
        RunOptions again;
        again.resume = true;
        const auto resumed = run_pipeline(cfg, again);
        EXPECT_EQ(tree(dir), expected) << "stopped after stage " << stop;
        EXPECT_EQ(resumed.final_space, full.final_space);
        EXPECT_EQ(resumed.space_chain, full.space_chain);
    }
}

TEST(Pipeline, ResumeRejectsChangedConfig) {
    const auto dir = fresh_dir("resume-hash");
    auto cfg = quick("basic", 3, 3);
    cfg.output_dir = dir.string();
    RunOptions first;
    first.stop_after_stage = 1;
    run_pipeline(cfg, first);
    cfg.p_th = 0.05;
    RunOptions again;
    again.resume = true;
    EXPECT_THROW(run_pipeline(cfg, again), CheckpointError);
    fs::remove(dir / "run_state.json");
    EXPECT_THROW(run_pipeline(cfg, again), CheckpointError);
}

TEST(Pipeline, ZeroNoiseMatchesSyntheticBackend) {
    auto a = quick("basic", 3, 4);
    a.oracle.sigma0 = 0.0;
    auto b = a;
    b.oracle.backend = Backend::Synthetic;
    const auto ra = run_pipeline(a), rb = run_pipeline(b);
    ASSERT_EQ(ra.best.size(), rb.best.size());
    for (std::size_t i = 0; i < ra.best.size(); ++i) {
        EXPECT_EQ(ra.best[i].arch, rb.best[i].arch);
        EXPECT_EQ(ra.best[i].accuracy, rb.best[i].accuracy);
    }
    EXPECT_EQ(ra.final_space, rb.final_space);
    for (const auto& rep : ra.reports)
        if (rep.tau) { EXPECT_DOUBLE_EQ(*rep.tau, 1.0); }
}

TEST(Pipeline, InfeasibleBandNamesStage) {
    auto cfg = quick("basic", 3, 1);
    cfg.band = LatencyBand(1000, 1100);
    try {
        run_pipeline(cfg);
        FAIL() << "expected InfeasibleBandError";
    } catch (const InfeasibleBandError& e) {
        EXPECT_NE(std::string(e.what()).find("stage 2"), std::string::npos) << e.what();
    }
}

TEST(Pipeline, TauCsv) {
    StageReport a;
    a.stage = 1;
    a.kind = "initial-training";
    a.input_log10_size = 2.5;
    StageReport b = a;
    b.stage = 2;
    b.kind = "final-search";
    b.tau = 0.5;
    std::ostringstream os;
    write_tau_csv(os, {a, b});
    EXPECT_EQ(os.str(), "stage,kind,log10_size,tau\n1,initial-training,2.5,\n2,final-search,2.5,0.5\n");
}

TEST(Pipeline, RandomSearchBaseline) {
    const auto s = build_space("basic");
    const auto cfg = quick("basic", 2, 1);
    const auto table = pipeline_table(cfg, s);
    OracleConfig oc;
    oc.backend = Backend::Synthetic;
    Oracle o(oc, s);
    Rng rng(1);
    const auto evals = random_search_baseline(s, table, cfg.band, o, 25, rng);
    ASSERT_EQ(evals.size(), 25u);
    for (const auto& e : evals) EXPECT_TRUE(cfg.band.contains(e.latency_ms));
    EXPECT_THROW(random_search_baseline(s, table, LatencyBand(1000, 1001), o, 2, rng), InfeasibleBandError);
    const std::vector<double> xs{1, 2, 3};
    EXPECT_DOUBLE_EQ(summarize(xs).mean, 2.0);
}
