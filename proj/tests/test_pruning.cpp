#include "padnas/pruning.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace padnas;

namespace {

SearchSpace abc_space(std::size_t layers = 2) {
    std::map<std::string, Operation> cat;
    for (const auto& op : {Operation::ibconv(3, 1), Operation::ibconv(5, 1), Operation::ibconv(7, 1)}) cat.emplace(op.id, op);
    std::vector<LayerSpec> ls;
    for (std::size_t j = 0; j < layers; ++j) ls.push_back({j, "toy", true, false, {"IBConv_K3_E1", "IBConv_K5_E1", "IBConv_K7_E1"}});
    return SearchSpace(ls, cat);
}

const std::string A = "IBConv_K3_E1", B = "IBConv_K5_E1", C = "IBConv_K7_E1";

LayerDistribution dist(std::size_t j, std::map<std::string, double> p) { return {j, std::move(p), 100}; }

Individual ind(std::vector<std::string> arch, double acc, double lat) { return {Architecture{std::move(arch)}, acc, lat, 0, 0.0, 0}; }

}  // namespace

TEST(Pruning, HandCountedDistribution) {
    const auto s = abc_space();
    const std::vector<Architecture> archs = {Architecture{{A, A}}, Architecture{{A, B}}, Architecture{{B, B}},
                                             Architecture{{C, B}}};
    const auto d = estimate_distributions(archs, s);
    EXPECT_DOUBLE_EQ(d[0].probs.at(A), 0.5);
    EXPECT_DOUBLE_EQ(d[0].probs.at(B), 0.25);
    EXPECT_DOUBLE_EQ(d[0].probs.at(C), 0.25);
    EXPECT_DOUBLE_EQ(d[1].probs.at(B), 0.75);
    EXPECT_DOUBLE_EQ(d[1].probs.at(C), 0.0);
    EXPECT_EQ(d[0].support_count, 4u);
}

TEST(Pruning, SingleArchitectureIsPointMass) {
    const auto s = build_space("large");
    Rng rng(1);
    const std::vector<Architecture> one{sample_uniform(s, rng)};
    const auto d = estimate_distributions(one, s);
    for (std::size_t j = 0; j < s.layer_count(); ++j)
        for (const auto& [op, p] : d[j].probs) EXPECT_EQ(p, op == one[0][j] ? 1.0 : 0.0);
}

TEST(Pruning, DistributionErrors) {
    const auto s = abc_space();
    EXPECT_THROW(estimate_distributions(std::vector<Architecture>{}, s), ContractError);
    EXPECT_THROW(estimate_distributions(std::vector<Architecture>{Architecture{{A, "IBConv_K3_E6"}}}, s), ContractError);
}

TEST(Pruning, NormalizationOnRandomInputs) {
    const auto s = build_space("large");
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Architecture> archs;
        const std::size_t n = 1 + rng.index(200);
        for (std::size_t i = 0; i < n; ++i) archs.push_back(sample_uniform(s, rng));
        for (const auto& d : estimate_distributions(archs, s)) {
            double sum = 0;
            for (const auto& [op, p] : d.probs) {
                EXPECT_TRUE(s.layer(d.layer).contains(op));
                sum += p;
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(Pruning, InclusiveThreshold) {
    const auto s = abc_space(1);
    const std::vector<LayerDistribution> d{dist(0, {{A, 0.995}, {B, 0.005}, {C, 0.0}})};
    const auto [p, report] = prune_below_threshold(s, d, 0.01);
    EXPECT_EQ(p.layer(0).candidates, std::vector<std::string>{A});
    EXPECT_EQ(report.removed.size(), 2u);
    EXPECT_TRUE(report.floor_triggers.empty());

    const std::vector<LayerDistribution> exact{dist(0, {{A, 0.98}, {B, 0.01}, {C, 0.01}})};
    EXPECT_EQ(prune_below_threshold(s, exact, 0.01).first.layer(0).candidates, std::vector<std::string>{A});
}

TEST(Pruning, ZeroThresholdRemovesUnvisitedOnly) {
    const auto s = abc_space(1);
    const std::vector<LayerDistribution> d{dist(0, {{A, 0.5}, {B, 0.5}, {C, 0.0}})};
    const auto [p, report] = prune_below_threshold(s, d, 0.0);
    EXPECT_EQ(p.layer(0).candidates, (std::vector<std::string>{A, B}));
    ASSERT_EQ(report.removed.size(), 1u);
    EXPECT_EQ(report.removed[0].op, C);
}

TEST(Pruning, FloorKeepsArgmax) {
    const auto s = abc_space(2);
    const std::vector<LayerDistribution> d{dist(0, {{A, 0.002}, {B, 0.005}, {C, 0.003}}),
                                           dist(1, {{A, 0.4}, {B, 0.6}, {C, 0.0}})};
    const auto [p, report] = prune_below_threshold(s, d, 0.01);
    EXPECT_EQ(p.layer(0).candidates, std::vector<std::string>{B});
    EXPECT_EQ(report.floor_triggers, std::vector<std::size_t>{0});
    EXPECT_EQ(p.layer(1).candidates, (std::vector<std::string>{A, B}));
}

TEST(Pruning, FloorTieKeepsEarliestInMenuOrder) {
    const auto s = abc_space(1);
    const std::vector<LayerDistribution> d{dist(0, {{A, 0.0}, {B, 0.0}, {C, 0.0}})};
    EXPECT_EQ(prune_below_threshold(s, d, 0.01).first.layer(0).candidates, std::vector<std::string>{A});
}

TEST(Pruning, ReportPartitionsCandidates) {
    const auto s = build_space("large");
    Rng rng(3);
    std::vector<Architecture> archs;
    for (int i = 0; i < 64; ++i) archs.push_back(sample_uniform(s, rng));
    const auto d = estimate_distributions(archs, s);
    const auto [p, report] = prune_below_threshold(s, d, 0.01, 10);
    std::set<std::pair<std::size_t, std::string>> seen;
    for (const auto& r : report.removed) {
        EXPECT_LE(r.p, 0.01);
        EXPECT_TRUE(seen.insert({r.layer, r.op}).second);
    }
    for (const auto& k : report.kept) {
        EXPECT_TRUE(k.p > 0.01 || std::count(report.floor_triggers.begin(), report.floor_triggers.end(), k.layer));
        EXPECT_TRUE(seen.insert({k.layer, k.op}).second);
    }
    std::size_t total = 0;
    for (const auto& l : s.layers()) total += l.candidates.size();
    EXPECT_EQ(seen.size(), total);
    EXPECT_EQ(report.rank_cutoff, 10);
    EXPECT_TRUE(p.is_subspace_of(s));
    if (!report.removed.empty()) { EXPECT_LT(p.size(), s.size()); }
    // |archs| * P_th < 1: every counted architecture survives
    for (const auto& a : archs) EXPECT_TRUE(validate(p, a));
}

TEST(Pruning, NothingRemovedKeepsSize) {
    const auto s = abc_space(1);
    const std::vector<LayerDistribution> d{dist(0, {{A, 0.3}, {B, 0.3}, {C, 0.4}})};
    const auto [p, report] = prune_below_threshold(s, d, 0.01);
    EXPECT_EQ(p, s);
    EXPECT_TRUE(report.removed.empty());
    const auto diag = structural_constraint_check(p, s);
    EXPECT_TRUE(diag.constraints_ok);
    EXPECT_EQ(diag.log10_reduction, 0.0);
    EXPECT_EQ(diag.size, s.size());
}

TEST(Pruning, ThresholdContract) {
    const auto s = abc_space(1);
    const std::vector<LayerDistribution> d{dist(0, {{A, 1.0}})};
    EXPECT_THROW(prune_below_threshold(s, d, 1.0), ContractError);
    EXPECT_THROW(prune_below_threshold(s, d, -0.1), ContractError);
    EXPECT_THROW(prune_below_threshold(s, std::vector<LayerDistribution>{}, 0.01), ContractError);
}

TEST(Pruning, CountingSetCutoffAndDedup) {
    SearchResult r;
    // two fronts: {a,b} rank 1, {c} rank 2, d is a duplicate of a
    r.final_population = {ind({A}, 0.9, 10), ind({B}, 0.8, 5), ind({C}, 0.7, 8), ind({A}, 0.9, 10)};
    EXPECT_EQ(select_counting_set(r, 2).size(), 2u);
    EXPECT_EQ(select_counting_set(r, 3).size(), 3u);
    EXPECT_EQ(select_counting_set(r, 1).size(), 0u);
    r.archive = r.final_population;
    r.archive.push_back(ind({"Identity"}, 0.95, 1));
    EXPECT_EQ(select_counting_set(r, 2, CountingSource::Archive).size(), 1u);
    EXPECT_THROW(select_counting_set(r, 0), ContractError);
    EXPECT_THROW(select_counting_set(SearchResult{}, 10), ContractError);
}

TEST(Pruning, AllRankOneReturnsWholePopulation) {
    SearchResult r;
    for (int i = 0; i < 10; ++i) r.final_population.push_back(ind({std::to_string(i)}, 0.5 + i * 0.01, 1.0 + i));
    EXPECT_EQ(select_counting_set(r, 2).size(), 10u);
}

TEST(Pruning, JsonRoundTrip) {
    PruneReport r;
    r.threshold = 0.01;
    r.rank_cutoff = 10;
    r.removed = {{0, A, 0.005}};
    r.kept = {{0, B, 0.995}};
    r.floor_triggers = {3};
    const nlohmann::json j = r;
    const auto back = j.get<PruneReport>();
    EXPECT_EQ(back.removed.size(), 1u);
    EXPECT_EQ(back.kept[0].op, B);
    EXPECT_EQ(back.floor_triggers, std::vector<std::size_t>{3});
    const nlohmann::json dj = dist(2, {{A, 0.25}});
    const auto d = dj.get<LayerDistribution>();
    EXPECT_EQ(d.layer, 2u);
    EXPECT_EQ(d.probs.at(A), 0.25);
}
