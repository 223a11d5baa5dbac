#pragma once

// Per-layer operation frequency estimation from low-rank search results and
// threshold pruning of the search space.

#include "padnas/common.hpp"
#include "padnas/evolution.hpp"
#include "padnas/search_space.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

namespace padnas {

struct LayerDistribution {
    std::size_t layer = 0;
    /// Every current candidate of the layer, including those never counted.
    std::map<std::string, double> probs;
    std::size_t support_count = 0;

    bool operator==(const LayerDistribution&) const = default;
};

struct PruneDecision {
    std::size_t layer = 0;
    std::string op;
    double p = 0.0;

    bool operator==(const PruneDecision&) const = default;
};

struct PruneReport {
    std::vector<PruneDecision> removed;
    std::vector<PruneDecision> kept;
    double threshold = 0.0;
    int rank_cutoff = 0;
    /// Layers where every candidate fell at or below the threshold.
    std::vector<std::size_t> floor_triggers;
};

/// Which individuals of a search result are ranked and counted.
enum class CountingSource { FinalPopulation, Archive };

/// Unique architectures of rank < rank_cutoff, ranks recomputed over the
/// selected individuals.
inline std::vector<Architecture> select_counting_set(const SearchResult& result, int rank_cutoff,
                                                     CountingSource source = CountingSource::FinalPopulation) {
    if (rank_cutoff < 1) throw ContractError("rank_cutoff must be >= 1");
    const auto& src = source == CountingSource::Archive ? result.archive : result.final_population;
    if (src.empty()) throw ContractError("select_counting_set: empty search result");
    auto pool = detail::unique_by_arch(src);
    non_dominated_sort(pool);
    std::vector<Architecture> out;
    for (const auto& ind : pool)
        if (ind.rank < rank_cutoff) out.push_back(ind.arch);
    return out;
}

inline std::vector<LayerDistribution> estimate_distributions(std::span<const Architecture> archs,
                                                             const SearchSpace& space) {
    if (archs.empty()) throw ContractError("estimate_distributions: no architectures");
    std::vector<LayerDistribution> out(space.layer_count());
    for (std::size_t j = 0; j < space.layer_count(); ++j) {
        out[j].layer = j;
        out[j].support_count = archs.size();
        for (const auto& c : space.layer(j).candidates) out[j].probs[c] = 0.0;
    }
    std::vector<std::map<std::string, std::size_t>> counts(space.layer_count());
    for (const auto& a : archs) {
        if (!validate(space, a))
            throw ContractError("estimate_distributions: architecture not valid: " + a.to_string());
        for (std::size_t j = 0; j < a.size(); ++j) ++counts[j][a[j]];
    }
    const double n = static_cast<double>(archs.size());
    for (std::size_t j = 0; j < counts.size(); ++j)
        for (const auto& [op, c] : counts[j]) out[j].probs[op] = static_cast<double>(c) / n;
    return out;
}

/// Removes every candidate with p <= threshold, keeping at least the layer's
/// highest-probability candidate (earliest in menu order on ties).
inline std::pair<SearchSpace, PruneReport> prune_below_threshold(const SearchSpace& space,
                                                                 std::span<const LayerDistribution> dists,
                                                                 double threshold, int rank_cutoff = 0) {
    if (threshold < 0.0 || threshold >= 1.0) throw ContractError("P_th must lie in [0, 1)");
    if (dists.size() != space.layer_count()) throw ContractError("distributions do not cover every layer");
    PruneReport report;
    report.threshold = threshold;
    report.rank_cutoff = rank_cutoff;
    auto layers = space.layers();
    for (std::size_t j = 0; j < layers.size(); ++j) {
        const auto& cands = space.layer(j).candidates;
        auto prob = [&](const std::string& op) {
            auto it = dists[j].probs.find(op);
            return it == dists[j].probs.end() ? 0.0 : it->second;
        };
        std::string best = cands.front();
        for (const auto& c : cands)
            if (prob(c) > prob(best)) best = c;
        const bool all_low =
            std::all_of(cands.begin(), cands.end(), [&](const std::string& c) { return prob(c) <= threshold; });
        if (all_low) report.floor_triggers.push_back(j);
        std::vector<std::string> survivors;
        for (const auto& c : cands) {
            const double p = prob(c);
            if (p > threshold || (all_low && c == best)) {
                survivors.push_back(c);
                report.kept.push_back({j, c, p});
            } else {
                report.removed.push_back({j, c, p});
            }
        }
        layers[j].candidates = std::move(survivors);
    }
    return {SearchSpace(std::move(layers), space.catalog()), std::move(report)};
}

struct SpaceDiagnostics {
    bool constraints_ok = true;
    std::string message;
    BigInt size;
    double log10_size = 0.0;
    /// log10(before) - log10(after).
    double log10_reduction = 0.0;
};

inline SpaceDiagnostics structural_constraint_check(const SearchSpace& pruned, const SearchSpace& before) {
    SpaceDiagnostics d;
    try {
        pruned.check_invariants();
        if (!pruned.is_subspace_of(before)) {
            d.constraints_ok = false;
            d.message = "pruned space is not a sub-space of its input";
        }
    } catch (const ConfigError& e) {
        d.constraints_ok = false;
        d.message = e.what();
    }
    d.size = pruned.size();
    d.log10_size = pruned.log10_size();
    d.log10_reduction = before.log10_size() - d.log10_size;
    return d;
}

//----------------------------------------------------------------------------//
// JSON
//----------------------------------------------------------------------------//

inline void to_json(nlohmann::json& j, const LayerDistribution& d) {
    j = {{"layer", d.layer}, {"probs", d.probs}, {"support_count", d.support_count}};
}
inline void from_json(const nlohmann::json& j, LayerDistribution& d) {
    d.layer = j.at("layer").get<std::size_t>();
    d.probs = j.at("probs").get<std::map<std::string, double>>();
    d.support_count = j.at("support_count").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const PruneDecision& d) { j = {{"layer", d.layer}, {"op", d.op}, {"p", d.p}}; }
inline void from_json(const nlohmann::json& j, PruneDecision& d) {
    d.layer = j.at("layer").get<std::size_t>();
    d.op = j.at("op").get<std::string>();
    d.p = j.at("p").get<double>();
}

inline void to_json(nlohmann::json& j, const PruneReport& r) {
    j = {{"removed", r.removed},
         {"kept", r.kept},
         {"threshold", r.threshold},
         {"rank_cutoff", r.rank_cutoff},
         {"floor_triggers", r.floor_triggers}};
}
inline void from_json(const nlohmann::json& j, PruneReport& r) {
    r.removed = j.at("removed").get<std::vector<PruneDecision>>();
    r.kept = j.at("kept").get<std::vector<PruneDecision>>();
    r.threshold = j.at("threshold").get<double>();
    r.rank_cutoff = j.at("rank_cutoff").get<int>();
    r.floor_triggers = j.at("floor_triggers").get<std::vector<std::size_t>>();
}

}  // namespace padnas
