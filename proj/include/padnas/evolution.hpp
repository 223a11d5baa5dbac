#pragma once

// Constrained evolutionary search: NSGA-II over (max accuracy, min latency)
// where variation never admits a latency-infeasible child, plus the
// accuracy-truncation EA used as a comparison baseline.

#include "padnas/common.hpp"
#include "padnas/latency.hpp"
#include "padnas/oracle.hpp"
#include "padnas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <thread>
#include <unordered_set>
#include <vector>

namespace padnas {

struct Individual {
    Architecture arch;
    double accuracy = 0.0;
    double latency_ms = 0.0;
    /// Nondomination rank, 1 = Pareto front. 0 until sorted.
    int rank = 0;
    double crowding = 0.0;
    /// Generation in which it was evaluated (0 = initial population).
    int iteration = 0;
};

struct CesConfig {
    std::size_t population_size = 64;
    std::size_t iterations = 40;
    double crossover_prob = 0.9;
    double mutation_prob = 0.1;
    double mutation_eta = 20.0;
    int retry_budget = 10;
    std::size_t tournament_size = 2;
    /// Rejection-sampling budget for the initial population, per slot.
    std::size_t init_max_factor = 1000;
    /// Accuracy-truncation baseline: parents kept per generation (0 = population / 4).
    std::size_t spos_topk = 0;
    /// Worker threads for oracle fan-out (local backends only).
    std::size_t threads = 1;
    std::uint64_t seed = 0;

    void check() const {
        if (population_size == 0 || population_size % 2 != 0)
            throw ConfigError("population_size must be even and positive");
        if (crossover_prob < 0 || crossover_prob > 1 || mutation_prob < 0 || mutation_prob > 1)
            throw ConfigError("probabilities must lie in [0, 1]");
        if (retry_budget < 1) throw ConfigError("retry_budget must be >= 1");
        if (tournament_size != 2) throw ConfigError("only binary tournaments are supported");
        if (mutation_eta < 0) throw ConfigError("mutation_eta must be >= 0");
    }

    bool operator==(const CesConfig&) const = default;
};

struct SearchResult {
    std::vector<Individual> final_population;
    /// Every evaluation, in evaluation order.
    std::vector<Individual> archive;
    /// Rank-1 set of the population after each generation (index 0 = initial).
    std::vector<std::vector<Individual>> snapshots;
};

//----------------------------------------------------------------------------//
// Dominance, sorting, crowding
//----------------------------------------------------------------------------//

/// a dominates b: latency no bigger, accuracy no lower, one of them strictly.
template <typename T>
bool dominates(const T& a, const T& b) noexcept {
    return a.latency_ms <= b.latency_ms && a.accuracy >= b.accuracy &&
           (a.latency_ms < b.latency_ms || a.accuracy > b.accuracy);
}

/// Fast non-dominated sort. Returns fronts as index lists, best first.
template <typename T>
std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const T> pop) {
    const std::size_t n = pop.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> count(n, 0);
    std::vector<std::vector<std::size_t>> fronts(1);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
            if (dominates(pop[p], pop[q])) {
                dominated[p].push_back(q);
                ++count[q];
            } else if (dominates(pop[q], pop[p])) {
                dominated[q].push_back(p);
                ++count[p];
            }
        }
    }
    for (std::size_t p = 0; p < n; ++p)
        if (count[p] == 0) fronts[0].push_back(p);
    while (!fronts.back().empty()) {
        std::vector<std::size_t> next;
        for (std::size_t p : fronts.back())
            for (std::size_t q : dominated[p])
                if (--count[q] == 0) next.push_back(q);
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(next));
    }
    fronts.pop_back();
    return fronts;
}

/// Sorts and writes the rank field (1-based).
inline std::vector<std::vector<std::size_t>> non_dominated_sort(std::vector<Individual>& pop) {
    auto fronts = non_dominated_sort(std::span<const Individual>(pop));
    for (std::size_t f = 0; f < fronts.size(); ++f)
        for (std::size_t i : fronts[f]) pop[i].rank = static_cast<int>(f + 1);
    return fronts;
}

/// Crowding distance of each member of a front, in input order.
template <typename T>
std::vector<double> crowding_distance(std::span<const T> front) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const std::size_t n = front.size();
    std::vector<double> d(n, 0.0);
    if (n <= 2) {
        std::fill(d.begin(), d.end(), inf);
        return d;
    }
    auto accumulate = [&](auto key) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return key(front[a]) < key(front[b]); });
        d[idx.front()] = inf;
        d[idx.back()] = inf;
        const double range = key(front[idx.back()]) - key(front[idx.front()]);
        if (range <= 0.0) return;
        for (std::size_t k = 1; k + 1 < n; ++k)
            d[idx[k]] += (key(front[idx[k + 1]]) - key(front[idx[k - 1]])) / range;
    };
    accumulate([](const T& x) { return x.latency_ms; });
    accumulate([](const T& x) { return x.accuracy; });
    return d;
}

/// Ranks and crowding for a whole population, in place.
inline std::vector<std::vector<std::size_t>> assign_rank_and_crowding(std::vector<Individual>& pop) {
    auto fronts = non_dominated_sort(pop);
    for (const auto& f : fronts) {
        std::vector<Individual> members;
        members.reserve(f.size());
        for (std::size_t i : f) members.push_back(pop[i]);
        const auto d = crowding_distance(std::span<const Individual>(members));
        for (std::size_t k = 0; k < f.size(); ++k) pop[f[k]].crowding = d[k];
    }
    return fronts;
}

//----------------------------------------------------------------------------//
// Variation
//----------------------------------------------------------------------------//

namespace detail {

/// Better by rank, then crowding; ties keep the first.
inline const Individual& binary_tournament(std::span<const Individual> pop, Rng& rng) {
    const Individual& a = pop[rng.index(pop.size())];
    const Individual& b = pop[rng.index(pop.size())];
    if (b.rank < a.rank || (b.rank == a.rank && b.crowding > a.crowding)) return b;
    return a;
}

inline Architecture two_point_crossover(const Architecture& a, const Architecture& b, Rng& rng) {
    const std::size_t len = a.size();
    std::size_t c1 = rng.index(len + 1), c2 = rng.index(len + 1);
    if (c1 == c2) {
        c1 = rng.index(len + 1);
        c2 = rng.index(len + 1);
    }
    if (c1 > c2) std::swap(c1, c2);
    Architecture child = a;
    for (std::size_t j = c1; j < c2; ++j) child.choices[j] = b.choices[j];
    return child;
}

/// Polynomial perturbation of a candidate index in [0, upper], rounded.
inline std::size_t polynomial_step(std::size_t index, std::size_t upper, double eta, Rng& rng) {
    const double x = static_cast<double>(index), ub = static_cast<double>(upper);
    const double d1 = x / ub, d2 = (ub - x) / ub;
    const double r = rng.unit();
    const double power = 1.0 / (eta + 1.0);
    double dq;
    if (r < 0.5) {
        const double val = 2.0 * r + (1.0 - 2.0 * r) * std::pow(1.0 - d1, eta + 1.0);
        dq = std::pow(val, power) - 1.0;
    } else {
        const double val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * std::pow(1.0 - d2, eta + 1.0);
        dq = 1.0 - std::pow(val, power);
    }
    const double y = std::clamp(std::round(x + dq * ub), 0.0, ub);
    return static_cast<std::size_t>(y);
}

inline Architecture polynomial_mutation(const Architecture& a, const SearchSpace& space, double prob,
                                        double eta, Rng& rng) {
    Architecture child = a;
    for (std::size_t j = 0; j < child.size(); ++j) {
        if (!rng.bernoulli(prob)) continue;
        const auto& cands = space.layer(j).candidates;
        if (cands.size() < 2) continue;
        const auto pos = space.layer(j).position(child[j]);
        if (!pos) continue;
        std::size_t next = polynomial_step(*pos, cands.size() - 1, eta, rng);
        if (next == *pos) next = polynomial_step(*pos, cands.size() - 1, eta, rng);
        child.choices[j] = cands[next];
    }
    return child;
}

inline bool admissible(const SearchSpace& space, const LatencyTable& table, const LatencyBand& band,
                       const Architecture& a) {
    return validate(space, a) && is_feasible(table, band, a);
}

}  // namespace detail

/// One child per population slot: tournament, two-point crossover, polynomial
/// index mutation, rejecting inadmissible candidates up to retry_budget times
/// before copying the tournament winner.
inline std::vector<Architecture> make_offspring(std::span<const Individual> parents, const CesConfig& cfg,
                                                const SearchSpace& space, const LatencyTable& table,
                                                const LatencyBand& band, Rng& rng) {
    if (parents.empty()) throw ContractError("make_offspring: empty parent population");
    std::vector<Architecture> children;
    children.reserve(cfg.population_size);
    while (children.size() < cfg.population_size) {
        const Individual* winner = nullptr;
        std::optional<Architecture> child;
        for (int attempt = 0; attempt < cfg.retry_budget && !child; ++attempt) {
            const Individual& a = detail::binary_tournament(parents, rng);
            winner = &a;
            Architecture cand = a.arch;
            if (rng.bernoulli(cfg.crossover_prob)) {
                const Individual& b = detail::binary_tournament(parents, rng);
                cand = detail::two_point_crossover(a.arch, b.arch, rng);
            }
            cand = detail::polynomial_mutation(cand, space, cfg.mutation_prob, cfg.mutation_eta, rng);
            if (detail::admissible(space, table, band, cand)) child = std::move(cand);
        }
        children.push_back(child ? std::move(*child) : winner->arch);
    }
    return children;
}

//----------------------------------------------------------------------------//
// Search drivers
//----------------------------------------------------------------------------//

namespace detail {

inline std::vector<double> fan_out(Oracle& oracle, std::span<const Architecture> archs, std::size_t threads) {
    if (threads <= 1 || archs.size() < 2 * threads || oracle.backend() == Backend::External)
        return oracle.accuracy_many(archs);
    std::vector<double> out(archs.size());
    const std::size_t chunk = (archs.size() + threads - 1) / threads;
    std::vector<std::jthread> workers;
    for (std::size_t begin = 0; begin < archs.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, archs.size());
        workers.emplace_back([&, begin, end] {
            auto part = oracle.accuracy_many(archs.subspan(begin, end - begin));
            std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
        });
    }
    workers.clear();
    return out;
}

inline std::vector<Individual> evaluate_all(Oracle& oracle, const LatencyTable& table,
                                            std::span<const Architecture> archs, int iteration,
                                            std::size_t threads) {
    const auto acc = fan_out(oracle, archs, threads);
    std::vector<Individual> out;
    out.reserve(archs.size());
    for (std::size_t i = 0; i < archs.size(); ++i)
        out.push_back({archs[i], acc[i], predict_latency(table, archs[i]), 0, 0.0, iteration});
    return out;
}

/// Up to population_size distinct feasible uniform samples.
inline std::vector<Architecture> initial_population(const SearchSpace& space, const LatencyTable& table,
                                                    const LatencyBand& band, const CesConfig& cfg,
                                                    Rng& rng) {
    table.check_coverage(space);
    std::vector<Architecture> pop;
    std::unordered_set<Architecture, ArchitectureHash> seen;
    const std::size_t budget = cfg.init_max_factor * cfg.population_size;
    for (std::size_t t = 0; t < budget && pop.size() < cfg.population_size; ++t) {
        Architecture a = sample_uniform(space, rng);
        if (!is_feasible(table, band, a)) continue;
        if (seen.insert(a).second) pop.push_back(std::move(a));
    }
    if (pop.empty()) {
        const auto [lo, hi] = latency_range(table, space);
        throw InfeasibleBandError(band.lat_min, band.lat_max, lo, hi);
    }
    return pop;
}

inline std::vector<Individual> unique_by_arch(std::vector<Individual> pool) {
    std::vector<Individual> out;
    std::unordered_set<Architecture, ArchitectureHash> seen;
    for (auto& ind : pool)
        if (seen.insert(ind.arch).second) out.push_back(std::move(ind));
    return out;
}

/// NSGA-II environmental selection: whole fronts, then the last front by
/// descending crowding (stable on pool order).
inline std::vector<Individual> select_next(std::vector<Individual> pool, std::size_t size) {
    const auto fronts = assign_rank_and_crowding(pool);
    std::vector<Individual> next;
    next.reserve(size);
    for (const auto& f : fronts) {
        if (next.size() + f.size() <= size) {
            for (std::size_t i : f) next.push_back(pool[i]);
            continue;
        }
        std::vector<std::size_t> order = f;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return pool[a].crowding > pool[b].crowding; });
        for (std::size_t k = 0; next.size() < size; ++k) next.push_back(pool[order[k]]);
        break;
    }
    return next;
}

inline std::vector<Individual> rank_one(const std::vector<Individual>& pop) {
    std::vector<Individual> out;
    for (const auto& ind : pop)
        if (ind.rank == 1) out.push_back(ind);
    return out;
}

}  // namespace detail

inline SearchResult ces_search(const SearchSpace& space, const LatencyTable& table, const LatencyBand& band,
                               Oracle& oracle, const CesConfig& cfg) {
    cfg.check();
    Rng rng(cfg.seed);
    SearchResult result;

    const auto init = detail::initial_population(space, table, band, cfg, rng);
    auto pop = detail::evaluate_all(oracle, table, init, 0, cfg.threads);
    result.archive = pop;
    assign_rank_and_crowding(pop);
    result.snapshots.push_back(detail::rank_one(pop));

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        const auto kids = make_offspring(pop, cfg, space, table, band, rng);
        auto children = detail::evaluate_all(oracle, table, kids, static_cast<int>(it), cfg.threads);
        result.archive.insert(result.archive.end(), children.begin(), children.end());

        std::vector<Individual> pool = std::move(pop);
        pool.insert(pool.end(), children.begin(), children.end());
        pool = detail::unique_by_arch(std::move(pool));
        pop = detail::select_next(std::move(pool), cfg.population_size);
        result.snapshots.push_back(detail::rank_one(pop));
    }
    result.final_population = std::move(pop);
    return result;
}

/// Accuracy-truncation EA: each generation keeps the top-k feasible
/// architectures by accuracy and breeds the next batch from them, half by
/// crossover and half by mutation.
inline SearchResult spos_search(const SearchSpace& space, const LatencyTable& table, const LatencyBand& band,
                                Oracle& oracle, const CesConfig& cfg) {
    cfg.check();
    Rng rng(cfg.seed);
    const std::size_t k = cfg.spos_topk ? cfg.spos_topk : std::max<std::size_t>(cfg.population_size / 4, 1);
    SearchResult result;

    auto by_accuracy = [](std::vector<Individual>& v) {
        std::stable_sort(v.begin(), v.end(), [](const Individual& a, const Individual& b) {
            if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
            return a.latency_ms < b.latency_ms;
        });
    };

    const auto init = detail::initial_population(space, table, band, cfg, rng);
    auto batch = detail::evaluate_all(oracle, table, init, 0, cfg.threads);
    result.archive = batch;
    auto top = detail::unique_by_arch(batch);
    by_accuracy(top);
    if (top.size() > k) top.resize(k);
    result.snapshots.push_back(top);

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        std::vector<Architecture> kids;
        kids.reserve(cfg.population_size);
        while (kids.size() < cfg.population_size) {
            const bool cross = kids.size() < cfg.population_size / 2;
            const Individual* parent = nullptr;
            std::optional<Architecture> child;
            for (int attempt = 0; attempt < cfg.retry_budget && !child; ++attempt) {
                parent = &top[rng.index(top.size())];
                Architecture cand = cross ? detail::two_point_crossover(
                                                parent->arch, top[rng.index(top.size())].arch, rng)
                                          : detail::polynomial_mutation(parent->arch, space, cfg.mutation_prob,
                                                                        cfg.mutation_eta, rng);
                if (detail::admissible(space, table, band, cand)) child = std::move(cand);
            }
            kids.push_back(child ? std::move(*child) : parent->arch);
        }
        auto children = detail::evaluate_all(oracle, table, kids, static_cast<int>(it), cfg.threads);
        result.archive.insert(result.archive.end(), children.begin(), children.end());
        std::vector<Individual> pool = std::move(top);
        pool.insert(pool.end(), children.begin(), children.end());
        top = detail::unique_by_arch(std::move(pool));
        by_accuracy(top);
        if (top.size() > k) top.resize(k);
        result.snapshots.push_back(top);
    }

    auto survivors = detail::unique_by_arch(result.archive);
    by_accuracy(survivors);
    if (survivors.size() > cfg.population_size) survivors.resize(cfg.population_size);
    assign_rank_and_crowding(survivors);
    result.final_population = std::move(survivors);
    return result;
}

}  // namespace padnas
