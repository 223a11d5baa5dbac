#pragma once

// Metrics and plot-ready emitters.

#include "padnas/common.hpp"
#include "padnas/evolution.hpp"
#include "padnas/pruning.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace padnas {

//----------------------------------------------------------------------------//
// Kendall tau-b
//----------------------------------------------------------------------------//

struct RankedPair {
    double predicted = 0.0;
    double truth = 0.0;
};

namespace detail {

/// Merge sort of v counting inversions (pairs i < j with v[i] > v[j]).
inline std::uint64_t count_inversions(std::vector<double>& v, std::vector<double>& tmp, std::size_t lo,
                                      std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t inv = count_inversions(v, tmp, lo, mid) + count_inversions(v, tmp, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            inv += mid - i;
            tmp[k++] = v[j++];
        } else {
            tmp[k++] = v[i++];
        }
    }
    while (i < mid) tmp[k++] = v[i++];
    while (j < hi) tmp[k++] = v[j++];
    std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo), tmp.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return inv;
}

/// Sum over runs of equal values of t(t-1)/2; v must be sorted.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq&& equal) {
    std::uint64_t total = 0, run = 1;
    for (std::size_t i = 1; i < n; ++i) {
        if (equal(i - 1, i)) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total + run * (run - 1) / 2;
}

}  // namespace detail

/// Tie-corrected Kendall tau-b in O(n log n) (Knight's algorithm):
/// (concordant - discordant) / sqrt((n0 - ties_x) (n0 - ties_y)).
inline double kendall_tau(std::span<const RankedPair> pairs) {
    const std::size_t n = pairs.size();
    if (n < 2) throw ContractError("kendall_tau needs at least 2 pairs");
    std::vector<RankedPair> p(pairs.begin(), pairs.end());
    std::sort(p.begin(), p.end(), [](const RankedPair& a, const RankedPair& b) {
        return a.predicted != b.predicted ? a.predicted < b.predicted : a.truth < b.truth;
    });
    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const std::uint64_t ties_x = detail::tied_pairs(n, [&](std::size_t a, std::size_t b) {
        return p[a].predicted == p[b].predicted;
    });
    const std::uint64_t ties_xy = detail::tied_pairs(n, [&](std::size_t a, std::size_t b) {
        return p[a].predicted == p[b].predicted && p[a].truth == p[b].truth;
    });
    std::vector<double> y(n), tmp(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = p[i].truth;
    const std::uint64_t swaps = detail::count_inversions(y, tmp, 0, n);
    const std::uint64_t ties_y = detail::tied_pairs(n, [&](std::size_t a, std::size_t b) { return y[a] == y[b]; });
    if (ties_x == n0 || ties_y == n0) throw ContractError("kendall_tau undefined: a coordinate has zero variance");
    const auto diff = static_cast<std::int64_t>(n0 - ties_x - ties_y + ties_xy) - 2 * static_cast<std::int64_t>(swaps);
    return static_cast<double>(diff) /
           std::sqrt(static_cast<double>(n0 - ties_x) * static_cast<double>(n0 - ties_y));
}

inline double kendall_tau(std::span<const double> predicted, std::span<const double> truth) {
    if (predicted.size() != truth.size()) throw ContractError("kendall_tau: length mismatch");
    std::vector<RankedPair> p(predicted.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = {predicted[i], truth[i]};
    return kendall_tau(std::span<const RankedPair>(p));
}

//----------------------------------------------------------------------------//
// Pareto front
//----------------------------------------------------------------------------//

/// Non-dominated members, in input order.
template <typename T>
std::vector<T> pareto_front(std::span<const T> evals) {
    if (evals.empty()) throw ContractError("pareto_front: empty input");
    std::vector<T> out;
    for (std::size_t i = 0; i < evals.size(); ++i) {
        bool dominated = false;
        for (std::size_t k = 0; k < evals.size() && !dominated; ++k) dominated = k != i && dominates(evals[k], evals[i]);
        if (!dominated) out.push_back(evals[i]);
    }
    return out;
}

/// n members spread by equal index spacing after sorting by latency. Returns
/// all members when the front is smaller than n.
template <typename T>
std::vector<T> spread_sample(std::vector<T> front, std::size_t n) {
    std::stable_sort(front.begin(), front.end(), [](const T& a, const T& b) { return a.latency_ms < b.latency_ms; });
    if (front.size() <= n || n == 0) return front;
    std::vector<T> out;
    out.reserve(n);
    if (n == 1) {
        out.push_back(front.front());
        return out;
    }
    const double step = static_cast<double>(front.size() - 1) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(front[static_cast<std::size_t>(std::llround(step * static_cast<double>(i)))]);
    return out;
}

//----------------------------------------------------------------------------//
// Distribution variance across repeated runs
//----------------------------------------------------------------------------//

struct OpStatistic {
    std::size_t layer = 0;
    std::string op;
    double mean = 0.0;
    double variance = 0.0;
};

struct DistributionVariance {
    std::vector<OpStatistic> per_op;
    /// Mean of the per-op variances.
    double aggregate = 0.0;
};

inline DistributionVariance distribution_variance(std::span<const std::vector<LayerDistribution>> runs) {
    if (runs.size() < 2) throw ContractError("distribution_variance needs at least 2 runs");
    const auto& ref = runs.front();
    for (const auto& r : runs) {
        if (r.size() != ref.size()) throw ContractError("distribution_variance: layer count mismatch");
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (r[j].probs.size() != ref[j].probs.size())
                throw ContractError("distribution_variance: op set mismatch in layer " + std::to_string(j));
            for (const auto& [op, _] : ref[j].probs)
                if (!r[j].probs.count(op))
                    throw ContractError("distribution_variance: op " + op + " missing in a run");
        }
    }
    DistributionVariance out;
    const double m = static_cast<double>(runs.size());
    for (std::size_t j = 0; j < ref.size(); ++j) {
        for (const auto& [op, _] : ref[j].probs) {
            // shifted by the first run so identical inputs give exactly zero
            const double x0 = ref[j].probs.at(op);
            double shift = 0.0;
            for (const auto& r : runs) shift += r[j].probs.at(op) - x0;
            shift /= m;
            double ss = 0.0;
            for (const auto& r : runs) {
                const double d = r[j].probs.at(op) - x0 - shift;
                ss += d * d;
            }
            out.per_op.push_back({j, op, x0 + shift, ss / (m - 1.0)});
        }
    }
    if (!out.per_op.empty()) {
        double s = 0.0;
        for (const auto& o : out.per_op) s += o.variance;
        out.aggregate = s / static_cast<double>(out.per_op.size());
    }
    return out;
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(trials, 1/2). Ties
/// are expected to be dropped from trials by the caller.
inline double sign_test_p(std::size_t wins, std::size_t trials) {
    if (wins > trials) throw ContractError("sign_test_p: wins exceed trials");
    if (trials == 0 || wins == 0) return 1.0;
    const boost::math::binomial dist(static_cast<double>(trials), 0.5);
    return boost::math::cdf(boost::math::complement(dist, static_cast<double>(wins - 1)));
}

//----------------------------------------------------------------------------//
// Emitters
//----------------------------------------------------------------------------//

/// Operation-by-layer probability matrix; rows follow first appearance in
/// layer order, columns are layers.
inline void write_distribution_matrix_csv(std::ostream& os, std::span<const LayerDistribution> dists,
                                          const SearchSpace* menu_order = nullptr) {
    std::vector<std::string> ops;
    auto add = [&](const std::string& op) {
        if (std::find(ops.begin(), ops.end(), op) == ops.end()) ops.push_back(op);
    };
    if (menu_order) {
        std::vector<Operation> all;
        for (const auto& [id, op] : menu_order->catalog()) all.push_back(op);
        std::stable_sort(all.begin(), all.end(), menu_order_less);
        for (const auto& op : all) add(op.id);
    }
    for (const auto& d : dists)
        for (const auto& [op, _] : d.probs) add(op);
    os << "op";
    for (const auto& d : dists) os << ",layer" << d.layer;
    os << "\n";
    for (const auto& op : ops) {
        os << op;
        for (const auto& d : dists) {
            auto it = d.probs.find(op);
            os << ",";
            if (it != d.probs.end()) os << it->second;
        }
        os << "\n";
    }
}

inline void write_front_csv(std::ostream& os, std::span<const Individual> inds) {
    os << "arch,accuracy,latency_ms,rank,iteration\n";
    for (const auto& i : inds)
        os << i.arch.to_string() << "," << i.accuracy << "," << i.latency_ms << "," << i.rank << "," << i.iteration
           << "\n";
}

}  // namespace padnas
