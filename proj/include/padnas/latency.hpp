#pragma once

// Lookup-table latency predictor and the latency feasibility band.

#include "padnas/common.hpp"
#include "padnas/search_space.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>

namespace padnas {

struct LatencyBand {
    double lat_min = 0.0;
    double lat_max = std::numeric_limits<double>::infinity();

    LatencyBand() = default;
    LatencyBand(double lo, double hi) : lat_min(lo), lat_max(hi) {
        if (!(lo >= 0.0) || !(lo <= hi))
            throw ConfigError("latency band requires 0 <= lat_min <= lat_max");
    }

    /// Closed at both ends.
    bool contains(double ms) const noexcept { return lat_min <= ms && ms <= lat_max; }
    bool operator==(const LatencyBand&) const = default;
};

class LatencyTable {
public:
    using Key = std::pair<std::size_t, std::string>;

    std::string device = "synthetic";
    int resolution = 224;
    /// Constant added to every prediction (stem/head); 0 unless specified.
    double fixed_overhead_ms = 0.0;

    void set(std::size_t layer, std::string op, double ms) {
        if (!(ms >= 0.0)) throw ConfigError("latency entries must be >= 0");
        entries_[{layer, std::move(op)}] = ms;
    }

    /// Identity is always covered (0 ms unless an entry says otherwise).
    bool has(std::size_t layer, const std::string& op) const {
        return op == kIdentityId || entries_.count({layer, op}) != 0;
    }

    double at(std::size_t layer, const std::string& op) const {
        auto it = entries_.find({layer, op});
        if (it != entries_.end()) return it->second;
        if (op == kIdentityId) return 0.0;
        throw CoverageError(layer, op);
    }

    const std::map<Key, double>& entries() const noexcept { return entries_; }
    std::size_t entry_count() const noexcept { return entries_.size(); }

    /// Throws CoverageError for the first uncovered (layer, candidate) of space.
    void check_coverage(const SearchSpace& space) const {
        for (const auto& l : space.layers())
            for (const auto& c : l.candidates) (void)at(l.index, c);
    }

    bool operator==(const LatencyTable&) const = default;

private:
    std::map<Key, double> entries_;
};

/// Sum over layers in index order, plus the fixed overhead.
inline double predict_latency(const LatencyTable& table, const Architecture& arch) {
    double ms = table.fixed_overhead_ms;
    for (std::size_t j = 0; j < arch.size(); ++j) ms += table.at(j, arch[j]);
    return ms;
}

inline bool is_feasible(const LatencyTable& table, const LatencyBand& band, const Architecture& arch) {
    return band.contains(predict_latency(table, arch));
}

/// Greedy per-layer minimum and maximum achievable latency in space.
inline std::pair<double, double> latency_range(const LatencyTable& table, const SearchSpace& space) {
    double lo = table.fixed_overhead_ms, hi = table.fixed_overhead_ms;
    for (const auto& l : space.layers()) {
        double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
        for (const auto& c : l.candidates) {
            const double v = table.at(l.index, c);
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        lo += mn;
        hi += mx;
    }
    return {lo, hi};
}

/// Rounds to 0.01 ms for reports.
inline double round_ms(double ms) { return std::round(ms * 100.0) / 100.0; }

//----------------------------------------------------------------------------//
// Synthetic table
//----------------------------------------------------------------------------//

/// Desk-scale stand-in for device profiling. For the "mbv2" kinds the cost of
/// an inverted-bottleneck block is proportional to its multiply-adds under the
/// supernet macro-structure; "uniform" gives every layer the same scale.
struct CostModel {
    enum class Kind { Mbv2Basic, Mbv2Large, Uniform };
    Kind kind = Kind::Uniform;
    double ms_per_mflop = 0.2;
    /// Uniform-kind cost of IBConv_K3_E1.
    double unit_ms = 1.0;
    /// Per-layer multiplicative jitter drawn from [1 - j, 1 + j].
    double layer_jitter = 0.1;
    double fixed_overhead_ms = 0.0;

    static CostModel for_profile(std::string_view profile) {
        CostModel m;
        if (profile == "basic") {
            m.kind = Kind::Mbv2Basic;
            m.ms_per_mflop = 0.148;
            m.fixed_overhead_ms = 6.0;
        } else if (profile == "large") {
            m.kind = Kind::Mbv2Large;
            m.ms_per_mflop = 0.235;
            m.fixed_overhead_ms = 6.0;
        }
        return m;
    }
};

namespace detail {

struct BlockGeometry {
    double in_res;
    double in_ch;
    double out_ch;
    int stride;
};

/// Geometry of every searchable block of the built-in macro-structure.
inline std::vector<BlockGeometry> mbv2_geometry(bool large_widths) {
    struct Row {
        double out_basic, out_large;
        int repeat, stride;
    };
    static constexpr Row rows[] = {{16, 16, 1, 1},   {32, 24, 4, 2}, {40, 40, 4, 2}, {80, 80, 4, 2},
                                   {96, 96, 4, 1},   {192, 192, 4, 2}, {320, 320, 1, 1}};
    std::vector<BlockGeometry> g;
    double res = 112.0;
    double ch = large_widths ? 16.0 : 32.0;
    for (const auto& r : rows) {
        const double out = large_widths ? r.out_large : r.out_basic;
        for (int i = 0; i < r.repeat; ++i) {
            const int stride = i == 0 ? r.stride : 1;
            g.push_back({res, ch, out, stride});
            res /= stride;
            ch = out;
        }
    }
    return g;
}

inline double ib_mflops(const BlockGeometry& g, int kernel, int expansion) {
    const double out_res = g.in_res / g.stride;
    const double mid = g.in_ch * expansion;
    const double expand = expansion == 1 ? 0.0 : g.in_res * g.in_res * g.in_ch * mid;
    const double depthwise = out_res * out_res * mid * kernel * kernel;
    const double project = out_res * out_res * mid * g.out_ch;
    return (expand + depthwise + project) / 1e6;
}

}  // namespace detail

inline LatencyTable synth_latency_table(const SearchSpace& space, const CostModel& model, Rng& rng) {
    LatencyTable t;
    t.device = "synthetic";
    t.fixed_overhead_ms = model.fixed_overhead_ms;
    std::vector<detail::BlockGeometry> geometry;
    if (model.kind != CostModel::Kind::Uniform) {
        geometry = detail::mbv2_geometry(model.kind == CostModel::Kind::Mbv2Large);
        if (geometry.size() != space.layer_count())
            throw ConfigError("mbv2 cost model needs " + std::to_string(geometry.size()) +
                              " layers, space has " + std::to_string(space.layer_count()));
    }
    for (const auto& l : space.layers()) {
        const double jitter = 1.0 + model.layer_jitter * (2.0 * rng.unit() - 1.0);
        for (const auto& c : l.candidates) {
            const Operation& op = space.op(c);
            double ms = 0.0;
            if (!op.is_identity) {
                const int k = *op.kernel, e = *op.expansion;
                if (geometry.empty()) {
                    ms = model.unit_ms * e * (1.0 + (k * k - 9) / 40.0);
                } else {
                    ms = model.ms_per_mflop * detail::ib_mflops(geometry[l.index], k, e);
                }
                ms *= jitter;
            }
            t.set(l.index, c, ms);
        }
    }
    return t;
}

//----------------------------------------------------------------------------//
// JSON
//----------------------------------------------------------------------------//

inline nlohmann::json lut_to_json(const LatencyTable& t) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [key, ms] : t.entries())
        entries.push_back({{"layer", key.first}, {"op", key.second}, {"ms", ms}});
    return {{"device", t.device},
            {"resolution", t.resolution},
            {"fixed_overhead_ms", t.fixed_overhead_ms},
            {"entries", entries}};
}

inline LatencyTable lut_from_json(const nlohmann::json& doc) {
    try {
        LatencyTable t;
        t.device = doc.value("device", std::string("unknown"));
        t.resolution = doc.value("resolution", 224);
        t.fixed_overhead_ms = doc.value("fixed_overhead_ms", 0.0);
        for (const auto& e : doc.at("entries"))
            t.set(e.at("layer").get<std::size_t>(), e.at("op").get<std::string>(),
                  e.at("ms").get<double>());
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed latency table: ") + e.what());
    }
}

inline LatencyTable load_lut(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open latency table " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed latency table " + path.string() + ": " + e.what());
    }
    return lut_from_json(doc);
}

}  // namespace padnas
