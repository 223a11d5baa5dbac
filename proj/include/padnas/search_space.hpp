#pragma once

// Layer-wise discrete operation search space: operation catalog, per-layer
// candidate menus with structural constraints, exact size, pruning edits and
// uniform sampling.

#include "padnas/common.hpp"

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <compare>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace padnas {

using BigInt = boost::multiprecision::cpp_int;

inline constexpr std::string_view kIdentityId = "Identity";

//----------------------------------------------------------------------------//
// Operation
//----------------------------------------------------------------------------//

struct Operation {
    std::string id;
    std::optional<int> kernel;
    std::optional<int> expansion;
    bool is_identity = false;

    static Operation identity() { return {std::string(kIdentityId), std::nullopt, std::nullopt, true}; }

    static Operation ibconv(int kernel, int expansion) {
        return {"IBConv_K" + std::to_string(kernel) + "_E" + std::to_string(expansion),
                kernel, expansion, false};
    }

    /// Parses "Identity" or "IBConv_K<k>_E<e>".
    static std::optional<Operation> from_id(std::string_view id) {
        if (id == kIdentityId) return identity();
        int k = 0, e = 0;
        char tail = 0;
        const std::string s(id);
        if (std::sscanf(s.c_str(), "IBConv_K%d_E%d%c", &k, &e, &tail) == 2 && k > 0 && e > 0 &&
            ibconv(k, e).id == s)
            return ibconv(k, e);
        return std::nullopt;
    }

    bool operator==(const Operation&) const = default;
};

/// Fixed menu order: ascending kernel, then expansion, Identity last.
inline bool menu_order_less(const Operation& a, const Operation& b) {
    if (a.is_identity != b.is_identity) return !a.is_identity;
    if (a.is_identity) return a.id < b.id;
    return std::tie(*a.kernel, *a.expansion, a.id) < std::tie(*b.kernel, *b.expansion, b.id);
}

//----------------------------------------------------------------------------//
// Architecture
//----------------------------------------------------------------------------//

/// One operation id per layer.
struct Architecture {
    std::vector<std::string> choices;

    std::size_t size() const noexcept { return choices.size(); }
    const std::string& operator[](std::size_t j) const { return choices[j]; }

    auto operator<=>(const Architecture&) const = default;
    bool operator==(const Architecture&) const = default;

    std::uint64_t hash() const noexcept {
        std::uint64_t h = 0x5eedULL ^ choices.size();
        for (const auto& c : choices) h = hash_mix(h, fnv1a64(c));
        return h;
    }

    std::string to_string() const {
        std::string out;
        for (std::size_t j = 0; j < choices.size(); ++j) {
            if (j) out += '|';
            out += choices[j];
        }
        return out;
    }
};

struct ArchitectureHash {
    std::size_t operator()(const Architecture& a) const noexcept {
        return static_cast<std::size_t>(a.hash());
    }
};

inline void to_json(nlohmann::json& j, const Architecture& a) { j = a.choices; }
inline void from_json(const nlohmann::json& j, Architecture& a) {
    a.choices = j.get<std::vector<std::string>>();
}

//----------------------------------------------------------------------------//
// LayerSpec / SearchSpace
//----------------------------------------------------------------------------//

struct LayerSpec {
    std::size_t index = 0;
    std::string stage_name;
    bool allows_identity = true;
    bool fixed_expansion_one = false;
    std::vector<std::string> candidates;

    bool contains(std::string_view op) const {
        return std::find(candidates.begin(), candidates.end(), op) != candidates.end();
    }

    std::optional<std::size_t> position(std::string_view op) const {
        auto it = std::find(candidates.begin(), candidates.end(), op);
        if (it == candidates.end()) return std::nullopt;
        return static_cast<std::size_t>(it - candidates.begin());
    }

    bool operator==(const LayerSpec&) const = default;
};

class SearchSpace {
public:
    SearchSpace() = default;

    /// Validates every LayerSpec invariant; throws ConfigError on violation.
    SearchSpace(std::vector<LayerSpec> layers, std::map<std::string, Operation> catalog)
        : layers_(std::move(layers)), catalog_(std::move(catalog)) {
        check_invariants();
    }

    std::size_t layer_count() const noexcept { return layers_.size(); }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    const LayerSpec& layer(std::size_t j) const { return layers_.at(j); }
    const std::map<std::string, Operation>& catalog() const noexcept { return catalog_; }

    const Operation& op(std::string_view id) const {
        auto it = catalog_.find(std::string(id));
        if (it == catalog_.end()) throw ContractError("unknown operation id: " + std::string(id));
        return it->second;
    }

    /// Exact product of per-layer candidate counts.
    BigInt size() const {
        BigInt n = 1;
        for (const auto& l : layers_) n *= l.candidates.size();
        return n;
    }

    /// log10 of size(), for reporting.
    double log10_size() const {
        double s = 0.0;
        for (const auto& l : layers_) s += std::log10(static_cast<double>(l.candidates.size()));
        return s;
    }

    /// True iff every layer of *this is a subset of the matching layer of other.
    bool is_subspace_of(const SearchSpace& other) const {
        if (other.layer_count() != layer_count()) return false;
        for (std::size_t j = 0; j < layers_.size(); ++j)
            for (const auto& c : layers_[j].candidates)
                if (!other.layers_[j].contains(c)) return false;
        return true;
    }

    bool operator==(const SearchSpace&) const = default;

    void check_invariants() const {
        for (std::size_t j = 0; j < layers_.size(); ++j) {
            const auto& l = layers_[j];
            const auto where = "layer " + std::to_string(j) + ": ";
            if (l.index != j) throw ConfigError(where + "index field mismatch");
            if (l.candidates.empty()) throw ConfigError(where + "empty candidate list");
            std::set<std::string> seen;
            for (const auto& c : l.candidates) {
                if (!seen.insert(c).second) throw ConfigError(where + "duplicate candidate " + c);
                auto it = catalog_.find(c);
                if (it == catalog_.end()) throw ConfigError(where + "unresolved op " + c);
                const Operation& op = it->second;
                if (op.is_identity && !l.allows_identity)
                    throw ConfigError(where + "identity not allowed");
                if (!op.is_identity && l.fixed_expansion_one && op.expansion != 1)
                    throw ConfigError(where + c + " violates fixed expansion 1");
            }
        }
        for (const auto& [id, op] : catalog_) {
            if (id != op.id) throw ConfigError("catalog key " + id + " != op id " + op.id);
            if (op.is_identity != (!op.kernel && !op.expansion))
                throw ConfigError("op " + id + ": identity iff kernel/expansion absent");
        }
    }

private:
    std::vector<LayerSpec> layers_;
    std::map<std::string, Operation> catalog_;
};

//----------------------------------------------------------------------------//
// Built-in profiles
//----------------------------------------------------------------------------//

namespace detail {

/// Searchable SBS blocks: (stage, repeat). Every block is searchable; the
/// first block of each stage forbids Identity, the first stage has expansion
/// fixed to 1.
struct StageRow {
    const char* name;
    int repeat;
};
inline constexpr StageRow kStages[] = {{"SBS-16", 1}, {"SBS-32", 4},  {"SBS-40", 4}, {"SBS-80", 4},
                                       {"SBS-96", 4}, {"SBS-192", 4}, {"SBS-320", 1}};

inline SearchSpace build_profile(std::span<const int> expansions) {
    std::map<std::string, Operation> catalog;
    std::vector<std::string> menu;
    for (int k : {3, 5, 7})
        for (int e : expansions) {
            auto op = Operation::ibconv(k, e);
            menu.push_back(op.id);
            catalog.emplace(op.id, op);
        }
    std::vector<std::string> first_menu;
    for (int k : {3, 5, 7}) {
        auto op = Operation::ibconv(k, 1);
        first_menu.push_back(op.id);
        catalog.emplace(op.id, op);
    }
    catalog.emplace(std::string(kIdentityId), Operation::identity());

    std::vector<LayerSpec> layers;
    bool first_stage = true;
    for (const auto& row : kStages) {
        for (int r = 0; r < row.repeat; ++r) {
            LayerSpec l;
            l.index = layers.size();
            l.stage_name = row.name;
            l.allows_identity = r != 0;
            l.fixed_expansion_one = first_stage;
            l.candidates = first_stage ? first_menu : menu;
            if (l.allows_identity) l.candidates.emplace_back(kIdentityId);
            layers.push_back(std::move(l));
        }
        first_stage = false;
    }
    return SearchSpace(std::move(layers), std::move(catalog));
}

}  // namespace detail

/// 6 IBConv ops (K in {3,5,7}, E in {3,6}) plus Identity.
inline SearchSpace basic_space() {
    static constexpr int kExp[] = {3, 6};
    return detail::build_profile(kExp);
}

/// 18 IBConv ops (K in {3,5,7}, E in 1..6) plus Identity.
inline SearchSpace large_space() {
    static constexpr int kExp[] = {1, 2, 3, 4, 5, 6};
    return detail::build_profile(kExp);
}

//----------------------------------------------------------------------------//
// JSON
//----------------------------------------------------------------------------//

inline void to_json(nlohmann::json& j, const Operation& op) {
    if (op.is_identity) {
        j = {{"identity", true}};
    } else {
        j = {{"kernel", *op.kernel}, {"expansion", *op.expansion}};
    }
}

inline nlohmann::json space_to_json(const SearchSpace& s) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : s.layers())
        layers.push_back({{"stage", l.stage_name},
                          {"allows_identity", l.allows_identity},
                          {"fixed_expansion_one", l.fixed_expansion_one},
                          {"candidates", l.candidates}});
    nlohmann::json catalog = nlohmann::json::object();
    for (const auto& [id, op] : s.catalog()) catalog[id] = op;
    return {{"layers", layers}, {"catalog", catalog}};
}

/// Parses a profile document. Catalog entries may be omitted for ids that
/// follow the "IBConv_K<k>_E<e>" / "Identity" naming.
inline SearchSpace space_from_json(const nlohmann::json& doc) {
    try {
        if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array())
            throw ConfigError("space profile: missing 'layers' array");
        std::map<std::string, Operation> catalog;
        if (doc.contains("catalog")) {
            for (const auto& [id, e] : doc["catalog"].items()) {
                Operation op;
                op.id = id;
                op.is_identity = e.value("identity", false);
                if (e.contains("kernel")) op.kernel = e["kernel"].get<int>();
                if (e.contains("expansion")) op.expansion = e["expansion"].get<int>();
                catalog.emplace(id, std::move(op));
            }
        }
        std::vector<LayerSpec> layers;
        for (const auto& jl : doc["layers"]) {
            LayerSpec l;
            l.index = layers.size();
            l.stage_name = jl.value("stage", std::string("layer-") + std::to_string(l.index));
            l.allows_identity = jl.value("allows_identity", true);
            l.fixed_expansion_one = jl.value("fixed_expansion_one", false);
            l.candidates = jl.at("candidates").get<std::vector<std::string>>();
            for (const auto& c : l.candidates) {
                if (catalog.count(c)) continue;
                auto parsed = Operation::from_id(c);
                if (!parsed) throw ConfigError("space profile: unresolved op id " + c);
                catalog.emplace(c, *parsed);
            }
            layers.push_back(std::move(l));
        }
        if (layers.empty()) throw ConfigError("space profile: no layers");
        return SearchSpace(std::move(layers), std::move(catalog));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed space profile: ") + e.what());
    }
}

//----------------------------------------------------------------------------//
// Operations
//----------------------------------------------------------------------------//

/// "basic", "large", or a path to a JSON profile file.
inline SearchSpace build_space(std::string_view profile) {
    if (profile == "basic") return basic_space();
    if (profile == "large") return large_space();
    const std::filesystem::path path(profile);
    if (!std::filesystem::is_regular_file(path))
        throw ConfigError("unknown space profile: " + std::string(profile));
    std::ifstream in(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed space profile " + path.string() + ": " + e.what());
    }
    return space_from_json(doc);
}

/// True iff every choice is a current candidate of its layer.
inline bool validate(const SearchSpace& space, const Architecture& arch) {
    if (arch.size() != space.layer_count())
        throw ContractError("architecture has " + std::to_string(arch.size()) +
                            " choices, space has " + std::to_string(space.layer_count()) +
                            " layers");
    for (std::size_t j = 0; j < arch.size(); ++j)
        if (!space.layer(j).contains(arch[j])) return false;
    return true;
}

inline Architecture sample_uniform(const SearchSpace& space, Rng& rng) {
    Architecture a;
    a.choices.reserve(space.layer_count());
    for (const auto& l : space.layers()) a.choices.push_back(l.candidates[rng.index(l.candidates.size())]);
    return a;
}

/// Returns a copy of space with op_id removed from the given layer.
inline SearchSpace prune_operation(const SearchSpace& space, std::size_t layer,
                                   std::string_view op_id) {
    if (layer >= space.layer_count())
        throw ContractError("prune_operation: layer " + std::to_string(layer) + " out of range");
    const auto& l = space.layer(layer);
    auto pos = l.position(op_id);
    if (!pos)
        throw ContractError("prune_operation: " + std::string(op_id) + " not in layer " +
                            std::to_string(layer));
    if (l.candidates.size() == 1)
        throw PruningFloorError("pruning floor: removing " + std::string(op_id) +
                                " would empty layer " + std::to_string(layer));
    auto layers = space.layers();
    layers[layer].candidates.erase(layers[layer].candidates.begin() +
                                   static_cast<std::ptrdiff_t>(*pos));
    return SearchSpace(std::move(layers), space.catalog());
}

inline BigInt space_size(const SearchSpace& space) { return space.size(); }

/// "d.dde<exp>" rendering with the given number of significant figures,
/// rounded half-up on the exact decimal digits.
inline std::string scientific(const BigInt& n, int sig = 3) {
    std::string digits = n.str();
    if (digits.size() <= static_cast<std::size_t>(sig)) {
        digits.append(static_cast<std::size_t>(sig) - digits.size() + 1, '0');
    }
    int exponent = static_cast<int>(n.str().size()) - 1;
    std::string head = digits.substr(0, static_cast<std::size_t>(sig));
    const bool round_up = digits[static_cast<std::size_t>(sig)] >= '5';
    if (round_up) {
        int i = sig - 1;
        while (i >= 0 && head[static_cast<std::size_t>(i)] == '9') head[static_cast<std::size_t>(i--)] = '0';
        if (i < 0) {
            head.insert(head.begin(), '1');
            head.pop_back();
            ++exponent;
        } else {
            ++head[static_cast<std::size_t>(i)];
        }
    }
    std::string out(1, head[0]);
    if (sig > 1) out += "." + head.substr(1);
    return out + "e" + std::to_string(exponent);
}

}  // namespace padnas
