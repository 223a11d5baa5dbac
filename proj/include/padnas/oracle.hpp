#pragma once

// Accuracy objective behind one interface with three backends:
//  - synthetic:     deterministic ground-truth landscape ("stand-alone" accuracy)
//  - supernet-sim:  ground truth plus weight-coupling pseudo-noise whose per-layer
//                   scale grows with the layer's candidate count and decays with
//                   finetuning
//  - external:      remote evaluator over the wire protocol

#include "padnas/common.hpp"
#include "padnas/latency.hpp"
#include "padnas/search_space.hpp"
#include "padnas/wire.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace padnas {

enum class Backend { Synthetic, SupernetSim, External };

inline std::string to_string(Backend b) {
    switch (b) {
        case Backend::Synthetic: return "synthetic";
        case Backend::SupernetSim: return "supernet-sim";
        case Backend::External: return "external";
    }
    return "?";
}

inline Backend backend_from_string(std::string_view s) {
    if (s == "synthetic" || s == "synthetic-truth") return Backend::Synthetic;
    if (s == "supernet-sim") return Backend::SupernetSim;
    if (s == "external") return Backend::External;
    throw ConfigError("unknown oracle backend: " + std::string(s));
}

//----------------------------------------------------------------------------//
// Ground-truth landscape
//----------------------------------------------------------------------------//

/// Shape constants of the synthetic landscape.
struct LandscapeParams {
    /// Scale of the per-(layer, op) random preference.
    double unary_noise = 0.35;
    /// Scale of the adjacent-layer interaction term.
    double pair_noise = 0.12;
    /// Capacity around which the logistic squash is centred.
    double center_capacity = 1.45;
    /// Logistic temperature per sqrt(layer).
    double temperature = 1.5;

    bool operator==(const LandscapeParams&) const = default;
};

/// acc(arch) = 0.3 + 0.5 * logistic((raw - centre) / (temperature * sqrt(J)))
/// raw       = sum_j u_j(c_j) + sum_j v_j(c_j, c_{j+1})
/// u_j(op)   = w_j * capacity(op) + unary_noise * N(h(root, 'u', j, fnv(op)))
/// v_j(a, b) = pair_noise * N(h(root, 'v', j, fnv(a), fnv(b)))
/// w_j       = 0.5 + U(h(root, 'w', j)),  root = splitmix64(seed)
/// capacity  = 0 for Identity, ln(1 + E) * (1 + (K - 3) / 20) otherwise
///
/// h(...) folds its arguments with hash_mix; N and U are hash_normal and
/// hash_unit. Everything depends only on the seed, op ids and the catalog.
class Landscape {
public:
    static constexpr std::uint64_t kTagU = 'u', kTagV = 'v', kTagW = 'w', kTagNoise = 'e';

    Landscape(std::uint64_t seed, std::size_t layers, std::map<std::string, Operation> catalog,
              LandscapeParams params = {})
        : seed_(seed), root_(splitmix64(seed)), layers_(layers), catalog_(std::move(catalog)),
          params_(params) {
        weights_.reserve(layers_);
        for (std::size_t j = 0; j < layers_; ++j)
            weights_.push_back(0.5 + hash_unit(hash_all(root_, kTagW, j)));
        centre_ = 0.0;
        for (double w : weights_) centre_ += w * params_.center_capacity;
        scale_ = params_.temperature * std::sqrt(static_cast<double>(std::max<std::size_t>(layers_, 1)));
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t root() const noexcept { return root_; }
    std::size_t layers() const noexcept { return layers_; }
    const LandscapeParams& params() const noexcept { return params_; }

    static double capacity(const Operation& op) {
        if (op.is_identity) return 0.0;
        return std::log(1.0 + *op.expansion) * (1.0 + (*op.kernel - 3) / 20.0);
    }

    double unary(std::size_t j, const std::string& op) const {
        auto it = catalog_.find(op);
        if (it == catalog_.end()) throw ContractError("landscape: unknown op " + op);
        return weights_[j] * capacity(it->second) +
               params_.unary_noise * hash_normal(hash_all(root_, kTagU, j, fnv1a64(op)));
    }

    double pair(std::size_t j, const std::string& a, const std::string& b) const {
        return params_.pair_noise * hash_normal(hash_all(root_, kTagV, j, fnv1a64(a), fnv1a64(b)));
    }

    double raw(const Architecture& arch) const {
        if (arch.size() != layers_) throw ContractError("landscape: architecture length mismatch");
        double s = 0.0;
        for (std::size_t j = 0; j < layers_; ++j) s += unary(j, arch[j]);
        for (std::size_t j = 0; j + 1 < layers_; ++j) s += pair(j, arch[j], arch[j + 1]);
        return s;
    }

    double accuracy(const Architecture& arch) const {
        const double z = (raw(arch) - centre_) / scale_;
        return 0.3 + 0.5 / (1.0 + std::exp(-z));
    }

private:
    std::uint64_t seed_;
    std::uint64_t root_;
    std::size_t layers_;
    std::map<std::string, Operation> catalog_;
    LandscapeParams params_;
    std::vector<double> weights_;
    double centre_ = 0.0;
    double scale_ = 1.0;
};

//----------------------------------------------------------------------------//
// Oracle
//----------------------------------------------------------------------------//

struct OracleConfig {
    Backend backend = Backend::SupernetSim;
    std::uint64_t seed = 0;
    /// Coupling-noise scale per extra candidate in a layer.
    double sigma0 = 0.004;
    /// decay(E) = 1 / (1 + E / decay_epochs), E = cumulative training epochs.
    double decay_epochs = 80.0;
    LandscapeParams landscape;
    ExternalConfig external;

    bool operator==(const OracleConfig&) const = default;
};

struct Evaluation {
    Architecture architecture;
    double accuracy = 0.0;
    double latency_ms = 0.0;
    Backend source = Backend::Synthetic;
};

/// Serializable snapshot of the mutable oracle state.
struct OracleState {
    Backend backend = Backend::SupernetSim;
    std::uint64_t seed = 0;
    std::uint64_t version = 0;
    int epochs = 0;
    std::vector<double> sigma;
    SearchSpace bound;

    bool operator==(const OracleState&) const = default;
};

struct CacheStats {
    std::uint64_t queries = 0;
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
};

class Oracle {
public:
    Oracle(OracleConfig cfg, SearchSpace space)
        : cfg_(std::move(cfg)), bound_(std::move(space)),
          truth_(cfg_.seed, bound_.layer_count(), bound_.catalog(), cfg_.landscape) {
        if (cfg_.sigma0 < 0.0) throw ConfigError("sigma0 must be >= 0");
        if (cfg_.decay_epochs <= 0.0) throw ConfigError("decay_epochs must be > 0");
        if (cfg_.backend == Backend::External) {
            client_ = std::make_unique<EvaluatorClient>(cfg_.external);
            client_->hello(cfg_.seed, bound_);
        }
        recompute_sigma();
    }

    /// Attach an already-connected evaluator client (external backend only).
    Oracle(OracleConfig cfg, SearchSpace space, std::unique_ptr<EvaluatorClient> client)
        : cfg_(std::move(cfg)), bound_(std::move(space)),
          truth_(cfg_.seed, bound_.layer_count(), bound_.catalog(), cfg_.landscape),
          client_(std::move(client)) {
        if (cfg_.backend != Backend::External) throw ConfigError("client given to non-external oracle");
        client_->hello(cfg_.seed, bound_);
        recompute_sigma();
    }

    Backend backend() const noexcept { return cfg_.backend; }
    const OracleConfig& config() const noexcept { return cfg_; }
    const SearchSpace& bound_space() const noexcept { return bound_; }
    const Landscape& landscape() const noexcept { return truth_; }
    std::uint64_t version() const noexcept { return version_; }
    int epochs() const noexcept { return epochs_; }
    const std::vector<double>& sigma() const noexcept { return sigma_; }

    /// Ground truth; available whenever the landscape is local.
    double true_accuracy(const Architecture& arch) const {
        if (cfg_.backend == Backend::External)
            throw ContractError("true_accuracy is unavailable on the external backend");
        return truth_.accuracy(arch);
    }

    /// Deterministic coupling pseudo-noise for the current state version.
    double coupling_noise(const Architecture& arch) const {
        const std::uint64_t ah = arch.hash();
        double eps = 0.0;
        for (std::size_t j = 0; j < sigma_.size(); ++j)
            if (sigma_[j] > 0.0)
                eps += sigma_[j] * hash_normal(hash_all(truth_.root(), Landscape::kTagNoise, version_, j, ah));
        return eps;
    }

    double supernet_accuracy(const Architecture& arch) const {
        if (cfg_.backend != Backend::SupernetSim)
            throw ContractError("supernet_accuracy requires the supernet-sim backend");
        return std::clamp(truth_.accuracy(arch) + coupling_noise(arch), 0.0, 1.0);
    }

    /// Cached accuracy of the active backend.
    double accuracy(const Architecture& arch) {
        const std::vector<Architecture> one{arch};
        return accuracy_many(one).front();
    }

    /// Batched form; external requests are pipelined. Results are in input order.
    std::vector<double> accuracy_many(std::span<const Architecture> archs) {
        std::vector<double> out(archs.size());
        std::vector<std::size_t> missing;
        {
            std::lock_guard lock(mu_);
            for (std::size_t i = 0; i < archs.size(); ++i) {
                ++stats_.queries;
                if (auto it = cache_.find(archs[i]); it != cache_.end()) {
                    ++stats_.hits;
                    out[i] = it->second;
                } else {
                    missing.push_back(i);
                }
            }
        }
        if (missing.empty()) return out;
        for (std::size_t i : missing)
            if (!validate(bound_, archs[i]))
                throw ContractError("architecture not valid in bound space: " + archs[i].to_string());

        std::vector<double> computed(missing.size());
        if (cfg_.backend == Backend::External) {
            std::vector<Architecture> batch;
            std::vector<std::size_t> first_of;
            std::unordered_map<Architecture, std::size_t, ArchitectureHash> slot;
            for (std::size_t i : missing) {
                auto [it, fresh] = slot.try_emplace(archs[i], batch.size());
                if (fresh) batch.push_back(archs[i]);
                first_of.push_back(it->second);
            }
            const auto values = client_->evaluate(batch);
            for (std::size_t k = 0; k < missing.size(); ++k) computed[k] = values[first_of[k]];
        } else {
            for (std::size_t k = 0; k < missing.size(); ++k) computed[k] = backend_value(archs[missing[k]]);
        }

        std::lock_guard lock(mu_);
        for (std::size_t k = 0; k < missing.size(); ++k) {
            const std::size_t i = missing[k];
            auto [it, fresh] = cache_.try_emplace(archs[i], computed[k]);
            if (fresh) {
                ++stats_.misses;
            } else {
                ++stats_.hits;  // duplicate within this batch, or raced with another caller
            }
            out[i] = it->second;
        }
        return out;
    }

    Evaluation evaluate(const Architecture& arch, const LatencyTable& table) {
        return {arch, accuracy(arch), predict_latency(table, arch), cfg_.backend};
    }

    /// Initial supernet training: same as finetune, announced as "train".
    void train(int epochs) { advance(epochs, "train"); }

    void finetune(int epochs) { advance(epochs, "finetune"); }

    /// Inherit the landscape into a pruned sub-space; sigma follows the new
    /// candidate counts.
    void rebind_space(const SearchSpace& pruned) {
        if (pruned.layer_count() != bound_.layer_count())
            throw ContractError("rebind_space: layer count changed");
        for (const auto& l : pruned.layers())
            for (const auto& c : l.candidates)
                if (!bound_.layer(l.index).contains(c))
                    throw ContractError("rebind_space: op " + c + " not in bound layer " +
                                        std::to_string(l.index));
        bound_ = pruned;
        const auto old = sigma_;
        recompute_sigma();
        for (std::size_t j = 0; j < sigma_.size(); ++j) sigma_[j] = std::min(sigma_[j], old[j]);
        if (client_) client_->directive("rebind", 0, bound_);
        bump_version();
    }

    CacheStats stats() const {
        std::lock_guard lock(mu_);
        return stats_;
    }

    OracleState state() const {
        return {cfg_.backend, cfg_.seed, version_, epochs_, sigma_, bound_};
    }

    /// Restores a snapshot taken from an oracle with the same config.
    void restore(const OracleState& s) {
        if (s.backend != cfg_.backend || s.seed != cfg_.seed)
            throw CheckpointError("oracle snapshot does not match configuration");
        bound_ = s.bound;
        version_ = s.version;
        epochs_ = s.epochs;
        sigma_ = s.sigma;
        std::lock_guard lock(mu_);
        cache_.clear();
        stats_ = {};
    }

    void reset_stats() {
        std::lock_guard lock(mu_);
        stats_ = {};
    }

private:
    double backend_value(const Architecture& arch) const {
        switch (cfg_.backend) {
            case Backend::Synthetic: return truth_.accuracy(arch);
            case Backend::SupernetSim: return supernet_accuracy(arch);
            case Backend::External: break;
        }
        throw ContractError("backend_value on external backend");
    }

    double decay() const { return 1.0 / (1.0 + epochs_ / cfg_.decay_epochs); }

    void recompute_sigma() {
        sigma_.assign(bound_.layer_count(), 0.0);
        if (cfg_.backend != Backend::SupernetSim) return;
        for (std::size_t j = 0; j < sigma_.size(); ++j)
            sigma_[j] = cfg_.sigma0 * static_cast<double>(bound_.layer(j).candidates.size() - 1) * decay();
    }

    void advance(int epochs, const char* name) {
        if (epochs < 0) throw ContractError("finetune epochs must be >= 0");
        epochs_ += epochs;
        const auto old = sigma_;
        recompute_sigma();
        for (std::size_t j = 0; j < sigma_.size(); ++j) sigma_[j] = std::min(sigma_[j], old[j]);
        if (client_) client_->directive(name, epochs, bound_);
        bump_version();
    }

    void bump_version() {
        ++version_;
        std::lock_guard lock(mu_);
        cache_.clear();
    }

    OracleConfig cfg_;
    SearchSpace bound_;
    Landscape truth_;
    std::unique_ptr<EvaluatorClient> client_;
    std::uint64_t version_ = 0;
    int epochs_ = 0;
    std::vector<double> sigma_;
    mutable std::mutex mu_;
    std::unordered_map<Architecture, double, ArchitectureHash> cache_;
    CacheStats stats_;
};

}  // namespace padnas
