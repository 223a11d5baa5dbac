#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace padnas {

//----------------------------------------------------------------------------//
// Errors
//----------------------------------------------------------------------------//

/// Base of every error thrown by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration, unknown profile, malformed input file.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Contract violation on an operation input (length mismatch, absent op...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Removing an operation would leave a layer without candidates.
class PruningFloorError : public ContractError {
public:
    using ContractError::ContractError;
};

/// A latency table lacks an entry for a (layer, op) pair that was queried.
class CoverageError : public Error {
public:
    CoverageError(std::size_t layer, std::string op)
        : Error("latency table has no entry for layer " + std::to_string(layer) +
                ", op " + op),
          layer_(layer), op_(std::move(op)) {}
    std::size_t layer() const noexcept { return layer_; }
    const std::string& op() const noexcept { return op_; }

private:
    std::size_t layer_;
    std::string op_;
};

/// No architecture satisfying the latency band could be found.
class InfeasibleBandError : public Error {
public:
    InfeasibleBandError(double lat_min, double lat_max, double achievable_min,
                        double achievable_max, const std::string& context = "")
        : Error(context + describe(lat_min, lat_max, achievable_min, achievable_max)),
          achievable_min_(achievable_min), achievable_max_(achievable_max) {}
    double achievable_min() const noexcept { return achievable_min_; }
    double achievable_max() const noexcept { return achievable_max_; }

private:
    static std::string describe(double lo, double hi, double amin, double amax) {
        std::ostringstream os;
        os << "infeasible band [" << lo << ", " << hi
           << "] ms; achievable latency range is [" << amin << ", " << amax << "] ms";
        return os.str();
    }
    double achievable_min_;
    double achievable_max_;
};

/// Evaluator backend or transport failure.
class OracleError : public Error {
public:
    using Error::Error;
};

/// Wire protocol violation (version mismatch, malformed record). Fatal.
class ProtocolError : public OracleError {
public:
    using OracleError::OracleError;
};

/// Resume state unreadable or inconsistent with the configuration.
class CheckpointError : public Error {
public:
    using Error::Error;
};

//----------------------------------------------------------------------------//
// Hashing
//
// All seeded pseudo-randomness that must be independent of call order is
// derived from these two primitives. External evaluators reproduce the
// synthetic oracle from them, so they are frozen.
//----------------------------------------------------------------------------//

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a, 64 bit.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t hash_mix(std::uint64_t h, std::uint64_t v) noexcept {
    return splitmix64(h ^ v);
}

template <typename... Ts>
constexpr std::uint64_t hash_all(std::uint64_t h, Ts... vs) noexcept {
    ((h = hash_mix(h, static_cast<std::uint64_t>(vs))), ...);
    return h;
}

/// Uniform in [0, 1) with 53 bits.
constexpr double hash_unit(std::uint64_t h) noexcept {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Standard normal from a hash via Box-Muller on two derived uniforms.
inline double hash_normal(std::uint64_t h) noexcept {
    const double u1 = (static_cast<double>(splitmix64(h ^ 1) >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = hash_unit(splitmix64(h ^ 2));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

//----------------------------------------------------------------------------//
// Random stream
//----------------------------------------------------------------------------//

/// Seeded stream with platform-independent derived draws. The engine is
/// std::mt19937_64 (fully specified by the standard); the distributions are
/// implemented here because the std ones are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below(0)");
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(below(n)); }

    /// Uniform in [0, 1).
    double unit() { return hash_unit(engine_()); }

    bool bernoulli(double p) { return unit() < p; }

    /// Serialized engine state, restorable with load().
    std::string save() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void load(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
        if (!is) throw CheckpointError("unreadable rng state");
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace padnas
