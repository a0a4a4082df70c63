#pragma once

#include <cstdint>
#include <random>

namespace lcsid {

/// Portable random stream.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. The standard distributions are implementation-defined, so
/// the conversions are done here:
///   uniform01  = (bits >> 11) * 2^-53          in [0, 1)
///   uniform    = low + (high - low) * uniform01
///   normal     = Box-Muller on u1 = 1 - uniform01 (in (0,1]) and u2,
///                returning the cosine branch, then the cached sine branch.
/// The same seed therefore produces the same doubles on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform01();
    double uniform(double low, double high) { return low + (high - low) * uniform01(); }
    double normal();

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer; derives independent sub-seeds from (seed, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lcsid
