#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace ekisub {

/// Philox4x32-10 counter-based generator.
///
/// A (seed, stream) pair selects an independent sequence: the seed is the
/// 64-bit key, the stream id occupies the upper half of the 128-bit counter.
/// Satisfies UniformRandomBitGenerator.
class Philox {
public:
    using result_type = std::uint32_t;
    using Block = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    explicit Philox(std::uint64_t seed = 0, std::uint64_t stream = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in {0, ..., n-1}; n > 0.
    std::uint32_t uniform_index(std::uint32_t n);
    /// Standard normal via Box-Muller (second variate cached).
    double normal();

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    /// The raw 10-round bijection, exposed for known-answer tests.
    static Block bijection(Block counter, Key key);

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    Block buffer_{};
    int cursor_ = 4;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

}  // namespace ekisub
