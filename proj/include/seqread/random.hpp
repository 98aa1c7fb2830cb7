#pragma once
// Counter-based random streams (Philox4x32-10).
//
// Every Monte Carlo run owns a stream keyed by (master seed, domain, label,
// index), so the draws a run sees never depend on which worker executes it
// or in what order.

#include <array>
#include <cstdint>
#include <limits>

namespace seqread {

class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = std::uint64_t{kMulA} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMulB} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeylA;
            key[1] += kWeylB;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMulA = 0xD2511F53u;
    static constexpr std::uint32_t kMulB = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeylA = 0x9E3779B9u;
    static constexpr std::uint32_t kWeylB = 0xBB67AE85u;
};

// SplitMix64 finalizer; used only to spread seeds into Philox keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Stream domains keep the simulators from sharing draws for equal seeds.
enum class StreamDomain : std::uint32_t {
    first_passage = 1,
    decay = 2,
    charge_trajectory = 3,
    calibration = 4,
    test = 99,
};

// A UniformRandomBitGenerator producing 64-bit words from one Philox stream.
class CounterStream {
public:
    using result_type = std::uint64_t;

    CounterStream(std::uint64_t master_seed, StreamDomain domain, std::uint32_t label,
                  std::uint64_t index) noexcept {
        const std::uint64_t k =
            mix64(master_seed ^ mix64((std::uint64_t{static_cast<std::uint32_t>(domain)} << 32) | label));
        key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
        ctr_ = {0u, 0u, static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (pos_ == 2) refill();
        const result_type r = (std::uint64_t{block_[2 * pos_ + 1]} << 32) | block_[2 * pos_];
        ++pos_;
        return r;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Uniform double in (0, 1].
    double uniform_pos() noexcept { return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53; }

private:
    void refill() noexcept {
        block_ = Philox4x32::generate(ctr_, key_);
        if (++ctr_[0] == 0) ++ctr_[1];
        pos_ = 0;
    }

    Philox4x32::Key key_{};
    Philox4x32::Counter ctr_{};
    Philox4x32::Counter block_{};
    int pos_ = 2;
};

}  // namespace seqread
