#ifndef GFFPERC_RNG_HPP
#define GFFPERC_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace gffperc {

// Philox4x32-10 (Salmon et al. 2011) block function.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
        const std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
        const std::uint32_t hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
        const std::uint32_t hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

enum class Purpose : std::uint32_t {
    Field = 1,
    Midpoint = 2,
    Walk = 3,
    Path = 4,
    Bootstrap = 5,
    Misc = 6,
};

// Stream keyed by (seed, replica, purpose); draws are a pure function of
// the key and the draw index.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint32_t replica, Purpose purpose)
        : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)}, replica_(replica),
          purpose_(static_cast<std::uint32_t>(purpose)) {}

    std::uint32_t next_u32() {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }
    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }
    // Uniform on [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    // Uniform on (0, 1].
    double uniform_pos() { return (double(next_u64() >> 11) + 1.0) * 0x1.0p-53; }
    // Uniform integer in [0, n), n > 0, without modulo bias.
    std::uint32_t below(std::uint32_t n) {
        const std::uint32_t limit = std::uint32_t(-n) % n;
        for (;;) {
            const std::uint64_t m = std::uint64_t(next_u32()) * n;
            if (std::uint32_t(m) >= limit) return std::uint32_t(m >> 32);
        }
    }
    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
        const double t = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

private:
    void refill() {
        buf_ = philox4x32({std::uint32_t(block_), std::uint32_t(block_ >> 32), replica_, purpose_}, key_);
        ++block_;
        pos_ = 0;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint32_t replica_;
    std::uint32_t purpose_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gffperc

#endif
