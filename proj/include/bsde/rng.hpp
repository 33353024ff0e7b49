#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace bsde {

// Counter-based random numbers (Philox4x32-10, Salmon et al. 2011).
//
// Every draw is addressed by (seed, path, step, slot), so a path's randomness
// is a pure function of those indices and never depends on how paths are
// scheduled across worker threads. Simulation, replay and block regeneration
// all read from the same stream.
namespace philox {

struct Block {
    uint32_t x[4];
};

inline Block encrypt(uint64_t key, Block ctr) {
    constexpr uint32_t mul0 = 0xD2511F53u;
    constexpr uint32_t mul1 = 0xCD9E8D57u;
    constexpr uint32_t weyl0 = 0x9E3779B9u;
    constexpr uint32_t weyl1 = 0xBB67AE85u;
    uint32_t k0 = static_cast<uint32_t>(key);
    uint32_t k1 = static_cast<uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
        const uint64_t p0 = static_cast<uint64_t>(mul0) * ctr.x[0];
        const uint64_t p1 = static_cast<uint64_t>(mul1) * ctr.x[2];
        Block next;
        next.x[0] = static_cast<uint32_t>(p1 >> 32) ^ ctr.x[1] ^ k0;
        next.x[1] = static_cast<uint32_t>(p1);
        next.x[2] = static_cast<uint32_t>(p0 >> 32) ^ ctr.x[3] ^ k1;
        next.x[3] = static_cast<uint32_t>(p0);
        ctr = next;
        k0 += weyl0;
        k1 += weyl1;
    }
    return ctr;
}

}  // namespace philox

// Draw purposes keep Euler increments, bridge uniforms and any auxiliary
// draws on disjoint counters.
enum class DrawPurpose : uint32_t { increment = 0, bridge = 1, aux = 2 };

// Stateless handle on one path's substream.
class PathStream {
public:
    PathStream(uint64_t seed, uint64_t path) : seed_(seed), path_(path) {}

    // j-th standard normal of time step `step` (j indexes the Brownian dimension).
    double gauss(uint32_t step, uint32_t j) const {
        const philox::Block r = block(step, DrawPurpose::increment, j >> 1);
        const double u1 = to_unit(r.x[0], r.x[1]);
        const double u2 = to_unit(r.x[2], r.x[3]);
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * std::numbers::pi * u2;
        return (j & 1u) ? rad * std::sin(ang) : rad * std::cos(ang);
    }

    // Uniform in (0,1) for `step`, independent of the gauss draws.
    double uniform(uint32_t step, DrawPurpose purpose, uint32_t j = 0) const {
        const philox::Block r = block(step, purpose, j);
        return to_unit(r.x[0], r.x[1]);
    }

private:
    philox::Block block(uint32_t step, DrawPurpose purpose, uint32_t slot) const {
        philox::Block c{{static_cast<uint32_t>(path_), static_cast<uint32_t>(path_ >> 32), step,
                         (static_cast<uint32_t>(purpose) << 24) | (slot & 0x00FFFFFFu)}};
        return philox::encrypt(seed_, c);
    }

    // 53-bit uniform strictly inside (0,1)
    static double to_unit(uint32_t a, uint32_t b) {
        const uint64_t bits = (static_cast<uint64_t>(a) << 21) ^ (b >> 11);
        return static_cast<double>(bits) * 0x1.0p-53 + 0x1.0p-54;
    }

    uint64_t seed_;
    uint64_t path_;
};

}  // namespace bsde
