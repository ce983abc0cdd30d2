/*
 * rng.hpp — counter-based random number generation (Philox4x64-10).
 *
 * Experiments need random streams keyed by (seed, experiment, trajectory
 * index) so that (a) parallel and serial runs consume identical randomness and
 * (b) protocols that mandate shared initializations across treatment arms can
 * reuse a stream exactly. A counter-based generator gives O(1) jump-to-stream,
 * which ordinary sequential engines cannot. The standard library offers no
 * counter-based engine, so Philox4x64 with 10 rounds is implemented here; the
 * unit tests pin it against known-answer vectors from an independent
 * implementation. Gaussian variates use Box-Muller rather than
 * std::normal_distribution because the latter's consumption pattern is
 * implementation-defined, which would break cross-toolchain determinism of
 * emitted artifacts.
 */

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "gmflow/vec.hpp"

namespace gmflow {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// One Philox4x64-10 block function: 256-bit counter + 128-bit key -> 256 bits.
struct Philox4x64 {
    static constexpr std::uint64_t MULT_HI = 0xD2E7470EE14C6C93ULL;
    static constexpr std::uint64_t MULT_LO = 0xCA5A826395121157ULL;
    static constexpr std::uint64_t WEYL_0 = 0x9E3779B97F4A7C15ULL; // golden ratio
    static constexpr std::uint64_t WEYL_1 = 0xBB67AE8584CAA73BULL; // sqrt(3)-1

    static std::array<std::uint64_t, 4> block(std::array<std::uint64_t, 4> ctr,
                                              std::array<std::uint64_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const unsigned __int128 p0 =
                static_cast<unsigned __int128>(MULT_HI) * ctr[0];
            const unsigned __int128 p2 =
                static_cast<unsigned __int128>(MULT_LO) * ctr[2];
            const std::uint64_t hi0 = static_cast<std::uint64_t>(p0 >> 64);
            const std::uint64_t lo0 = static_cast<std::uint64_t>(p0);
            const std::uint64_t hi2 = static_cast<std::uint64_t>(p2 >> 64);
            const std::uint64_t lo2 = static_cast<std::uint64_t>(p2);
            ctr = {hi2 ^ ctr[1] ^ key[0], lo2, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += WEYL_0;
            key[1] += WEYL_1;
        }
        return ctr;
    }
};

/// A deterministic stream of uniforms/Gaussians addressed by
/// (seed, stream, substream). Copies are independent cursors.
class CounterRng {
public:
    /// seed: run-level 64-bit seed; stream: experiment identifier;
    /// substream: trajectory index, optionally tagged by purpose (see below).
    CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream)
        : key_{seed, stream}, base_{0, substream, 0, 0} {}

    /// Distinguishes independent draws belonging to the same trajectory
    /// (e.g. its initialization vs. a mid-run perturbation).
    static std::uint64_t substream(std::uint64_t purpose, std::uint64_t index) {
        return (purpose << 48) | (index & 0xFFFFFFFFFFFFULL);
    }

    std::uint64_t next_u64() {
        if (cursor_ == 4) {
            buffer_ = Philox4x64::block(base_, key_);
            ++base_[0]; // 2^64 blocks per substream before wrap
            cursor_ = 0;
        }
        return buffer_[cursor_++];
    }

    /// Uniform double in [0, 1) with 53 random mantissa bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; produces (and caches) pairs.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - next_double(); // in (0, 1], safe for log
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = kTwoPi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// d independent standard normals.
    Vec gaussian_vector(std::size_t d) {
        Vec v(d);
        for (double& x : v) x = next_gaussian();
        return v;
    }

    /// Uniform draw from the open ball B(center, radius): Gaussian direction
    /// normalized, radius scaled by U^(1/d).
    Vec uniform_in_ball(const Vec& center, double radius) {
        const std::size_t d = center.size();
        Vec dir = gaussian_vector(d);
        double n = norm(dir);
        while (n == 0.0) { // probability ~0, but keep the draw well-defined
            dir = gaussian_vector(d);
            n = norm(dir);
        }
        const double r =
            radius * std::pow(next_double(), 1.0 / static_cast<double>(d));
        Vec out(center);
        axpy(r / n, dir, out);
        return out;
    }

private:
    std::array<std::uint64_t, 2> key_;
    std::array<std::uint64_t, 4> base_;
    std::array<std::uint64_t, 4> buffer_{};
    int cursor_ = 4; // forces a refill on first use
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// FNV-1a 64-bit hash; used to derive stable stream ids from experiment names
/// and stable hashes from canonical config text.
inline std::uint64_t fnv1a64(const char* data, std::size_t len) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

} // namespace gmflow
