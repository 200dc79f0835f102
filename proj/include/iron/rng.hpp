#pragma once

// Counter-based random number generation for reproducible parallel Monte
// Carlo. Every Gaussian draw is addressed by (key, particle, step, block),
// so ensembles produce identical output regardless of how particles are
// scheduled onto threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Core>

namespace iron {

/// 64-bit finalizer used to derive stream keys from user-facing seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Philox 4x32-10 block cipher (counter-based PRNG).
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static Counter block(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t(kMul0) * ctr[0];
            const std::uint64_t p1 = std::uint64_t(kMul1) * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }
};

/// Combine a master seed with a per-run seed into a Philox key.
inline std::uint64_t derive_stream_key(std::uint64_t master_seed, std::uint64_t run_seed) {
    return splitmix64(master_seed ^ splitmix64(run_seed));
}

/// Stream of N(0,1) draws addressed by (key, particle, step, domain).
///
/// One Philox block yields two uniforms, Box-Muller turns them into two
/// Gaussians; the second is cached. Streams at distinct addresses are
/// statistically independent.
class GaussianStream {
public:
    // Domain tags keep draw purposes from colliding at equal indices.
    static constexpr std::uint32_t kDomainStep = 0;
    static constexpr std::uint32_t kDomainInit = 1;
    static constexpr std::uint32_t kDomainData = 2;

    GaussianStream(std::uint64_t key64, std::uint32_t particle, std::uint32_t step,
                   std::uint32_t domain = kDomainStep)
        : key_{static_cast<std::uint32_t>(key64), static_cast<std::uint32_t>(key64 >> 32)},
          particle_(particle), step_(step), domain_(domain) {}

    double next() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const auto words = Philox4x32::block({block_index_++, particle_, step_, domain_}, key_);
        const double u1 = to_open_unit(join(words[0], words[1]));
        const double u2 = to_half_open_unit(join(words[2], words[3]));
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        cached_ = radius * std::sin(angle);
        have_cached_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform draw in [0,1); consumes one block per two calls.
    double uniform() {
        if (have_uniform_) {
            have_uniform_ = false;
            return cached_uniform_;
        }
        const auto words = Philox4x32::block({block_index_++, particle_, step_, domain_}, key_);
        cached_uniform_ = to_half_open_unit(join(words[2], words[3]));
        have_uniform_ = true;
        return to_half_open_unit(join(words[0], words[1]));
    }

    void fill(Eigen::Ref<Eigen::VectorXd> out) {
        for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = next();
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd out(n);
        fill(out);
        return out;
    }

private:
    static std::uint64_t join(std::uint32_t lo, std::uint32_t hi) {
        return (std::uint64_t(hi) << 32) | lo;
    }
    // 53-bit mantissa draws; (0,1] keeps log() finite in Box-Muller.
    static double to_open_unit(std::uint64_t u) {
        return (double((u >> 11) + 1)) * 0x1.0p-53;
    }
    static double to_half_open_unit(std::uint64_t u) {
        return double(u >> 11) * 0x1.0p-53;
    }

    Philox4x32::Key key_;
    std::uint32_t particle_;
    std::uint32_t step_;
    std::uint32_t domain_;
    std::uint32_t block_index_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
    double cached_uniform_ = 0.0;
    bool have_uniform_ = false;
};

} // namespace iron
