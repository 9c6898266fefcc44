#pragma once

#include <cmath>
#include <cstdint>

namespace hazeforge {

// Counter-based 64-bit generator: the n-th output is a pure function of
// (seed, stream, n), built from the splitmix64 finalizer. No hidden state
// beyond the counter, so seeds recorded in manifests and checkpoints
// reproduce identical streams on any platform and in any evaluation order.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : base_(mix(seed + kGolden) ^ mix(stream + kStreamSalt)) {}

    // n-th value of the stream, independent of draws made so far.
    std::uint64_t at(std::uint64_t n) const noexcept {
        return mix(base_ + (n + 1) * kGolden);
    }

    std::uint64_t next_u64() noexcept { return at(counter_++); }

    // uniform in [0, 1), 53-bit resolution
    double next_double() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in (0, 1], used where log() must stay finite
    double next_double_open0() noexcept {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * next_double();
    }

    // inclusive bounds; modulo bias is below 2^-53 for the ranges used here
    int uniform_int(int lo, int hi) noexcept {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // standard normal via Box-Muller (portable, no std::normal_distribution)
    double normal() noexcept {
        const double u1 = next_double_open0();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    static constexpr std::uint64_t kStreamSalt = 0x5851F42D4C957F2Dull;
    static constexpr double kPi = 3.14159265358979323846;

    static std::uint64_t mix(std::uint64_t z) noexcept {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t base_ = 0;
    std::uint64_t counter_ = 0;
};

// Stable sub-seed derivation for per-entry / per-epoch streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    return CounterRng(seed).at(index);
}

} // namespace hazeforge
