#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace lsens {

// 64-bit FNV-1a. Used for stable seed derivation and content fingerprints;
// results must not change between releases, so this stays hand-rolled.
inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n,
                                   std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(std::string_view(static_cast<const char*>(data), n), h);
}

// Deterministic RNG. mt19937_64 has a standardized output sequence and the
// derived draws below use only plain arithmetic, so streams are reproducible
// across compilers and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, n). Modulo bias is < 2^-32 for the n used here.
    std::uint64_t uniform_int(std::uint64_t n) { return eng_() % n; }

    int uniform_range(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(uniform_int(
                        static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double uniform() {  // [0, 1)
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; avoids std::normal_distribution, whose sequence is
    // implementation-defined.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stable per-component seed: hash of the global seed plus a label such as
// "S1/Unet/DiceLoss/0.001". Sessions seeded this way are independently
// reproducible regardless of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t global_seed,
                                 std::string_view label) {
    std::uint64_t h = fnv1a64_bytes(&global_seed, sizeof(global_seed));
    return fnv1a64(label, h);
}

}  // namespace lsens
