#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace attnlab {

// All randomness in the lab flows through this wrapper so that results are
// reproducible bit-for-bit: the generator is mt19937_64 and the normal
// transform is our own Box-Muller (std::normal_distribution's stream is
// implementation-defined and would tie outputs to a libstdc++ version).
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be positive.
    int64_t uniform_int(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return static_cast<int64_t>(x % un);
    }

    // Standard normal via Box-Muller; the spare value is cached so draws
    // come in a deterministic stream.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named substream derivation: one user-facing seed fans out into
// independent streams ("init", "data", "noise", "sampling", "eval", ...)
// so changing e.g. the sampling seed cannot perturb data order.
inline uint64_t substream(uint64_t root_seed, std::string_view name) {
    // FNV-1a over the name, then a splitmix64 finalizer over the mix.
    uint64_t h = 1469598103934665603ull;
    for (const char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    uint64_t z = root_seed ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace attnlab
