// Counter-based random number generation.
//
// Every draw is a pure function of (root seed, subject, month, purpose tag),
// so cohorts are reproducible bit-for-bit regardless of generation order or
// worker count, and regime replays can rerun single months in isolation.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace gsnm {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t subject,
                             std::uint64_t month, std::uint64_t purpose) {
    std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dull);
    h = splitmix64(h ^ subject);
    h = splitmix64(h ^ (month + 0x100000001b3ull));
    h = splitmix64(h ^ (purpose + 0x9e3779b97f4a7c15ull));
    return h;
}

// Stateless stream of doubles keyed by (seed, subject, month, purpose).
// Successive draws advance an internal counter only.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t subject, std::uint64_t month,
               std::uint64_t purpose)
        : key_(mix_key(seed, subject, month, purpose)), counter_(0) {}

    // Uniform on (0,1), never exactly 0 or 1.
    double uniform() {
        std::uint64_t z = splitmix64(key_ ^ (0x2545f4914f6cdd1dull * ++counter_));
        return (static_cast<double>(z >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        // Box-Muller; uses exactly two uniforms per call for reproducibility.
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

    bool bernoulli(double p) { return uniform() < p; }

    // Index into cumulative-free probability vector (sums to <= 1; remainder
    // goes to the last entry).
    std::size_t categorical(const std::vector<double>& probs) {
        double u = uniform();
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
            acc += probs[k];
            if (u < acc) return k;
        }
        return probs.empty() ? 0 : probs.size() - 1;
    }

  private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace gsnm
