#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace abtok {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline double to_unit_double(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Stateless counter RNG: every draw is a pure function of (key, a, b, draw index).
// Used where randomness must be addressable per (seed, row, position).
struct counter_rng {
    std::uint64_t key;

    explicit counter_rng(std::uint64_t seed) : key(splitmix64(seed ^ 0xA076'1D64'78BD'642FULL)) {}

    std::uint64_t bits(std::uint64_t a, std::uint64_t b, std::uint64_t draw) const {
        std::uint64_t h = splitmix64(key ^ (a + 1) * 0xE703'7ED1'A0B4'28DBULL);
        h = splitmix64(h ^ (b + 1) * 0x8EBC'6AF0'9C88'C6E3ULL);
        return splitmix64(h ^ (draw + 1) * 0x5896'59DC'0939'6E9CULL);
    }

    double uniform(std::uint64_t a, std::uint64_t b, std::uint64_t draw) const {
        return to_unit_double(bits(a, b, draw));
    }
};

// Sequential deterministic RNG built on the fully specified mt19937_64 engine.
// std:: distributions are implementation-defined, so draws are hand-rolled.
class det_rng {
  public:
    explicit det_rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return to_unit_double(eng_()); }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t x = eng_();
            if (x >= threshold) return x % n;
        }
    }

    double normal() {
        // Box-Muller, cosine branch only.
        for (;;) {
            double u1 = uniform();
            if (u1 <= 0.0) continue;
            double u2 = uniform();
            return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        }
    }

    // Normal(0, sd^2) rejected outside +/- clip*sd.
    double truncated_normal(double sd, double clip) {
        for (;;) {
            double z = normal();
            if (std::abs(z) <= clip) return z * sd;
        }
    }

  private:
    std::mt19937_64 eng_;
};

template <typename T>
void fisher_yates(std::vector<T>& v, det_rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace abtok
