#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <optional>
#include <string_view>

namespace stwave {

// Counter-style deterministic RNG built on the splitmix64 finalizer.
// Every consumer derives its own named stream so that adding or removing
// one draw site never shifts the values seen by another.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // FNV-1a over the tag bytes, folded into the seed. Used to give every
    // parameter / draw site an independent stream.
    static uint64_t hash_tag(uint64_t seed, std::string_view tag) {
        uint64_t h = 0xCBF29CE484222325ull;
        for (unsigned char c : tag) {
            h ^= static_cast<uint64_t>(c);
            h *= 0x100000001B3ull;
        }
        return mix(seed ^ h);
    }

    // Stream keyed by (seed, tag, indices...), e.g. ("dropout", epoch, batch).
    static Rng stream(uint64_t seed, std::string_view tag,
                      std::initializer_list<uint64_t> indices = {}) {
        uint64_t h = hash_tag(seed, tag);
        for (uint64_t v : indices) h = mix(h ^ v);
        return Rng(h);
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (cached_) {
            double v = *cached_;
            cached_.reset();
            return v;
        }
        double u1 = 1.0 - next_double(); // (0, 1], keeps log() finite
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        return r * std::cos(a);
    }

    // Fisher-Yates using this stream.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    std::optional<double> cached_;
};

} // namespace stwave
