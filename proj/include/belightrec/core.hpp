#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace belightrec {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& message) : std::runtime_error(message) {}
};

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t state = 14695981039346656037ULL) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        state ^= bytes[i];
        state *= 1099511628211ULL;
    }
    return state;
}

inline std::uint64_t fnv1a64(std::string_view text,
                             std::uint64_t state = 14695981039346656037ULL) {
    return fnv1a64(text.data(), text.size(), state);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent seed for a named component ("split", "init", ...)
// so every stage of a run is reproducible from the single config seed.
inline std::uint64_t substream_seed(std::uint64_t base_seed, std::string_view name) {
    return splitmix64(base_seed ^ fnv1a64(name));
}

// mt19937_64 with hand-rolled draws. The std:: distributions are not pinned
// by the standard, so results would differ across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased uniform draw from [0, bound).
    std::uint64_t uniform_below(std::uint64_t bound) {
        if (bound == 0) throw Error("uniform_below: bound must be positive");
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in (0, 1], 53-bit resolution.
    double uniform_open01() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Box-Muller, two engine draws per call.
    double gaussian() {
        const double u1 = uniform_open01();
        const double u2 = uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        return radius * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

inline std::string to_hex(std::uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

}  // namespace belightrec
