#include "dagan/rng.hpp"

#include <cmath>

namespace dagan {

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over seed advanced by the stream index.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t Rng::stream_id(const char* label) {
    // FNV-1a
    std::uint64_t h = 1469598103934665603ull;
    for (const char* p = label; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 1099511628211ull;
    }
    return h;
}

double Rng::uniform() {
    // 53 random bits -> double in [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

long Rng::uniform_int(long lo, long hi) {
    // Rejection-free is unnecessary here; ranges are tiny, so modulo bias of
    // a 64-bit draw is < 2^-50.
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1ull;
    return lo + static_cast<long>(gen_() % span);
}

double Rng::normal() {
    if (have_cached_) {
        have_cached_ = false;
        return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
}

}  // namespace dagan
