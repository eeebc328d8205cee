#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dagan {

// Deterministic seeded RNG. mt19937_64 has a fully specified output
// sequence; the distributions below are hand-rolled so two runs of the
// same binary draw identical values.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    // Mixes (seed, stream) into an independent child seed (splitmix64 finalizer).
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);
    // Hashes a label into a stream id, for deriving named sub-seeds.
    static std::uint64_t stream_id(const char* label);

    // Independent child stream keyed off the construction seed, not the
    // current state, so fork order does not matter.
    Rng fork(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }
    Rng fork(const char* label) const { return fork(stream_id(label)); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t bits() { return gen_(); }

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer in [lo, hi], inclusive.
    long uniform_int(long lo, long hi);
    // Standard normal via Box-Muller, one cached value.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<std::size_t>(uniform_int(0, static_cast<long>(v.size()) - 1))];
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<long>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace dagan
