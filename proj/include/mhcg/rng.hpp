// Deterministic seeded randomness. Every stochastic component draws from an
// Rng constructed from a seed derived with mix_seed, so independent streams
// (per item, per epoch, per purpose) never share state.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace mhcg {

// splitmix64 finalizer; good avalanche, used for seed derivation.
uint64_t mix_seed(uint64_t base, uint64_t tag);
uint64_t mix_seed(std::initializer_list<uint64_t> parts);

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();

    // Standard normal via Box-Muller (spare value cached).
    double normal();

    // Uniform integer in [0, n); n must be > 0. Rejection sampled, unbiased.
    uint64_t below(uint64_t n);

    // Sample k distinct indices from [0, n) \ {exclude} (pass n for no
    // exclusion). Order is the draw order.
    std::vector<int> sample_without_replacement(int n, int k, int exclude);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mhcg
