#include "mhcg/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mhcg {

namespace {
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace

uint64_t mix_seed(uint64_t base, uint64_t tag) {
    return splitmix64(splitmix64(base) ^ (0x9e3779b97f4a7c15ULL + tag));
}

uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
    uint64_t acc = 0x243f6a8885a308d3ULL;  // arbitrary nonzero start
    for (uint64_t p : parts) acc = mix_seed(acc, p);
    return acc;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be > 0");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

std::vector<int> Rng::sample_without_replacement(int n, int k, int exclude) {
    const int pool = (exclude >= 0 && exclude < n) ? n - 1 : n;
    if (k > pool) throw std::invalid_argument("sample_without_replacement: k exceeds pool size");
    std::vector<int> out;
    out.reserve(k);
    std::unordered_set<int> taken;
    while (static_cast<int>(out.size()) < k) {
        int idx = static_cast<int>(below(static_cast<uint64_t>(n)));
        if (idx == exclude || taken.count(idx)) continue;
        taken.insert(idx);
        out.push_back(idx);
    }
    return out;
}

}  // namespace mhcg
