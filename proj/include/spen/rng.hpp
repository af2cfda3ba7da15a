#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spen {

// splitmix64-based generator. Deliberately self-contained so that runs are
// reproducible bit-for-bit regardless of the standard library in use.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  size_t below(size_t n) { return static_cast<size_t>(next_u64() % n); }

  // Index sampled from an unnormalized nonnegative weight vector.
  size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent stream for a named purpose; keeps module seeds decoupled.
  Rng fork(uint64_t tag) const {
    Rng child(state_ ^ (0x517cc1b727220a95ULL * (tag + 1)));
    child.next_u64();
    return child;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = below(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace spen
