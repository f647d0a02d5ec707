#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace qnet {

// Deterministic random stream. Every distribution draw is built on top of the
// mt19937_64 output directly, so a (seed, substream) pair fully determines a
// simulation run independent of standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // SplitMix64 finalizer, used to derive well-separated substream seeds.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
    return mix(seed + (index + 1) * 0x9E3779B97F4A7C15ull);
  }

  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(substream_seed(seed, index));
  }

  // Uniform on (0, 1); never returns 0, so log(u01()) is safe.
  double u01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  bool bernoulli(double prob) { return u01() < prob; }

  double exponential(double rate) {
    if (rate <= 0.0) throw std::invalid_argument("exponential rate must be positive");
    return -std::log(u01()) / rate;
  }

  double erlang(int shape, double rate) {
    double sum = 0.0;
    for (int i = 0; i < shape; ++i) sum += exponential(rate);
    return sum;
  }

  // Exact Poisson draw: Knuth's product method for small means; larger means
  // are split additively (a sum of independent Poissons is Poisson).
  int poisson(double mean) {
    if (mean < 0.0) throw std::invalid_argument("poisson mean must be nonnegative");
    int total = 0;
    while (mean > 50.0) {
      total += poisson_knuth(25.0);
      mean -= 25.0;
    }
    return total + poisson_knuth(mean);
  }

  int binomial(int trials, double prob) {
    int hits = 0;
    for (int i = 0; i < trials; ++i) hits += (u01() < prob);
    return hits;
  }

 private:
  int poisson_knuth(double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    int k = 0;
    double prod = 1.0;
    do {
      ++k;
      prod *= u01();
    } while (prod > limit);
    return k - 1;
  }

  std::mt19937_64 engine_;
};

}  // namespace qnet
