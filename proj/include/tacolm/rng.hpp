#pragma once
// Deterministic RNG used everywhere (init, dropout, sampling, corpus
// synthesis). splitmix64 core: tiny state, full 64-bit avalanche, and
// fork() gives independent child streams so "same seed => same run" holds
// no matter how subsystems interleave their draws.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tacolm {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // child stream decorrelated from the parent and from other tags
  Rng fork(std::uint64_t tag) {
    std::uint64_t s = next_u64();
    return Rng(s ^ (tag * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
  }

  // uniform in [0,1), 53-bit resolution
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::runtime_error("Rng::below(0)");
    std::uint64_t lim = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

  long long range(long long lo, long long hi_inclusive) {
    return lo + static_cast<long long>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  // Box-Muller; one spare kept so draws stay cheap and sequence-stable
  double gauss() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = u01();
    } while (u1 <= 0.0);
    u2 = u01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<long long>(last - first);
    for (long long i = n - 1; i > 0; --i) {
      long long j = static_cast<long long>(below(static_cast<std::uint64_t>(i + 1)));
      std::swap(first[i], first[j]);
    }
  }

  // index draw from unnormalized non-negative weights
  template <typename Real>
  int categorical(const Real* w, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += static_cast<double>(w[i]);
    if (!(total > 0.0)) throw std::runtime_error("categorical: weights sum to zero");
    double u = u01() * total;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += static_cast<double>(w[i]);
      if (u < acc) return i;
    }
    return n - 1;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace tacolm
