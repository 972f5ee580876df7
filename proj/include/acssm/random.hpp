#pragma once

#include <cstdint>
#include <cmath>
#include <array>

namespace acssm {

// Deterministic counter-keyed stream: xoshiro256++ seeded via splitmix64 from
// (seed, stream_id). Same pair gives bit-identical output on every platform;
// distinct stream ids give statistically independent streams, so work can be
// partitioned across threads without touching shared state.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
    for (auto& s : state_) s = splitmix64(x);
    // avoid the all-zero state
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Independent child stream; child ids are mixed so nested splits stay distinct.
  RandomStream split(std::uint64_t child_id) const {
    std::uint64_t mixed = stream_id_ * 0x2545f4914f6cdd1dULL + child_id + 1;
    return RandomStream(seed_, mixed);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  inline double gaussian();

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::array<std::uint64_t, 4> state_;
};

namespace detail {

// Ziggurat tables for the standard normal (Marsaglia & Tsang, 2000), 128 layers.
struct ZigguratTables {
  double x[129];
  double y[128];
  ZigguratTables() {
    const double r = 3.442619855899;
    const double v = 9.91256303526217e-3;
    x[128] = v * std::exp(0.5 * r * r);
    x[127] = r;
    y[127] = std::exp(-0.5 * r * r);
    for (int i = 126; i >= 1; --i) {
      x[i] = std::sqrt(-2.0 * std::log(v / x[i + 1] + std::exp(-0.5 * x[i + 1] * x[i + 1])));
      y[i] = std::exp(-0.5 * x[i] * x[i]);
    }
    x[0] = 0.0;
    y[0] = 1.0;
  }
};
inline const ZigguratTables zig;

}  // namespace detail

// Inline so hot Monte Carlo loops avoid a per-draw call; output is
// bit-identical to the previous out-of-line version.
double RandomStream::gaussian() {
  const auto& zig = detail::zig;
  for (;;) {
    const std::uint64_t u = next_u64();
    const int i = static_cast<int>(u & 127);
    // 53-bit signed fraction in (-1, 1)
    const std::int64_t j = static_cast<std::int64_t>(u >> 11) - (1LL << 52);
    const double f = static_cast<double>(j) * 0x1.0p-52;
    const double z = f * zig.x[i + 1];
    if (std::abs(f) * zig.x[i + 1] < zig.x[i]) return z;
    if (i == 127) {
      // tail (Marsaglia's method)
      const double r = 3.442619855899;
      for (;;) {
        const double e1 = -std::log(uniform() + 5e-324) / r;
        const double e2 = -std::log(uniform() + 5e-324);
        if (2.0 * e2 > e1 * e1) return (z > 0 ? r + e1 : -r - e1);
      }
    }
    const double yy = zig.y[i] + uniform() * (zig.y[i + 1 < 128 ? i + 1 : 127] - zig.y[i]);
    if (yy < std::exp(-0.5 * z * z)) return z;
  }
}

}  // namespace acssm
