#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>

namespace polykin {

/// Counter-seeded xoshiro256++ stream.
///
/// Every consumer derives its own stream from (seed, stream_id), so parallel
/// shards never share state and results do not depend on scheduling order.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}

  RngStream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
    for (auto& word : state_) word = splitmix64(x);
    // xoshiro must not start from the all-zero state
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
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

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  void fill_gaussian(Eigen::Ref<Eigen::VectorXd> out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = gaussian();
  }

  /// Uniform point on the unit sphere S^{n-1}.
  Eigen::VectorXd on_sphere(int n) {
    Eigen::VectorXd v(n);
    double norm2 = 0.0;
    do {
      fill_gaussian(v);
      norm2 = v.squaredNorm();
    } while (norm2 < 1e-290);
    return v / std::sqrt(norm2);
  }

  /// Uniform point in the ball of radius r in R^n.
  Eigen::VectorXd in_ball(int n, double r) {
    Eigen::VectorXd dir = on_sphere(n);
    double u = uniform();
    return dir * (r * std::pow(u, 1.0 / n));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_[4];
};

}  // namespace polykin
