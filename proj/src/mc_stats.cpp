#include "polykin/mc_stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace polykin {

McEstimate Accumulator::estimate(double scale) const {
  McEstimate e;
  e.samples = n;
  if (n == 0) return e;
  const double mean = sum / static_cast<double>(n);
  e.value = scale * mean;
  if (n > 1) {
    double var = (sumsq - sum * mean) / static_cast<double>(n - 1);
    var = std::max(var, 0.0);
    e.std_error = std::abs(scale) * std::sqrt(var / static_cast<double>(n));
  }
  return e;
}

McEstimate combine_sum(const std::vector<McEstimate>& parts) {
  McEstimate out;
  double var = 0.0;
  for (const auto& p : parts) {
    out.value += p.value;
    var += p.std_error * p.std_error;
    out.samples += p.samples;
  }
  out.std_error = std::sqrt(var);
  return out;
}

PowerFit fit_loglog(std::span<const double> x, std::span<const double> y,
                    std::span<const double> w) {
  if (x.size() != y.size() || (!w.empty() && w.size() != x.size()))
    throw std::invalid_argument("fit_loglog: size mismatch");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  int used = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    if (!(y[i] > 0.0) || !(x[i] > 0.0) || !(wi > 0.0)) continue;
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sw += wi;
    sx += wi * lx;
    sy += wi * ly;
    sxx += wi * lx * lx;
    sxy += wi * lx * ly;
    ++used;
  }
  PowerFit fit;
  fit.points_used = used;
  if (used < 2) return fit;
  const double denom = sw * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) return fit;
  fit.slope = (sw * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / sw;
  // residual-based slope uncertainty (weighted)
  double rss = 0.0, neff = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    if (!(y[i] > 0.0) || !(x[i] > 0.0) || !(wi > 0.0)) continue;
    const double r = std::log(y[i]) - fit.intercept - fit.slope * std::log(x[i]);
    rss += wi * r * r;
    neff += 1.0;
  }
  if (neff > 2.0) fit.slope_se = std::sqrt(rss / (neff - 2.0) * sw / denom);
  return fit;
}

double sphere_area(int n) {
  return 2.0 * std::pow(M_PI, 0.5 * n) / std::tgamma(0.5 * n);
}

double ball_volume(int n, double r) {
  return std::pow(M_PI, 0.5 * n) / std::tgamma(0.5 * n + 1.0) * std::pow(r, n);
}

Accumulator run_sharded_acc(
    std::uint64_t total, const ExecPlan& plan,
    const std::function<Accumulator(int, std::uint64_t, RngStream&)>& fn) {
  const int shards = std::max(1, plan.shards);
  const std::uint64_t base = total / shards;
  const std::uint64_t rem = total % shards;

  std::vector<Accumulator> results(shards);
  auto work = [&](int shard) {
    const std::uint64_t count = base + (static_cast<std::uint64_t>(shard) < rem ? 1 : 0);
    RngStream rng(plan.seed, (plan.stream << 20) + static_cast<std::uint64_t>(shard));
    results[shard] = fn(shard, count, rng);
  };

  const int threads = std::clamp(plan.threads, 1, shards);
  if (threads <= 1) {
    for (int s = 0; s < shards; ++s) work(s);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int s = next.fetch_add(1); s < shards; s = next.fetch_add(1)) work(s);
      });
    for (auto& th : pool) th.join();
  }

  Accumulator merged;
  for (const auto& r : results) merged.merge(r);
  return merged;
}

Accumulator run_sharded(std::uint64_t total, const ExecPlan& plan,
                        const std::function<double(RngStream&)>& per_sample) {
  return run_sharded_acc(total, plan,
                         [&](int, std::uint64_t count, RngStream& rng) {
                           Accumulator acc;
                           for (std::uint64_t i = 0; i < count; ++i)
                             acc.add(per_sample(rng));
                           return acc;
                         });
}

}  // namespace polykin
