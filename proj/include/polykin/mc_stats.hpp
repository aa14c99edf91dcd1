#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <thread>
#include <vector>

#include "polykin/rng.hpp"

namespace polykin {

/// Monte Carlo estimate: mean value, standard error, sample count.
struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t samples = 0;
};

/// Streaming sum / sum-of-squares accumulator with associative merge.
struct Accumulator {
  double sum = 0.0;
  double sumsq = 0.0;
  std::uint64_t n = 0;

  void add(double x) {
    sum += x;
    sumsq += x * x;
    ++n;
  }

  void merge(const Accumulator& o) {
    sum += o.sum;
    sumsq += o.sumsq;
    n += o.n;
  }

  /// Mean and standard error, both scaled by `scale`.
  McEstimate estimate(double scale = 1.0) const;
};

McEstimate combine_sum(const std::vector<McEstimate>& parts);

struct PowerFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  int points_used = 0;
};

/// Weighted least squares on (log x, log y); points with y <= 0 or w <= 0 are
/// dropped.
PowerFit fit_loglog(std::span<const double> x, std::span<const double> y,
                    std::span<const double> w);

/// log-surface area of the unit sphere S^{n-1}.
double sphere_area(int n);

/// Volume of the ball of radius r in R^n.
double ball_volume(int n, double r);

/// Execution plan for sharded Monte Carlo loops.
///
/// Results depend only on (seed, stream, shards), never on `threads`: shard
/// accumulators are merged in shard order.
struct ExecPlan {
  int shards = 16;
  int threads = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// Runs `per_sample` `total` times across plan.shards shards and returns the
/// merged accumulator. The callback receives a shard-local RNG.
Accumulator run_sharded(std::uint64_t total, const ExecPlan& plan,
                        const std::function<double(RngStream&)>& per_sample);

/// Generic sharded loop: fn(shard_index, samples_in_shard, rng) -> Accumulator.
Accumulator run_sharded_acc(
    std::uint64_t total, const ExecPlan& plan,
    const std::function<Accumulator(int, std::uint64_t, RngStream&)>& fn);

/// Same sharding scheme for a caller-defined accumulator type with merge().
template <class Acc, class Fn>
Acc run_sharded_custom(std::uint64_t total, const ExecPlan& plan, Fn&& fn) {
  const int shards = plan.shards < 1 ? 1 : plan.shards;
  const std::uint64_t base = total / shards;
  const std::uint64_t rem = total % shards;
  std::vector<Acc> results(static_cast<std::size_t>(shards));

  auto work = [&](int shard) {
    const std::uint64_t count =
        base + (static_cast<std::uint64_t>(shard) < rem ? 1 : 0);
    RngStream rng(plan.seed,
                  (plan.stream << 20) + static_cast<std::uint64_t>(shard));
    results[shard] = fn(shard, count, rng);
  };

  int threads = plan.threads < 1 ? 1 : plan.threads;
  if (threads > shards) threads = shards;
  if (threads <= 1) {
    for (int s = 0; s < shards; ++s) work(s);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int s = next.fetch_add(1); s < shards; s = next.fetch_add(1))
          work(s);
      });
    for (auto& th : pool) th.join();
  }

  Acc merged;
  for (auto& r : results) merged.merge(r);
  return merged;
}

}  // namespace polykin
