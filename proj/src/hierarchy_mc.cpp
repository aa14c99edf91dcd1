#include "polykin/hierarchy_mc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace polykin {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Cone-measure surface area of the unit interaction ellipsoid of order ell:
/// sphere area divided by the block determinant (ell+1)^{(ell-1)d/2}.
double ellipsoid_area(int ell, int d) {
  return sphere_area(ell * d) *
         std::pow(static_cast<double>(ell + 1), -0.5 * (ell - 1) * d);
}

Mat reshape_dxn(const Vec& v, int d, int n) {
  return Eigen::Map<const Mat>(v.data(), d, n);
}

}  // namespace

int AdjunctionSequence::sigma_tilde(int j) const {
  int sum = 0;
  for (int i = 0; i < j; ++i) sum += sigma[i];
  return sum;
}

void AdjunctionSequence::validate(const SystemParams& params, double t) const {
  const int k = depth();
  require(s >= 1, "AdjunctionSequence: need s >= 1");
  require(static_cast<int>(signs.size()) == k &&
              static_cast<int>(targets.size()) == k &&
              static_cast<int>(times.size()) == k &&
              static_cast<int>(omegas.size()) == k &&
              static_cast<int>(velocities.size()) == k,
          "AdjunctionSequence: field lengths disagree");
  double prev = t;
  for (int i = 0; i < k; ++i) {
    require(sigma[i] >= 1 && sigma[i] <= params.M,
            "AdjunctionSequence: order out of range");
    require(signs[i] == 1 || signs[i] == -1,
            "AdjunctionSequence: signs must be +-1");
    require(targets[i] >= 1 && targets[i] <= s + sigma_tilde(i),
            "AdjunctionSequence: adjunction target out of range");
    require(times[i] >= 0.0 && prev - times[i] >= params.delta,
            "AdjunctionSequence: times must decrease with gaps >= delta");
    prev = times[i];
    require(omegas[i].rows() == params.d && omegas[i].cols() == sigma[i],
            "AdjunctionSequence: impact block shape mismatch");
    require(velocities[i].rows() == params.d &&
                velocities[i].cols() == sigma[i],
            "AdjunctionSequence: velocity block shape mismatch");
    require(std::abs(ellipsoid_level(omegas[i]) - 1.0) <= 1e-9,
            "AdjunctionSequence: impact parameters off the ellipsoid");
  }
  require(prev >= params.delta,
          "AdjunctionSequence: last collision time must be >= delta");
}

PseudoTrajectory build_pseudo_trajectory(const PhaseConfig& zs,
                                         const AdjunctionSequence& adj,
                                         const SystemParams& params,
                                         Hierarchy variant, double t_start) {
  const int k = adj.depth();
  const int d = zs.dim();
  require(zs.m() == adj.s, "build_pseudo_trajectory: base count mismatch");

  PseudoTrajectory out;
  out.variant = variant;
  out.arrival.reserve(k + 1);
  out.departure.reserve(k);

  PhaseConfig cur = zs;
  double t_cur = t_start;
  for (int i = 0; i < k; ++i) {
    cur = cur.advected(-(t_cur - adj.times[i]));
    t_cur = adj.times[i];
    out.arrival.push_back(cur);

    const int sig = adj.sigma[i];
    const int m = cur.m();
    const int target = adj.targets[i] - 1;
    Mat X(d, m + sig), V(d, m + sig);
    X.leftCols(m) = cur.X;
    V.leftCols(m) = cur.V;
    const double off =
        variant == Hierarchy::bbgky ? adj.signs[i] * params.zone(sig) : 0.0;
    for (int c = 0; c < sig; ++c)
      X.col(m + c) = cur.X.col(target) + off * adj.omegas[i].col(c);
    if (adj.signs[i] == 1) {
      Mat tuple(d, sig + 1);
      tuple.col(0) = cur.V.col(target);
      tuple.rightCols(sig) = adj.velocities[i];
      const VelocityTuple post = collide(adj.omegas[i], VelocityTuple(tuple));
      V.col(target) = post.v.col(0);
      V.rightCols(sig) = post.v.rightCols(sig);
    } else {
      V.rightCols(sig) = adj.velocities[i];
    }
    cur = PhaseConfig(std::move(X), std::move(V));
    out.departure.push_back(cur);
  }
  cur = cur.advected(-t_cur);
  out.arrival.push_back(cur);
  return out;
}

double InitialData::tensor(const PhaseConfig& z) const {
  double p = 1.0;
  for (int i = 0; i < z.m(); ++i) {
    p *= f(z.X.col(i), z.V.col(i));
    if (p == 0.0) return 0.0;
  }
  return p;
}

InitialData make_gaussian_bump(double beta0, double mu0, double space_radius) {
  const double amp = 0.5 * std::exp(-mu0);
  InitialData data;
  data.weighted_bound = 0.5;
  data.f = [=](const Vec& x, const Vec& v) -> double {
    const double r2 = x.squaredNorm() / (space_radius * space_radius);
    if (r2 >= 1.0) return 0.0;
    return amp * std::exp(1.0 - 1.0 / (1.0 - r2)) *
           std::exp(-0.5 * beta0 * v.squaredNorm());
  };
  return data;
}

InitialData make_gaussian_bump(const Vec& beta_axes, double mu0,
                               double space_radius) {
  const double amp = 0.5 * std::exp(-mu0);
  InitialData data;
  data.weighted_bound = 0.5;
  Vec betas = beta_axes;
  data.f = [=](const Vec& x, const Vec& v) -> double {
    const double r2 = x.squaredNorm() / (space_radius * space_radius);
    if (r2 >= 1.0) return 0.0;
    double q = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) q += betas[i] * v[i] * v[i];
    return amp * std::exp(1.0 - 1.0 / (1.0 - r2)) * std::exp(-0.5 * q);
  };
  return data;
}

InitialData make_maxwellian(double beta0, double mu0) {
  const double amp = 0.5 * std::exp(-mu0);
  InitialData data;
  data.weighted_bound = 0.5;
  data.f = [=](const Vec&, const Vec& v) -> double {
    return amp * std::exp(-0.5 * beta0 * v.squaredNorm());
  };
  return data;
}

double bbgky_prefactor(const SystemParams& params, int ell, int s) {
  require(ell >= 1 && ell <= params.M, "bbgky_prefactor: order out of range");
  if (params.N - s < ell) return 0.0;
  double binom = 1.0;
  for (int j = 0; j < ell; ++j)
    binom *= static_cast<double>(params.N - s - j) / (j + 1);
  return std::pow(params.zone(ell), ell * params.d - 1) * binom;
}

double wp_constant(int d, int ell, double beta0, double mu0, double T,
                   double lambda, double C_d) {
  const double beta_T = beta0 - lambda * T;
  const double mu_T = mu0 - lambda * T;
  require(beta_T > 0.0, "wp_constant: beta must stay positive on [0, T]");
  return C_d * std::pow(ell, 3) / lambda * std::exp(-ell * mu_T) *
         std::pow(beta_T, -0.5 * ell * d) * (1.0 + std::pow(beta_T, -0.5));
}

LwpConstants lwp_constants(const SystemParams& params, double C_d) {
  const int d = params.d;
  const double b0 = params.beta0;
  const double mu0 = params.mu0;
  // per-order tail bound h(l) with A^l <= 1/l! and e^{-l mu} <= e^{l |mu|};
  // summed over all orders so the result does not depend on M
  const double base = std::log(2.0) + std::abs(mu0) + 0.5 * b0 +
                      0.5 * d * std::log(2.0 / b0);
  const double pref =
      std::log(C_d * (2.0 / b0) * (1.0 + std::pow(b0 / 2.0, -0.5)));
  double log_sum = -std::numeric_limits<double>::infinity();
  double log_fact = 0.0;
  for (int ell = 1; ell <= 400; ++ell) {
    log_fact += std::log(static_cast<double>(ell));
    const double log_h = pref + ell * base + 3.0 * std::log(ell) - log_fact;
    log_sum = std::max(log_sum, log_h) +
              std::log1p(std::exp(-std::abs(log_h - log_sum)));
    if (ell > 8 && log_h < log_sum - 40.0) break;
  }
  require(log_sum < 700.0, "lwp_constants: constants overflow for these "
                           "weights; decrease |mu0| or increase beta0");
  LwpConstants out;
  out.C_d = C_d;
  out.C_tilde = std::exp(log_sum);
  out.T = 1.0 / (2.0 * out.C_tilde);
  out.C.resize(params.M);
  const double lambda = b0 / (2.0 * out.T);
  for (int ell = 1; ell <= params.M; ++ell)
    out.C[ell - 1] = wp_constant(d, ell, b0, mu0, out.T, lambda, C_d);
  return out;
}

double min_backward_separation(const Vec& dx, const Vec& dv, double t0) {
  const double a = dv.squaredNorm();
  if (a <= 0.0) return dx.norm();
  const double tstar = dx.dot(dv) / a;
  const double t = std::max(tstar, t0);
  return (dx - t * dv).norm();
}

bool is_good_config(const PhaseConfig& z, double theta, double t0) {
  const int m = z.m();
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      const Vec dx = z.X.col(i) - z.X.col(j);
      const Vec dv = z.V.col(i) - z.V.col(j);
      if (min_backward_separation(dx, dv, t0) <= theta) return false;
    }
  return true;
}

bool passes_good_filter(const Mat& X, const Mat& V, const SystemParams& params,
                        double eps0) {
  const int m = static_cast<int>(X.cols());
  const double eps_top = params.zone(params.M);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      const Vec dx = X.col(i) - X.col(j);
      const Vec dv = V.col(i) - V.col(j);
      if (min_backward_separation(dx, dv, 0.0) <= eps_top) return false;
      if (min_backward_separation(dx, dv, params.delta) <= eps0) return false;
    }
  return true;
}

GoodVelocitySampler::GoodVelocitySampler(Mat X, const SystemParams& params,
                                         double eta, double eps0,
                                         double acceptance_floor)
    : X_(std::move(X)),
      params_(params),
      eta_(eta),
      eps0_(eps0),
      floor_(acceptance_floor) {
  const int s = static_cast<int>(X_.cols());
  for (int i = 0; i < s; ++i)
    for (int j = i + 1; j < s; ++j)
      require((X_.col(i) - X_.col(j)).norm() > eps0_,
              "good_config_filter: base positions are not eps0-separated");
}

Mat GoodVelocitySampler::sample(RngStream& rng) {
  const int d = params_.d;
  const int s = static_cast<int>(X_.cols());
  while (true) {
    ++attempts_;
    Vec flat = rng.in_ball(d * s, params_.R);
    Mat V = reshape_dxn(flat, d, s);
    if (passes_good_filter(X_, V, params_, eps0_)) {
      ++accepted_;
      return V;
    }
    if (attempts_ >= 1000 && acceptance() < floor_)
      throw std::runtime_error(
          "good_config_filter: acceptance rate collapsed; parameters violate "
          "the separation hierarchy");
  }
}

double GoodVelocitySampler::acceptance() const {
  return attempts_ == 0
             ? 1.0
             : static_cast<double>(accepted_) / static_cast<double>(attempts_);
}

GoodVelocitySampler good_config_filter(const Mat& X_s,
                                       const SystemParams& params, double eta,
                                       double eps0) {
  return GoodVelocitySampler(X_s, params, eta, eps0);
}

BadSetBreakdown bad_set_breakdown(const PhaseConfig& stage, int target,
                                  int ell, const Mat& omega,
                                  const Mat& adjoined_velocities,
                                  const SystemParams& params, double eta) {
  require(target >= 1 && target <= stage.m(),
          "bad_set_breakdown: target out of range");
  require(omega.cols() == ell && adjoined_velocities.cols() == ell,
          "bad_set_breakdown: block shape mismatch");
  BadSetBreakdown out;
  const int m = stage.m();
  const Vec vbar = stage.V.col(target - 1);
  const double gamma =
      ell >= 2 ? params.zone(ell - 1) / params.zone(ell) : 0.0;
  const double sqrt_gamma = std::sqrt(gamma);
  const double gamma_prime = std::sqrt(1.0 - gamma);

  // impact parameters near the degenerate diagonal
  for (int i = 0; i < ell && !out.omega_small; ++i) {
    if (omega.col(i).norm() <= sqrt_gamma) out.omega_small = true;
    for (int j = i + 1; j < ell && !out.omega_small; ++j)
      if ((omega.col(i) - omega.col(j)).norm() <= sqrt_gamma)
        out.omega_small = true;
  }

  // post-collisional velocities for the starred families
  Mat tuple(stage.dim(), ell + 1);
  tuple.col(0) = vbar;
  tuple.rightCols(ell) = adjoined_velocities;
  const VelocityTuple post = collide(omega, VelocityTuple(tuple));
  const Vec vbar_star = post.v.col(0);

  auto check_vel_families = [&](const Vec& vref, const Mat& vadj, bool& v_flag,
                                bool& a_flag, bool& u_flag) {
    for (int i = 0; i < ell; ++i) {
      const Vec dvi = vadj.col(i) - vref;
      if (dvi.norm() < eta) v_flag = true;
      if (std::abs(omega.col(i).dot(dvi)) >=
          gamma_prime * omega.col(i).norm() * dvi.norm())
        a_flag = true;
      for (int j = i + 1; j < ell; ++j) {
        const Vec dvij = vadj.col(i) - vadj.col(j);
        if (dvij.norm() < eta) v_flag = true;
        if (std::abs((omega.col(i) - omega.col(j)).dot(dvij)) >=
            gamma_prime * (omega.col(i) - omega.col(j)).norm() * dvij.norm())
          a_flag = true;
      }
    }
    for (int j = 0; j < m; ++j) {
      if (j == target - 1) continue;
      Vec axis = stage.X.col(j) - stage.X.col(target - 1);
      const double len = axis.norm();
      if (len <= 0.0) continue;
      axis /= len;
      for (int i = 0; i < ell; ++i)
        if (cylinder_distance(vadj.col(i), axis) <= eta) u_flag = true;
    }
  };

  check_vel_families(vbar, adjoined_velocities, out.v_close, out.a_parallel,
                     out.u_cylinder);
  Mat vadj_star = post.v.rightCols(ell);
  check_vel_families(vbar_star, vadj_star, out.v_close_star,
                     out.a_parallel_star, out.u_cylinder_star);
  // the deflected target velocity can also point along an earlier particle
  for (int j = 0; j < m && !out.u_cylinder_star; ++j) {
    if (j == target - 1) continue;
    Vec axis = stage.X.col(j) - stage.X.col(target - 1);
    const double len = axis.norm();
    if (len <= 0.0) continue;
    axis /= len;
    if (cylinder_distance(vbar_star, axis) <= eta) out.u_cylinder_star = true;
  }
  return out;
}

bool bad_set_membership(const PhaseConfig& stage, int target, int ell,
                        const Mat& omega, const Mat& adjoined_velocities,
                        const SystemParams& params, double eta) {
  return bad_set_breakdown(stage, target, ell, omega, adjoined_velocities,
                           params, eta)
      .any();
}

namespace {

struct PairAcc {
  Accumulator bo, bb, diff;
  void merge(const PairAcc& o) {
    bo.merge(o.bo);
    bb.merge(o.bb);
    diff.merge(o.diff);
  }
};

struct Branch {
  std::vector<int> signs;
  std::vector<int> targets;
  int sign_product = 1;
};

std::vector<Branch> enumerate_branches(int s, const std::vector<int>& sigma) {
  const int k = static_cast<int>(sigma.size());
  std::vector<Branch> out;
  std::vector<int> signs(k, -1), targets(k, 1);
  while (true) {
    Branch b;
    b.signs = signs;
    b.targets = targets;
    b.sign_product = 1;
    for (int v : signs) b.sign_product *= v;
    out.push_back(std::move(b));
    // odometer over (signs, targets)
    int pos = 0;
    for (; pos < k; ++pos) {
      if (signs[pos] == -1) {
        signs[pos] = 1;
        break;
      }
      signs[pos] = -1;
      int cap = s;
      for (int i = 0; i < pos; ++i) cap += sigma[i];
      if (targets[pos] < cap) {
        ++targets[pos];
        break;
      }
      targets[pos] = 1;
    }
    if (pos == k) break;
  }
  return out;
}

std::vector<std::vector<int>> enumerate_sigma(int M, int k) {
  std::vector<std::vector<int>> out;
  if (k == 0) {
    out.push_back({});
    return out;
  }
  std::vector<int> cur(k, 1);
  while (true) {
    out.push_back(cur);
    int pos = 0;
    while (pos < k && cur[pos] == M) cur[pos++] = 1;
    if (pos == k) break;
    ++cur[pos];
  }
  return out;
}

struct StratumContext {
  std::vector<int> sigma;
  std::vector<Branch> branches;
  std::vector<SlotSphereMap> omega_maps;
  double vol = 0.0;          // all sampled-domain volume factors
  double weight_bo = 0.0;    // prod 1/sigma_i!
  double weight_bb = 0.0;    // prod A^{sigma_i}
  std::uint64_t n = 0;
};

/// Evaluates the signed branch sum of one draw for both hierarchies.
struct DrawValue {
  double bo = 0.0;
  double bb = 0.0;
};

DrawValue evaluate_draw(const Mat& Xs, const Mat& Vs,
                        const std::vector<double>& times,
                        const std::vector<Mat>& omegas,
                        const std::vector<Mat>& vadjs,
                        const StratumContext& ctx, const TestFunction& phi,
                        const InitialData& f0, const SystemParams& params,
                        const HierarchyOptions& opts, double t_start) {
  const int d = params.d;
  const int s = static_cast<int>(Xs.cols());
  const int k = static_cast<int>(ctx.sigma.size());
  int total = s;
  for (int v : ctx.sigma) total += v;

  const double phi_val = phi.f(Vs);
  DrawValue out;
  if (phi_val == 0.0) return out;

  Mat xbo(d, total), xbb(d, total), vel(d, total);
  for (const Branch& br : ctx.branches) {
    xbo.leftCols(s) = Xs;
    xbb.leftCols(s) = Xs;
    vel.leftCols(s) = Vs;
    int m = s;
    double t_cur = t_start;
    double bprod = 1.0;
    bool dead = false;

    for (int i = 0; i < k && !dead; ++i) {
      const double dt = t_cur - times[i];
      xbo.leftCols(m) -= dt * vel.leftCols(m);
      xbb.leftCols(m) -= dt * vel.leftCols(m);
      t_cur = times[i];

      const int sig = ctx.sigma[i];
      const int target = br.targets[i] - 1;
      Mat dv(d, sig);
      for (int c = 0; c < sig; ++c)
        dv.col(c) = vadjs[i].col(c) - vel.col(target);
      const double b = cross_section(omegas[i], dv);
      if (b <= 0.0) {
        dead = true;
        break;
      }
      if (opts.exclude_bad_sets) {
        PhaseConfig stage(xbo.leftCols(m), vel.leftCols(m));
        if (bad_set_membership(stage, target + 1, sig, omegas[i], vadjs[i],
                               params, opts.eta)) {
          dead = true;
          break;
        }
      }
      bprod *= b;

      const double eps = params.zone(sig);
      for (int c = 0; c < sig; ++c) {
        xbo.col(m + c) = xbo.col(target);
        xbb.col(m + c) = xbb.col(target) + br.signs[i] * eps * omegas[i].col(c);
      }
      if (br.signs[i] == 1) {
        Mat tuple(d, sig + 1);
        tuple.col(0) = vel.col(target);
        tuple.rightCols(sig) = vadjs[i];
        const VelocityTuple post = collide(omegas[i], VelocityTuple(tuple));
        vel.col(target) = post.v.col(0);
        vel.middleCols(m, sig) = post.v.rightCols(sig);
      } else {
        vel.middleCols(m, sig) = vadjs[i];
      }
      m += sig;
    }
    if (dead) continue;

    xbo.leftCols(m) -= t_cur * vel.leftCols(m);
    xbb.leftCols(m) -= t_cur * vel.leftCols(m);

    PhaseConfig zbo(xbo.leftCols(m), vel.leftCols(m));
    const double fbo = f0.tensor(zbo);
    out.bo += br.sign_product * bprod * fbo;

    PhaseConfig zbb(xbb.leftCols(m), vel.leftCols(m));
    double fbb = f0.tensor(zbb);
    if (fbb != 0.0 && !in_phase_space(zbb, params)) fbb = 0.0;
    out.bb += br.sign_product * bprod * fbb;
  }
  out.bo *= phi_val;
  out.bb *= phi_val;
  return out;
}

}  // namespace

TermEstimate elementary_observable_pair(const TestFunction& phi,
                                        const InitialData& f0, const Mat& X_s,
                                        int k, double t,
                                        const SystemParams& params,
                                        std::uint64_t n_samples,
                                        const HierarchyOptions& opts) {
  const int s = static_cast<int>(X_s.cols());
  const int d = params.d;
  require(X_s.rows() == d, "elementary_observable: X_s dimension mismatch");
  require(k >= 0 && k <= params.n_trunc,
          "elementary_observable: depth exceeds the truncation");
  require(s < params.n_trunc,
          "elementary_observable: need s < n_trunc");
  const LwpConstants lwp = lwp_constants(params, opts.C_d);
  require(t <= lwp.T, "elementary_observable: t beyond the well-posedness time");

  const double ball_s = ball_volume(d * s, params.R);

  // empty separated-time simplex: the functional vanishes identically
  const double t_free = t - (k + 1) * params.delta;
  if (k > 0 && t_free <= 0.0) {
    TermEstimate zero;
    zero.boltzmann.samples = zero.bbgky.samples = zero.difference.samples =
        n_samples;
    return zero;
  }

  // strata over order sequences, allocated by their a-priori weight
  std::vector<StratumContext> strata;
  double wsum = 0.0;
  for (auto& sigma : enumerate_sigma(params.M, k)) {
    StratumContext ctx;
    ctx.sigma = sigma;
    ctx.branches = enumerate_branches(s, sigma);
    ctx.weight_bo = 1.0;
    ctx.weight_bb = 1.0;
    double vol = ball_s;
    if (k > 0) vol *= std::pow(t_free, k) / std::tgamma(k + 1.0);
    int cur = s;
    for (int sig : sigma) {
      double fact = 1.0;
      for (int j = 2; j <= sig; ++j) fact *= j;
      ctx.weight_bo /= fact;
      ctx.weight_bb *= bbgky_prefactor(params, sig, cur);
      ctx.omega_maps.push_back(
          slot_invariant_sphere_map(BlockEllipsoid::canonical(sig, d), 1));
      vol *= ellipsoid_area(sig, d) * ball_volume(sig * d, params.R);
      cur += sig;
    }
    ctx.vol = vol;
    wsum += ctx.weight_bo;
    strata.push_back(std::move(ctx));
  }
  for (auto& ctx : strata)
    ctx.n = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(
               std::llround(static_cast<double>(n_samples) * ctx.weight_bo /
                            wsum)));

  std::vector<McEstimate> bo_parts, bb_parts, diff_parts;
  for (std::size_t sidx = 0; sidx < strata.size(); ++sidx) {
    const StratumContext& ctx = strata[sidx];
    ExecPlan plan = opts.exec;
    plan.seed = params.seed;
    plan.stream = opts.exec.stream * 131 + sidx + 1;

    PairAcc acc = run_sharded_custom<PairAcc>(
        ctx.n, plan, [&](int, std::uint64_t count, RngStream& rng) {
          PairAcc local;
          std::vector<double> times(k);
          std::vector<Mat> omegas(k), vadjs(k);
          for (std::uint64_t it = 0; it < count; ++it) {
            Vec vflat = rng.in_ball(d * s, params.R);
            Mat Vs = reshape_dxn(vflat, d, s);
            // times: uniform on the delta-separated simplex
            for (int i = 0; i < k; ++i) times[i] = rng.uniform(0.0, t_free);
            std::sort(times.begin(), times.end(), std::greater<>());
            for (int i = 0; i < k; ++i) times[i] += (k - i) * params.delta;
            for (int i = 0; i < k; ++i) {
              const int sig = ctx.sigma[i];
              Vec u = rng.on_sphere(sig * d);
              omegas[i] = ctx.omega_maps[i].invert(reshape_dxn(u, d, sig));
              Vec w = rng.in_ball(sig * d, params.R);
              vadjs[i] = reshape_dxn(w, d, sig);
            }
            if (!passes_good_filter(X_s, Vs, params, opts.eps0)) {
              local.bo.add(0.0);
              local.bb.add(0.0);
              local.diff.add(0.0);
              continue;
            }
            DrawValue v = evaluate_draw(X_s, Vs, times, omegas, vadjs, ctx,
                                        phi, f0, params, opts, t);
            const double wbb =
                opts.force_factorial_weights ? ctx.weight_bo : ctx.weight_bb;
            local.bo.add(ctx.weight_bo * v.bo);
            local.bb.add(wbb * v.bb);
            local.diff.add(wbb * v.bb - ctx.weight_bo * v.bo);
          }
          return local;
        });
    bo_parts.push_back(acc.bo.estimate(ctx.vol));
    bb_parts.push_back(acc.bb.estimate(ctx.vol));
    diff_parts.push_back(acc.diff.estimate(ctx.vol));
  }

  TermEstimate out;
  out.boltzmann = combine_sum(bo_parts);
  out.bbgky = combine_sum(bb_parts);
  out.difference = combine_sum(diff_parts);
  return out;
}

McEstimate elementary_observable(const TestFunction& phi,
                                 const InitialData& f0, const Mat& X_s, int k,
                                 double t, const SystemParams& params,
                                 Hierarchy variant, std::uint64_t n_samples,
                                 const HierarchyOptions& opts) {
  TermEstimate pair =
      elementary_observable_pair(phi, f0, X_s, k, t, params, n_samples, opts);
  return variant == Hierarchy::boltzmann ? pair.boltzmann : pair.bbgky;
}

SeriesResult observable_series(const TestFunction& phi, const InitialData& f0,
                               const Mat& X_s, double t,
                               const SystemParams& params,
                               std::uint64_t n_samples_per_term,
                               const HierarchyOptions& opts) {
  SeriesResult out;
  const int s = static_cast<int>(X_s.cols());
  const double beta_T = 0.5 * params.beta0;
  const double mu_T = params.mu0 - 0.5 * params.beta0;
  const double c_s = 2.0 * phi.sup_norm * f0.weighted_bound *
                     std::exp(-mu_T * s) *
                     std::pow(2.0 * M_PI / beta_T, 0.5 * params.d * s);

  std::vector<McEstimate> bo, bb, diff;
  for (int k = 0; k <= params.n_trunc; ++k) {
    HierarchyOptions o = opts;
    o.exec.stream = opts.exec.stream * 37 + k;
    out.terms.push_back(elementary_observable_pair(phi, f0, X_s, k, t, params,
                                                   n_samples_per_term, o));
    out.term_envelope.push_back(c_s * std::pow(2.0, -k));
    bo.push_back(out.terms.back().boltzmann);
    bb.push_back(out.terms.back().bbgky);
    diff.push_back(out.terms.back().difference);
  }
  out.remainder_bound = c_s * std::pow(2.0, -(params.n_trunc + 1));
  out.boltzmann = combine_sum(bo);
  out.bbgky = combine_sum(bb);
  out.difference = combine_sum(diff);
  return out;
}

McEstimate collision_operator_Q(
    const std::function<double(const Vec&, const Vec&)>& f, int ell,
    const Vec& x, const Vec& v, const SystemParams& params,
    std::uint64_t n_samples, const ExecPlan& plan) {
  require(ell >= 1 && ell <= params.M, "collision_operator_Q: bad order");
  const int d = params.d;
  const SlotSphereMap map =
      slot_invariant_sphere_map(BlockEllipsoid::canonical(ell, d), 1);
  const double scale = ellipsoid_area(ell, d) * ball_volume(ell * d, params.R);

  Accumulator acc = run_sharded(n_samples, plan, [&](RngStream& rng) -> double {
    Vec u = rng.on_sphere(ell * d);
    Mat omega = map.invert(reshape_dxn(u, d, ell));
    Vec w = rng.in_ball(ell * d, params.R);
    Mat vs = reshape_dxn(w, d, ell);
    Mat dv(d, ell);
    for (int c = 0; c < ell; ++c) dv.col(c) = vs.col(c) - v;
    const double b = cross_section(omega, dv);
    if (b <= 0.0) return 0.0;
    Mat tuple(d, ell + 1);
    tuple.col(0) = v;
    tuple.rightCols(ell) = vs;
    const VelocityTuple post = collide(omega, VelocityTuple(tuple));
    double gain = f(x, post.v.col(0));
    double loss = f(x, v);
    for (int c = 1; c <= ell && (gain != 0.0 || loss != 0.0); ++c) {
      gain *= f(x, post.v.col(c));
      loss *= f(x, vs.col(c - 1));
    }
    return (gain - loss) * b;
  });
  return acc.estimate(scale);
}

std::vector<ConvergenceRow> convergence_experiment(
    const TestFunction& phi, const InitialData& f0,
    const std::vector<Mat>& probes, double t,
    const std::vector<std::int64_t>& N_sequence,
    const SystemParams& params_template, std::uint64_t n_samples_per_term,
    const HierarchyOptions& opts) {
  require(!probes.empty(), "convergence_experiment: empty probe set");
  const double delta_frac = params_template.delta / params_template.eps[0];
  std::vector<ConvergenceRow> rows;
  for (std::size_t ni = 0; ni < N_sequence.size(); ++ni) {
    const auto t0 = std::chrono::steady_clock::now();
    SystemParams p = make_scaled_params(
        params_template.d, params_template.M, N_sequence[ni], delta_frac,
        params_template.R, params_template.rho, params_template.beta0,
        params_template.mu0, params_template.n_trunc, params_template.seed,
        params_template.ratio_max);
    ConvergenceRow row;
    row.N = N_sequence[ni];
    double best = -1.0;
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
      HierarchyOptions o = opts;
      o.exec.stream = opts.exec.stream * 1009 + pi;  // shared across N
      SeriesResult res =
          observable_series(phi, f0, probes[pi], t, p, n_samples_per_term, o);
      if (std::abs(res.difference.value) > best) {
        best = std::abs(res.difference.value);
        row.difference = std::abs(res.difference.value);
        row.std_error = res.difference.std_error;
        row.samples = res.difference.samples;
      }
    }
    row.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace polykin
