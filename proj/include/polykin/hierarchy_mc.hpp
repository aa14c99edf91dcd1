#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "polykin/collision_core.hpp"
#include "polykin/ellipsoid_geometry.hpp"
#include "polykin/mc_stats.hpp"

namespace polykin {

enum class Hierarchy { boltzmann, bbgky };

/// One sampled adjunction history: orders, signs, targets, separated times
/// and impact data defining a depth-k pseudo-trajectory.
struct AdjunctionSequence {
  int s = 1;
  std::vector<int> sigma;          // sigma_i in 1..M
  std::vector<int> signs;          // +1 post-collisional, -1 pre-collisional
  std::vector<int> targets;        // m_i in 1..s+sigma_tilde(i-1), 1-based
  std::vector<double> times;       // strictly decreasing, gaps >= delta
  std::vector<Mat> omegas;         // d x sigma_i, on the unit ellipsoid
  std::vector<Mat> velocities;     // d x sigma_i, adjoined velocities

  int depth() const { return static_cast<int>(sigma.size()); }
  int sigma_tilde(int j) const;  // sum of the first j orders

  /// Structural validation against params and the observation time t.
  void validate(const SystemParams& params, double t) const;
};

/// Stage views of a pseudo-trajectory: arrival[i] is the configuration just
/// before adjunction i+1 (arrival[k] is the time-zero endpoint).
struct PseudoTrajectory {
  Hierarchy variant = Hierarchy::boltzmann;
  std::vector<PhaseConfig> arrival;    // size k+1
  std::vector<PhaseConfig> departure;  // size k, after each adjunction
};

/// Runs the backward adjunction recursion from Z_s at time t_start.
PseudoTrajectory build_pseudo_trajectory(const PhaseConfig& zs,
                                         const AdjunctionSequence& adj,
                                         const SystemParams& params,
                                         Hierarchy variant, double t_start);

/// One-particle initial density f0(x, v) with its Maxwellian-weighted bound
/// sup |f0| e^{mu0 + beta0 |v|^2 / 2}.
struct InitialData {
  std::function<double(const Vec&, const Vec&)> f;
  double weighted_bound = 0.5;

  double tensor(const PhaseConfig& z) const;
};

/// Gaussian velocity profile times a compactly supported smooth spatial bump.
InitialData make_gaussian_bump(double beta0, double mu0, double space_radius);

/// Per-axis gaussian weights; every entry must be >= beta0 for the data to
/// satisfy the Maxwellian-weighted bound. Not a function of the collision
/// invariants, so collision terms act on it at first order.
InitialData make_gaussian_bump(const Vec& beta_axes, double mu0,
                               double space_radius);

/// Spatially uniform Maxwellian velocity profile.
InitialData make_maxwellian(double beta0, double mu0);

/// A^ell_{N, eps_{ell+1}, s} = eps_{ell+1}^{ell d - 1} * binom(N - s, ell);
/// zero when N - s < ell.
double bbgky_prefactor(const SystemParams& params, int ell, int s);

struct LwpConstants {
  std::vector<double> C;  // C[l-1] bounds the (l+1)-nary layer, l = 1..M
  double T = 0.0;
  double C_tilde = 0.0;
  double C_d = 1.0;
};

/// Collision-layer constant at given (T, lambda).
double wp_constant(int d, int ell, double beta0, double mu0, double T,
                   double lambda, double C_d);

/// Self-consistent set: T = 1 / (2 C_tilde) with C_tilde summing the layer
/// bounds over all orders, evaluated at lambda = beta0 / 2T.
LwpConstants lwp_constants(const SystemParams& params, double C_d = 1.0);

/// Smallest pair separation of the backward free flow over t in [t0, inf).
double min_backward_separation(const Vec& dx, const Vec& dv, double t0);

/// Z in G(theta, t0): every pair separation stays above theta backward in
/// time after t0.
bool is_good_config(const PhaseConfig& z, double theta, double t0);

/// The operational velocity filter: accept V iff (X, V) lands in
/// G(eps_{M+1}, 0) and G(eps0, delta).
bool passes_good_filter(const Mat& X, const Mat& V, const SystemParams& params,
                        double eps0);

/// Rejection sampler over B_R^{ds} for velocities passing the good filter.
class GoodVelocitySampler {
 public:
  GoodVelocitySampler(Mat X, const SystemParams& params, double eta,
                      double eps0, double acceptance_floor = 1e-4);

  /// Draws an accepted velocity set (d x s). Throws when the running
  /// acceptance rate falls below the floor.
  Mat sample(RngStream& rng);

  double acceptance() const;

 private:
  Mat X_;
  SystemParams params_;
  double eta_;
  double eps0_;
  double floor_;
  std::uint64_t attempts_ = 0;
  std::uint64_t accepted_ = 0;
};

GoodVelocitySampler good_config_filter(const Mat& X_s,
                                       const SystemParams& params, double eta,
                                       double eps0);

/// Family breakdown of the pathological candidate set at one adjunction.
struct BadSetBreakdown {
  bool omega_small = false;  // impact parameters near the small diagonal
  bool v_close = false;      // adjoined velocities too close (pre)
  bool a_parallel = false;   // impact/velocity near-parallel (pre)
  bool u_cylinder = false;   // velocity aimed along an earlier particle (pre)
  bool v_close_star = false;
  bool a_parallel_star = false;
  bool u_cylinder_star = false;

  bool any() const {
    return omega_small || v_close || a_parallel || u_cylinder || v_close_star ||
           a_parallel_star || u_cylinder_star;
  }
};

BadSetBreakdown bad_set_breakdown(const PhaseConfig& stage, int target,
                                  int ell, const Mat& omega,
                                  const Mat& adjoined_velocities,
                                  const SystemParams& params, double eta);

bool bad_set_membership(const PhaseConfig& stage, int target, int ell,
                        const Mat& omega, const Mat& adjoined_velocities,
                        const SystemParams& params, double eta);

/// Bounded test function of the s velocities with a known sup norm.
struct TestFunction {
  std::function<double(const Mat&)> f;  // argument is V_s, d x s
  double sup_norm = 1.0;
};

struct HierarchyOptions {
  double eta = 0.05;
  double eps0 = 0.05;
  bool exclude_bad_sets = true;
  bool force_factorial_weights = false;  // test hook: bbgky uses 1/sigma!
  double C_d = 1.0;
  ExecPlan exec;
};

/// Paired estimate of one Duhamel term (depth k) for both hierarchies under
/// common random numbers.
struct TermEstimate {
  McEstimate boltzmann;
  McEstimate bbgky;
  McEstimate difference;  // bbgky - boltzmann, per-sample paired
};

TermEstimate elementary_observable_pair(const TestFunction& phi,
                                        const InitialData& f0, const Mat& X_s,
                                        int k, double t,
                                        const SystemParams& params,
                                        std::uint64_t n_samples,
                                        const HierarchyOptions& opts);

/// Single-variant view of the paired estimator.
McEstimate elementary_observable(const TestFunction& phi,
                                 const InitialData& f0, const Mat& X_s, int k,
                                 double t, const SystemParams& params,
                                 Hierarchy variant, std::uint64_t n_samples,
                                 const HierarchyOptions& opts);

struct SeriesResult {
  std::vector<TermEstimate> terms;     // k = 0..n_trunc
  std::vector<double> term_envelope;   // 2^{-k} a-priori bound per term
  double remainder_bound = 0.0;        // 2^{-(n+1)} tail bound
  McEstimate boltzmann;
  McEstimate bbgky;
  McEstimate difference;
};

/// Duhamel series truncated at depth n_trunc, per-term magnitudes reported.
SeriesResult observable_series(const TestFunction& phi, const InitialData& f0,
                               const Mat& X_s, double t,
                               const SystemParams& params,
                               std::uint64_t n_samples_per_term,
                               const HierarchyOptions& opts);

/// MC estimate of the (ell+1)-nary collision operator at a phase point.
McEstimate collision_operator_Q(
    const std::function<double(const Vec&, const Vec&)>& f, int ell,
    const Vec& x, const Vec& v, const SystemParams& params,
    std::uint64_t n_samples, const ExecPlan& plan);

struct ConvergenceRow {
  std::int64_t N = 0;
  double difference = 0.0;
  double std_error = 0.0;
  std::uint64_t samples = 0;
  double wallclock_s = 0.0;
};

/// Per-N sup over the probe set of |I^N - I^infty| with shared streams.
std::vector<ConvergenceRow> convergence_experiment(
    const TestFunction& phi, const InitialData& f0,
    const std::vector<Mat>& probes, double t,
    const std::vector<std::int64_t>& N_sequence,
    const SystemParams& params_template, std::uint64_t n_samples_per_term,
    const HierarchyOptions& opts);

}  // namespace polykin
