#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace polykin {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Model parameters: dimension, maximum interaction order, particle count,
/// interaction zones and truncations.
///
/// eps[l-1] is the zone for (l+1)-particle interactions, l = 1..M, so
/// eps = (eps_2, ..., eps_{M+1}) in increasing order.
struct SystemParams {
  int d = 2;
  int M = 1;
  std::int64_t N = 0;
  Vec eps;
  double delta = 0.0;
  double R = 1.0;
  double rho = 2.0;
  double beta0 = 1.0;
  double mu0 = 0.0;
  int n_trunc = 1;
  std::uint64_t seed = 0;

  /// Enforcement factor for the strict zone separation: eps_l / eps_{l+1}
  /// must not exceed this. Not part of the wire format.
  double ratio_max = 0.1;

  /// Zone radius for (ell+1)-nary interactions, ell in [1, M].
  double zone(int ell) const { return eps[ell - 1]; }

  /// Throws std::invalid_argument if any structural invariant fails.
  void validate() const;
};

void to_json(nlohmann::json& j, const SystemParams& p);
void from_json(const nlohmann::json& j, SystemParams& p);

/// Positions and velocities of m particles, one column per particle.
struct PhaseConfig {
  Mat X;
  Mat V;

  PhaseConfig() = default;
  PhaseConfig(Mat x, Mat v) : X(std::move(x)), V(std::move(v)) {}

  int m() const { return static_cast<int>(X.cols()); }
  int dim() const { return static_cast<int>(X.rows()); }

  double kinetic_energy() const { return 0.5 * V.squaredNorm(); }

  /// Free flight by time t (t may be negative).
  PhaseConfig advected(double t) const { return {X + t * V, V}; }
};

/// Impact parameters of an (ell+1)-nary interaction: ell columns on the unit
/// interaction ellipsoid, together with the adjoined velocities.
struct ImpactParams {
  Mat omega;
  Mat velocities;

  int ell() const { return static_cast<int>(omega.cols()); }
  void validate(double tol = 1e-10) const;
};

enum class ContactKind { pre, post, grazing };

const char* to_string(ContactKind k);

struct CollisionEvent {
  double t = 0.0;
  int order = 2;  // number of particles involved, i.e. ell + 1
  std::vector<int> tuple;
  ContactKind kind = ContactKind::pre;
};

/// exp of the scaled-params closed form: eps_{l+1} = (l! N)^{-1/(d - 1/l)}.
SystemParams make_scaled_params(int d, int M, std::int64_t N, double delta_frac,
                                double R, double rho, double beta0, double mu0,
                                int n_trunc, std::uint64_t seed,
                                double ratio_max = 0.1);

/// Symmetric distance of the points given as columns:
/// sqrt(sum over pairs |x_i - x_j|^2).
double symmetric_distance(const Mat& points);

/// Squared symmetric distance of a particle subset of Z.
double symmetric_distance_sq(const PhaseConfig& z, std::span<const int> tuple);

/// True iff every tuple of every admissible order clears its zone.
/// A relative slack loosens the boundary test: d^2 >= eps^2 (1 - slack_rel).
bool in_phase_space(const PhaseConfig& z, const SystemParams& params,
                    double slack_rel = 0.0);

}  // namespace polykin
