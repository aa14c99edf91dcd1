#pragma once

#include "polykin/kinetic_types.hpp"

namespace polykin {

/// Velocities of the ell+1 particles taking part in one interaction,
/// one column per particle (column 0 is the reference particle).
struct VelocityTuple {
  Mat v;

  VelocityTuple() = default;
  explicit VelocityTuple(Mat vv) : v(std::move(vv)) {}

  int ell() const { return static_cast<int>(v.cols()) - 1; }
  int dim() const { return static_cast<int>(v.rows()); }
};

/// Level function of the unit interaction ellipsoid:
/// Psi(w) = sum_i |w_i|^2 + sum_{i<j} |w_i - w_j|^2.
double ellipsoid_level(const Mat& omega);

/// The block form A nu with A = (ell+1) I - J at block-coefficient level,
/// i.e. (A nu)_i = (ell+1) nu_i - sum_j nu_j.
Mat apply_block_form(const Mat& nu);

/// Cross-section b_{ell+1}(omega, nu) = <omega, A nu>.
double cross_section(const Mat& omega, const Mat& nu);

/// Column differences v_{i+1} - v_1, the argument convention of the
/// cross-section for a velocity tuple.
Mat relative_velocities(const VelocityTuple& v);

/// c(omega, V) = 2/(ell+1) * b(omega, v_2 - v_1, ..., v_{ell+1} - v_1).
double impact_factor(const Mat& omega, const VelocityTuple& v);

/// The (ell+1)-order collisional transformation T_omega applied to v.
/// omega must lie on the unit interaction ellipsoid (tolerance-checked).
VelocityTuple collide(const Mat& omega, const VelocityTuple& v,
                      double omega_tol = 1e-8);

/// Sign classification of the contact: b < 0 pre, b > 0 post, |b| <= tol
/// grazing.
ContactKind classify(const Mat& omega, const VelocityTuple& v,
                     double grazing_tol = 1e-12);

struct TransitionOutput {
  Mat nu;
  double jacobian = 0.0;
  double r = 0.0;
};

/// Relative velocity magnitude r = sqrt(sum_{i<j} |v_i - v_j|^2).
double relative_speed(const VelocityTuple& v);

/// The transition map evaluated without domain checks; used for finite
/// differencing off the constraint surface. Requires r > 0.
Mat transition_point(const VelocityTuple& v, const Mat& omega);

/// Transition map omega -> nu = r^{-1} (v_1^* - v_2^*, ..., v_1^* - v_{ell+1}^*)
/// with closed-form Jacobian 2 ((ell+1) c / r)^{ell d}.
/// Domain: Psi(omega) < 3/2 and b > 0 (post-collisional side), r > 0.
TransitionOutput transition_map(const VelocityTuple& v, const Mat& omega);

/// Inverse of the transition map: omega = lambda (r nu - v') with
/// lambda = ((ell+1) c(r nu - v', V))^{-1/2}. nu must lie on the unit
/// ellipsoid and off the excluded point r^{-1} v'.
Mat transition_inverse(const Mat& nu, const VelocityTuple& v);

/// Frame maps S_i on R^{ell d} used to track post-collisional velocities:
/// S_1 nu = (sum nu_j, nu_2, ..., nu_ell), and S_{i+1} replaces slot i with
/// -ell nu_i + sum_{j != i} nu_j. i ranges over 1..ell+1.
Mat adjunction_frame_map(int ell, int i, int d);

}  // namespace polykin
