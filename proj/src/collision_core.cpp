#include "polykin/collision_core.hpp"

#include <cmath>
#include <stdexcept>

namespace polykin {

double ellipsoid_level(const Mat& omega) {
  const int ell = static_cast<int>(omega.cols());
  double level = 0.0;
  for (int i = 0; i < ell; ++i) {
    level += omega.col(i).squaredNorm();
    for (int j = i + 1; j < ell; ++j)
      level += (omega.col(i) - omega.col(j)).squaredNorm();
  }
  return level;
}

Mat apply_block_form(const Mat& nu) {
  const int ell = static_cast<int>(nu.cols());
  Vec colsum = nu.rowwise().sum();
  Mat out = (ell + 1) * nu;
  out.colwise() -= colsum;
  return out;
}

double cross_section(const Mat& omega, const Mat& nu) {
  if (omega.rows() != nu.rows() || omega.cols() != nu.cols())
    throw std::invalid_argument("cross_section: shape mismatch");
  return (omega.array() * apply_block_form(nu).array()).sum();
}

Mat relative_velocities(const VelocityTuple& v) {
  const int ell = v.ell();
  Mat dv(v.dim(), ell);
  for (int i = 0; i < ell; ++i) dv.col(i) = v.v.col(i + 1) - v.v.col(0);
  return dv;
}

double impact_factor(const Mat& omega, const VelocityTuple& v) {
  const int ell = v.ell();
  return 2.0 / (ell + 1) * cross_section(omega, relative_velocities(v));
}

VelocityTuple collide(const Mat& omega, const VelocityTuple& v,
                      double omega_tol) {
  const int ell = v.ell();
  if (omega.cols() != ell || omega.rows() != v.dim())
    throw std::invalid_argument("collide: omega/velocity shape mismatch");
  if (std::abs(ellipsoid_level(omega) - 1.0) > omega_tol)
    throw std::invalid_argument("collide: invalid impact parameters "
                                "(omega off the interaction ellipsoid)");
  const double c = impact_factor(omega, v);
  Vec omega_sum = omega.rowwise().sum();
  VelocityTuple out(v.v);
  out.v.col(0) += c * omega_sum;
  for (int j = 0; j < ell; ++j)
    out.v.col(j + 1) += c * (omega_sum - (ell + 1) * omega.col(j));
  return out;
}

ContactKind classify(const Mat& omega, const VelocityTuple& v,
                     double grazing_tol) {
  const double b = cross_section(omega, relative_velocities(v));
  if (b < -grazing_tol) return ContactKind::pre;
  if (b > grazing_tol) return ContactKind::post;
  return ContactKind::grazing;
}

double relative_speed(const VelocityTuple& v) {
  const int n = v.ell() + 1;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      s += (v.v.col(i) - v.v.col(j)).squaredNorm();
  return std::sqrt(s);
}

Mat transition_point(const VelocityTuple& v, const Mat& omega) {
  const double r = relative_speed(v);
  if (!(r > 0.0))
    throw std::invalid_argument("transition_point: degenerate tuple (r = 0)");
  const int ell = v.ell();
  const double c = impact_factor(omega, v);
  Mat nu(v.dim(), ell);
  for (int i = 0; i < ell; ++i)
    nu.col(i) = (v.v.col(0) - v.v.col(i + 1) + (ell + 1) * c * omega.col(i)) / r;
  return nu;
}

TransitionOutput transition_map(const VelocityTuple& v, const Mat& omega) {
  const double r = relative_speed(v);
  if (!(r > 0.0))
    throw std::invalid_argument("transition_map: degenerate tuple (r = 0)");
  if (ellipsoid_level(omega) >= 1.5)
    throw std::invalid_argument("transition_map: omega outside the domain "
                                "(level >= 3/2)");
  const double b = cross_section(omega, relative_velocities(v));
  if (!(b > 0.0))
    throw std::invalid_argument("transition_map: omega outside the domain "
                                "(cross-section not positive)");
  const int ell = v.ell();
  const double c = 2.0 / (ell + 1) * b;
  TransitionOutput out;
  out.r = r;
  out.nu = transition_point(v, omega);
  out.jacobian = 2.0 * std::pow((ell + 1) * c / r, ell * v.dim());
  return out;
}

Mat transition_inverse(const Mat& nu, const VelocityTuple& v) {
  const double r = relative_speed(v);
  if (!(r > 0.0))
    throw std::invalid_argument("transition_inverse: degenerate tuple (r = 0)");
  const int ell = v.ell();
  if (std::abs(ellipsoid_level(nu) - 1.0) > 1e-8)
    throw std::invalid_argument("transition_inverse: nu off the ellipsoid");
  Mat w(v.dim(), ell);
  for (int i = 0; i < ell; ++i)
    w.col(i) = r * nu.col(i) - (v.v.col(0) - v.v.col(i + 1));
  const double c = 2.0 / (ell + 1) * cross_section(w, relative_velocities(v));
  if (!(c > 0.0))
    throw std::invalid_argument("transition_inverse: nu outside the image of "
                                "the post-collisional hemisphere");
  return w * std::pow((ell + 1) * c, -0.5);
}

Mat adjunction_frame_map(int ell, int i, int d) {
  if (i < 1 || i > ell + 1)
    throw std::out_of_range("adjunction_frame_map: slot index out of range");
  Mat coeff = Mat::Identity(ell, ell);
  if (i == 1) {
    coeff.row(0).setOnes();
  } else {
    const int slot = i - 2;  // replaces nu_{i-1}, zero-based
    coeff.row(slot).setOnes();
    coeff(slot, slot) = -static_cast<double>(ell);
  }
  Mat full = Mat::Zero(ell * d, ell * d);
  for (int a = 0; a < ell; ++a)
    for (int b = 0; b < ell; ++b)
      if (coeff(a, b) != 0.0)
        full.block(a * d, b * d, d, d) =
            coeff(a, b) * Mat::Identity(d, d);
  return full;
}

}  // namespace polykin
