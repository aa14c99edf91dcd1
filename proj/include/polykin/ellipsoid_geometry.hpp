#pragma once

#include <functional>

#include "polykin/kinetic_types.hpp"
#include "polykin/mc_stats.hpp"

namespace polykin {

/// An (ell d - 1)-dimensional block ellipsoid { x : <x, A x> = c } whose
/// matrix is an ell x ell coefficient matrix of identity d-blocks.
struct BlockEllipsoid {
  int ell = 1;
  int d = 2;
  Mat coeff;      // ell x ell, symmetric positive definite
  double level = 1.0;

  BlockEllipsoid() = default;
  BlockEllipsoid(int ell_, int d_, Mat coeff_, double level_);

  /// The unit interaction ellipsoid: coeff = (ell+1) I - J, level 1.
  static BlockEllipsoid canonical(int ell, int d);

  /// Quadratic form <x, A x> of a point laid out as a d x ell matrix.
  double form(const Mat& x) const;

  /// Image under an invertible block map with coefficient matrix s.
  BlockEllipsoid transformed(const Mat& s) const;

  /// Largest distance between two surface points.
  double diameter() const;
};

/// Lower-triangular block factor L with L^T L = A; maps the ellipsoid onto
/// the sphere of radius sqrt(level).
struct FactorMap {
  Mat L;        // ell x ell lower-triangular coefficients
  Mat L_inv;
  double level = 1.0;

  /// x on the ellipsoid -> point on the unit sphere (d x ell layout).
  Mat to_sphere(const Mat& x) const;
  /// point on the unit sphere -> point on the ellipsoid.
  Mat from_sphere(const Mat& u) const;
};

FactorMap factor_map(const BlockEllipsoid& e);

/// Linear bijection T_i from the ellipsoid to the unit sphere that keeps
/// block i (1-based) invariant up to a positive rescaling.
struct SlotSphereMap {
  Mat fwd;      // ell x ell coefficients
  Mat inv;
  double abs_det = 1.0;  // |det| of the full ell*d x ell*d map
  int slot = 1;

  Mat apply(const Mat& x) const { return x * fwd.transpose(); }
  Mat invert(const Mat& u) const { return u * inv.transpose(); }
};

SlotSphereMap slot_invariant_sphere_map(const BlockEllipsoid& e, int i);

/// Points on the ellipsoid distributed as the sphere pushforward under
/// T_i^{-1}; that distribution does not depend on i. Output is ell*d x count.
Mat sample_ellipsoid(const BlockEllipsoid& e, int count, RngStream& rng);

/// Single sample as a d x ell matrix.
Mat sample_ellipsoid_point(const BlockEllipsoid& e, RngStream& rng);

/// Normalized surface fraction of { x : pred(x) } on the ellipsoid.
/// pred receives the point as a d x ell matrix.
McEstimate mc_set_measure(const BlockEllipsoid& e,
                          const std::function<bool(const Mat&)>& pred,
                          std::uint64_t count, const ExecPlan& plan);

/// Cap set in slot i: |<w_i, nu>| >= alpha |w_i| |nu|.
McEstimate estimate_cap(const BlockEllipsoid& e, double alpha, const Vec& nu,
                        int slot, std::uint64_t count, const ExecPlan& plan);

/// One-sided pair cone on slots (1,2): <w_1 - w_2, nu> >= alpha |w_1 - w_2| |nu|.
McEstimate estimate_pair_cone(const BlockEllipsoid& e, double alpha,
                              const Vec& nu, std::uint64_t count,
                              const ExecPlan& plan);

/// Distance of x to the line through the origin with unit direction `axis`.
double cylinder_distance(const Vec& x, const Vec& axis);

/// Cylinder slice through slot 1: dist(w_1, axis line) <= rho.
McEstimate estimate_cylinder(const BlockEllipsoid& e, double rho,
                             const Vec& axis, std::uint64_t count,
                             const ExecPlan& plan);

/// Ball slice through slot 1: |w_1| <= rho.
McEstimate estimate_ball(const BlockEllipsoid& e, double rho,
                         std::uint64_t count, const ExecPlan& plan);

/// Strip on slots (1,2): |mu w_1 - lambda w_2| <= rho.
McEstimate estimate_strip(const BlockEllipsoid& e, double rho, double mu,
                          double lambda, std::uint64_t count,
                          const ExecPlan& plan);

/// Annulus of a second block form: rho - beta <= <x, A_form x> <= rho + beta.
/// A_form must not be proportional to the ellipsoid's own form.
McEstimate estimate_annulus(const BlockEllipsoid& e, const Mat& a_form,
                            double rho, double beta, std::uint64_t count,
                            const ExecPlan& plan);

}  // namespace polykin
