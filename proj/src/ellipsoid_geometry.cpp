#include "polykin/ellipsoid_geometry.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace polykin {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Mat reversal(int n) {
  Mat r = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) r(i, n - 1 - i) = 1.0;
  return r;
}

Mat swap_blocks(int n, int a, int b) {
  Mat p = Mat::Identity(n, n);
  if (a != b) {
    p(a, a) = p(b, b) = 0.0;
    p(a, b) = p(b, a) = 1.0;
  }
  return p;
}

}  // namespace

BlockEllipsoid::BlockEllipsoid(int ell_, int d_, Mat coeff_, double level_)
    : ell(ell_), d(d_), coeff(std::move(coeff_)), level(level_) {
  require(ell >= 1 && d >= 2, "BlockEllipsoid: need ell >= 1, d >= 2");
  require(coeff.rows() == ell && coeff.cols() == ell,
          "BlockEllipsoid: coefficient matrix must be ell x ell");
  require(level > 0.0, "BlockEllipsoid: level constant must be positive");
  require((coeff - coeff.transpose()).norm() <= 1e-12 * (1.0 + coeff.norm()),
          "BlockEllipsoid: coefficient matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(coeff);
  require(es.eigenvalues().minCoeff() > 0.0,
          "BlockEllipsoid: coefficient matrix must be positive definite");
}

BlockEllipsoid BlockEllipsoid::canonical(int ell, int d) {
  Mat a = -Mat::Ones(ell, ell);
  a.diagonal().setConstant(static_cast<double>(ell));
  return BlockEllipsoid(ell, d, a, 1.0);
}

double BlockEllipsoid::form(const Mat& x) const {
  // x columns are the blocks; <x, A x> = sum_{ij} a_ij <x_i, x_j>
  return (x.transpose() * x).cwiseProduct(coeff).sum();
}

BlockEllipsoid BlockEllipsoid::transformed(const Mat& s) const {
  Eigen::FullPivLU<Mat> lu(s);
  require(lu.isInvertible(), "BlockEllipsoid: block map must be invertible");
  Mat s_inv = lu.inverse();
  Mat a = s_inv.transpose() * coeff * s_inv;
  a = 0.5 * (a + a.transpose());
  return BlockEllipsoid(ell, d, a, level);
}

double BlockEllipsoid::diameter() const {
  Eigen::SelfAdjointEigenSolver<Mat> es(coeff);
  return 2.0 * std::sqrt(level / es.eigenvalues().minCoeff());
}

Mat FactorMap::to_sphere(const Mat& x) const {
  return (x * L.transpose()) / std::sqrt(level);
}

Mat FactorMap::from_sphere(const Mat& u) const {
  return (u * L_inv.transpose()) * std::sqrt(level);
}

FactorMap factor_map(const BlockEllipsoid& e) {
  // Cholesky of the index-reversed matrix yields a lower-triangular L with
  // L^T L = A (instead of the usual L L^T).
  Mat rev = reversal(e.ell);
  Mat b = rev * e.coeff * rev;
  Eigen::LLT<Mat> llt(b);
  require(llt.info() == Eigen::Success,
          "factor_map: coefficient matrix not positive definite");
  Mat g = llt.matrixL();
  FactorMap f;
  f.L = (rev * g * rev).transpose();
  f.L_inv = f.L.triangularView<Eigen::Lower>().solve(Mat::Identity(e.ell, e.ell));
  f.level = e.level;
  return f;
}

SlotSphereMap slot_invariant_sphere_map(const BlockEllipsoid& e, int i) {
  require(i >= 1 && i <= e.ell, "slot_invariant_sphere_map: slot out of range");
  Mat p = swap_blocks(e.ell, 0, i - 1);
  BlockEllipsoid permuted(e.ell, e.d, p * e.coeff * p, e.level);
  FactorMap f = factor_map(permuted);
  SlotSphereMap t;
  t.slot = i;
  t.fwd = p * (f.L / std::sqrt(e.level)) * p;
  t.inv = p * (f.L_inv * std::sqrt(e.level)) * p;
  t.abs_det = std::pow(std::abs(t.fwd.determinant()), e.d);
  return t;
}

Mat sample_ellipsoid_point(const BlockEllipsoid& e, RngStream& rng) {
  Vec u = rng.on_sphere(e.ell * e.d);
  Mat um = Eigen::Map<const Mat>(u.data(), e.d, e.ell);
  // fixed reference slot 1; the pushforward distribution is slot-independent
  static thread_local int cached_ell = -1, cached_d = -1;
  static thread_local double cached_level = 0.0;
  static thread_local Mat cached_coeff;
  static thread_local SlotSphereMap cached_map;
  if (cached_ell != e.ell || cached_d != e.d || cached_level != e.level ||
      cached_coeff.size() != e.coeff.size() || cached_coeff != e.coeff) {
    cached_map = slot_invariant_sphere_map(e, 1);
    cached_ell = e.ell;
    cached_d = e.d;
    cached_level = e.level;
    cached_coeff = e.coeff;
  }
  return cached_map.invert(um);
}

Mat sample_ellipsoid(const BlockEllipsoid& e, int count, RngStream& rng) {
  Mat out(e.ell * e.d, count);
  for (int c = 0; c < count; ++c) {
    Mat x = sample_ellipsoid_point(e, rng);
    out.col(c) = Eigen::Map<const Vec>(x.data(), x.size());
  }
  return out;
}

McEstimate mc_set_measure(const BlockEllipsoid& e,
                          const std::function<bool(const Mat&)>& pred,
                          std::uint64_t count, const ExecPlan& plan) {
  Accumulator acc = run_sharded(count, plan, [&](RngStream& rng) {
    return pred(sample_ellipsoid_point(e, rng)) ? 1.0 : 0.0;
  });
  return acc.estimate();
}

McEstimate estimate_cap(const BlockEllipsoid& e, double alpha, const Vec& nu,
                        int slot, std::uint64_t count, const ExecPlan& plan) {
  require(alpha >= 0.0 && alpha <= 1.0, "estimate_cap: need alpha in [0, 1]");
  require(nu.norm() > 0.0, "estimate_cap: direction must be nonzero");
  require(slot >= 1 && slot <= e.ell, "estimate_cap: slot out of range");
  const Vec dir = nu.normalized();
  return mc_set_measure(
      e,
      [&, slot, alpha](const Mat& w) {
        const Vec wi = w.col(slot - 1);
        return std::abs(wi.dot(dir)) >= alpha * wi.norm();
      },
      count, plan);
}

McEstimate estimate_pair_cone(const BlockEllipsoid& e, double alpha,
                              const Vec& nu, std::uint64_t count,
                              const ExecPlan& plan) {
  require(e.ell >= 2, "estimate_pair_cone: need ell >= 2");
  require(alpha >= 0.0 && alpha <= 1.0, "estimate_pair_cone: alpha in [0, 1]");
  require(nu.norm() > 0.0, "estimate_pair_cone: direction must be nonzero");
  const Vec dir = nu.normalized();
  return mc_set_measure(
      e,
      [&, alpha](const Mat& w) {
        const Vec diff = w.col(0) - w.col(1);
        return diff.dot(dir) >= alpha * diff.norm();
      },
      count, plan);
}

double cylinder_distance(const Vec& x, const Vec& axis) {
  const double t = x.dot(axis);
  return std::sqrt(std::max(x.squaredNorm() - t * t, 0.0));
}

McEstimate estimate_cylinder(const BlockEllipsoid& e, double rho,
                             const Vec& axis, std::uint64_t count,
                             const ExecPlan& plan) {
  require(rho > 0.0, "estimate_cylinder: need rho > 0");
  require(axis.size() == e.d, "estimate_cylinder: axis dimension mismatch");
  const Vec a = axis.normalized();
  return mc_set_measure(
      e,
      [&, rho](const Mat& w) { return cylinder_distance(w.col(0), a) <= rho; },
      count, plan);
}

McEstimate estimate_ball(const BlockEllipsoid& e, double rho,
                         std::uint64_t count, const ExecPlan& plan) {
  require(rho > 0.0, "estimate_ball: need rho > 0");
  return mc_set_measure(
      e, [rho](const Mat& w) { return w.col(0).norm() <= rho; }, count, plan);
}

McEstimate estimate_strip(const BlockEllipsoid& e, double rho, double mu,
                          double lambda, std::uint64_t count,
                          const ExecPlan& plan) {
  require(e.ell >= 2, "estimate_strip: need ell >= 2");
  require(mu != 0.0 && lambda != 0.0, "estimate_strip: mu, lambda nonzero");
  require(rho > 0.0, "estimate_strip: need rho > 0");
  return mc_set_measure(
      e,
      [&, rho, mu, lambda](const Mat& w) {
        return (mu * w.col(0) - lambda * w.col(1)).norm() <= rho;
      },
      count, plan);
}

McEstimate estimate_annulus(const BlockEllipsoid& e, const Mat& a_form,
                            double rho, double beta, std::uint64_t count,
                            const ExecPlan& plan) {
  require(a_form.rows() == e.ell && a_form.cols() == e.ell,
          "estimate_annulus: form must be ell x ell");
  require((a_form - a_form.transpose()).norm() <=
              1e-12 * (1.0 + a_form.norm()),
          "estimate_annulus: form must be symmetric");
  require(a_form.norm() > 0.0, "estimate_annulus: form must be nonzero");
  require(beta > 0.0 && beta < 1.0 && rho > beta,
          "estimate_annulus: need 0 < beta < 1 < rho/beta");
  // reject forms proportional to the ellipsoid's own quadratic form
  const double t = (e.coeff.cwiseProduct(a_form)).sum() /
                   (e.coeff.cwiseProduct(e.coeff)).sum();
  require((a_form - t * e.coeff).norm() > 1e-10 * a_form.norm(),
          "estimate_annulus: form is proportional to the ellipsoid's form");
  return mc_set_measure(
      e,
      [&, rho, beta](const Mat& w) {
        const double q = (w.transpose() * w).cwiseProduct(a_form).sum();
        return q >= rho - beta && q <= rho + beta;
      },
      count, plan);
}

}  // namespace polykin
