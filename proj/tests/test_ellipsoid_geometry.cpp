#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "oracle_helpers.hpp"
#include "polykin/ellipsoid_geometry.hpp"

using namespace polykin;

TEST_CASE("canonical block ellipsoid") {
  for (int ell : {1, 2, 3, 4}) {
    const BlockEllipsoid e = BlockEllipsoid::canonical(ell, 2);
    Eigen::SelfAdjointEigenSolver<Mat> es(e.coeff);
    CHECK(es.eigenvalues()(0) == doctest::Approx(1.0));
    for (int i = 1; i < ell; ++i)
      CHECK(es.eigenvalues()(i) == doctest::Approx(ell + 1.0));
  }
  CHECK_THROWS_AS(BlockEllipsoid(2, 2, -Mat::Identity(2, 2), 1.0),
                  std::invalid_argument);
}

TEST_CASE("factor map: examples and reconstruction") {
  // identity form factors to the identity
  const BlockEllipsoid sphere(2, 2, Mat::Identity(2, 2), 1.0);
  FactorMap fs = factor_map(sphere);
  CHECK((fs.L - Mat::Identity(2, 2)).norm() <= 1e-14);

  // canonical ell=2 coefficients, checked against an independent Cholesky
  const BlockEllipsoid e2 = BlockEllipsoid::canonical(2, 2);
  FactorMap f2 = factor_map(e2);
  CHECK(f2.L(0, 1) == 0.0);  // lower triangular
  CHECK((f2.L.transpose() * f2.L - e2.coeff).norm() <= 1e-12);
  Eigen::LLT<Mat> llt(e2.coeff);
  Mat g = llt.matrixL();
  CHECK((g * g.transpose() - f2.L.transpose() * f2.L).norm() <= 1e-12);

  // random SPD block coefficients: reconstruction and round trip
  RngStream rng(21, 0);
  for (int rep = 0; rep < 30; ++rep) {
    Mat b(3, 3);
    for (int i = 0; i < 9; ++i) b(i / 3, i % 3) = rng.gaussian();
    Mat spd = b * b.transpose() + 0.5 * Mat::Identity(3, 3);
    const BlockEllipsoid e(3, 2, spd, 2.0);
    FactorMap f = factor_map(e);
    CHECK((f.L.transpose() * f.L - spd).norm() <= 1e-12 * spd.norm());

    Vec flat(6);
    rng.fill_gaussian(flat);
    Mat x = Eigen::Map<Mat>(flat.data(), 2, 3);
    Mat u = f.to_sphere(x);
    CHECK((f.from_sphere(u) - x).norm() <= 1e-12);
    CHECK((x * f.L.transpose() * f.L_inv.transpose() - x).norm() <= 1e-12);
  }
}

TEST_CASE("slot-invariant sphere map") {
  // ell = 1: the canonical ellipsoid already is the sphere
  const BlockEllipsoid e1 = BlockEllipsoid::canonical(1, 3);
  SlotSphereMap t1 = slot_invariant_sphere_map(e1, 1);
  CHECK((t1.fwd - Mat::Identity(1, 1)).norm() <= 1e-14);
  CHECK(t1.abs_det == doctest::Approx(1.0));

  // ell = 2: image on the sphere, slot scaled by one fixed positive factor
  const BlockEllipsoid e2 = BlockEllipsoid::canonical(2, 2);
  RngStream rng(22, 0);
  for (int slot : {1, 2}) {
    SlotSphereMap t = slot_invariant_sphere_map(e2, slot);
    double k_seen = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      Mat x = sample_ellipsoid_point(e2, rng);
      Mat y = t.apply(x);
      CHECK(std::abs(y.squaredNorm() - 1.0) <= 1e-10);
      CHECK((t.invert(y) - x).norm() <= 1e-12);
      const Vec xi = x.col(slot - 1), yi = y.col(slot - 1);
      const double k = yi.norm() / xi.norm();
      CHECK((yi - k * xi).norm() <= 1e-10 * yi.norm() + 1e-14);
      if (rep == 0)
        k_seen = k;
      else
        CHECK(k == doctest::Approx(k_seen).epsilon(1e-10));
    }
    CHECK(k_seen > 0.0);
  }

  CHECK_THROWS_AS(slot_invariant_sphere_map(e2, 3), std::invalid_argument);

  // |det T_i| does not depend on the slot
  SlotSphereMap a = slot_invariant_sphere_map(e2, 1);
  SlotSphereMap b = slot_invariant_sphere_map(e2, 2);
  CHECK(a.abs_det == doctest::Approx(b.abs_det).epsilon(1e-12));
  // (ell+1)^{(ell-1)d/2} for the canonical form at level 1
  CHECK(a.abs_det == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("pushforward identity: two slots give one measure") {
  // the same set measured through T_1- and T_2-pushforward sampling
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  auto inside = [](const Mat& w) {
    return w(0, 0) > 0.1 && w. col(1).norm() < 0.45;
  };
  const std::uint64_t n = 200000;
  SlotSphereMap t2 = slot_invariant_sphere_map(e, 2);

  ExecPlan plan{8, 2, 77, 1};
  McEstimate via_t1 = mc_set_measure(e, inside, n, plan);

  Accumulator acc;
  RngStream rng(77, 999);
  for (std::uint64_t i = 0; i < n; ++i) {
    Vec u = rng.on_sphere(4);
    Mat um = Eigen::Map<Mat>(u.data(), 2, 2);
    acc.add(inside(t2.invert(um)) ? 1.0 : 0.0);
  }
  McEstimate via_t2 = acc.estimate();
  const double joint = std::hypot(via_t1.std_error, via_t2.std_error);
  CHECK(std::abs(via_t1.value - via_t2.value) <= 3.0 * joint);
  CHECK(via_t1.value > 0.01);
}

TEST_CASE("sample_ellipsoid: surface membership and symmetry") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 3);
  RngStream rng(23, 0);
  Mat pts = sample_ellipsoid(e, 500, rng);
  for (int c = 0; c < pts.cols(); ++c) {
    Mat x = Eigen::Map<Mat>(pts.col(c).data(), 3, 2);
    CHECK(std::abs(e.form(x) - e.level) <= 1e-10);
  }

  // ell = 1: plain sphere, coordinate means vanish like 1/sqrt(n)
  const BlockEllipsoid s = BlockEllipsoid::canonical(1, 2);
  RngStream rng2(24, 0);
  const int n = 40000;
  Vec mean = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    Mat x = sample_ellipsoid_point(s, rng2);
    mean += x.col(0);
  }
  mean /= n;
  CHECK(mean.norm() <= 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("sample_ellipsoid: second moments agree with a bigger run") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  auto second_moment = [&](std::uint64_t n, std::uint64_t stream) {
    ExecPlan plan{8, 2, 31, stream};
    Accumulator acc = run_sharded(n, plan, [&](RngStream& r) {
      Mat x = sample_ellipsoid_point(e, r);
      return x.col(0).squaredNorm();
    });
    return acc.estimate();
  };
  McEstimate small = second_moment(50000, 1);
  McEstimate big = second_moment(400000, 2);
  CHECK(std::abs(small.value - big.value) <=
        3.0 * std::hypot(small.std_error, big.std_error));
}

TEST_CASE("mc_set_measure: exact endpoints and symmetry") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  ExecPlan plan{8, 2, 5, 1};
  CHECK(mc_set_measure(e, [](const Mat&) { return true; }, 2000, plan).value ==
        1.0);
  CHECK(mc_set_measure(e, [](const Mat&) { return false; }, 2000, plan).value ==
        0.0);

  const BlockEllipsoid s = BlockEllipsoid::canonical(1, 2);
  McEstimate half =
      mc_set_measure(s, [](const Mat& w) { return w(0, 0) > 0.0; }, 100000,
                     plan);
  CHECK(std::abs(half.value - 0.5) <= 3.0 * half.std_error);
}

TEST_CASE("mc estimators: determinism and stderr scaling") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  auto pred = [](const Mat& w) { return w(0, 0) > 0.2; };
  ExecPlan plan{8, 2, 123, 9};
  McEstimate a = mc_set_measure(e, pred, 50000, plan);
  McEstimate b = mc_set_measure(e, pred, 50000, plan);
  CHECK(a.value == b.value);
  CHECK(a.std_error == b.std_error);

  McEstimate dbl = mc_set_measure(e, pred, 100000, plan);
  const double ratio = dbl.std_error / a.std_error;
  CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.1));
}

TEST_CASE("estimate_cap: endpoints and arccos scaling") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  Vec dir(2);
  dir << 1.0, 0.0;
  ExecPlan plan{8, 2, 17, 1};
  CHECK(estimate_cap(e, 0.0, dir, 1, 5000, plan).value == 1.0);
  McEstimate top = estimate_cap(e, 1.0, dir, 1, 50000, plan);
  CHECK(top.value <= 3.0 * top.std_error);

  std::vector<double> theta, y, w;
  std::uint64_t stream = 2;
  for (double th : {1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1}) {
    ExecPlan p{8, 2, 17, stream++};
    McEstimate m = estimate_cap(e, std::cos(th), dir, 1, 400000, p);
    theta.push_back(th);
    y.push_back(m.value);
    w.push_back(m.value * static_cast<double>(m.samples));
  }
  PowerFit fit = fit_loglog(theta, y, w);
  CHECK(std::abs(fit.slope - 1.0) <= 0.1);
}

TEST_CASE("estimate_pair_cone: endpoints") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  Vec dir(2);
  dir << 0.3, -0.8;
  ExecPlan plan{8, 2, 18, 1};
  McEstimate half = estimate_pair_cone(e, 0.0, dir, 100000, plan);
  CHECK(std::abs(half.value - 0.5) <= 3.0 * half.std_error);
  McEstimate top = estimate_pair_cone(e, 1.0, dir, 50000, plan);
  CHECK(top.value <= 3.0 * top.std_error);
}

TEST_CASE("estimate_cylinder and ball: saturation and inclusion") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 3);
  Vec axis(3);
  axis << 0.0, 0.0, 1.0;
  ExecPlan plan{8, 2, 19, 1};
  CHECK(estimate_cylinder(e, e.diameter(), axis, 5000, plan).value == 1.0);

  // same seed: the ball set is contained in the cylinder set sample by sample
  McEstimate ball = estimate_ball(e, 0.05, 100000, plan);
  Vec e1(3);
  e1 << 1.0, 0.0, 0.0;
  McEstimate cyl = estimate_cylinder(e, 0.05, e1, 100000, plan);
  CHECK(ball.value <= cyl.value);
}

TEST_CASE("estimate_strip: saturation and mu monotonicity") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  ExecPlan plan{8, 2, 20, 1};
  CHECK(estimate_strip(e, 2.0 * e.diameter(), 1.0, 1.0, 5000, plan).value ==
        1.0);
  McEstimate narrow = estimate_strip(e, 0.05, 1.0, 1.0, 200000, plan);
  McEstimate wide_mu = estimate_strip(e, 0.05, 2.0, 1.0, 200000, plan);
  CHECK(wide_mu.value <=
        narrow.value + 3.0 * std::hypot(narrow.std_error, wide_mu.std_error));
  CHECK_THROWS_AS(estimate_strip(e, 0.05, 0.0, 1.0, 10, plan),
                  std::invalid_argument);
}

TEST_CASE("estimate_annulus: rejection, emptiness, nesting, slope") {
  const BlockEllipsoid e = BlockEllipsoid::canonical(2, 2);
  Mat prop = 2.0 * e.coeff;
  ExecPlan plan{8, 2, 25, 1};
  CHECK_THROWS_AS(estimate_annulus(e, prop, 1.0, 0.1, 10, plan),
                  std::invalid_argument);

  Mat form = Mat::Zero(2, 2);
  form(0, 0) = 1.0;
  form(1, 1) = 2.0;
  // the diagonal form ranges over [0.42, 1.58] on the canonical surface
  CHECK(estimate_annulus(e, form, 40.0, 0.5, 20000, plan).value == 0.0);

  McEstimate thin = estimate_annulus(e, form, 1.0, 0.02, 50000, plan);
  McEstimate thick = estimate_annulus(e, form, 1.0, 0.04, 50000, plan);
  CHECK(thin.value <= thick.value);  // same seed, nested sets

  std::vector<double> beta, y, w;
  std::uint64_t stream = 3;
  for (double b : {1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1}) {
    ExecPlan p{8, 2, 25, stream++};
    McEstimate m = estimate_annulus(e, form, 1.0, b, 400000, p);
    beta.push_back(b);
    y.push_back(m.value);
    w.push_back(m.value * static_cast<double>(m.samples));
  }
  PowerFit fit = fit_loglog(beta, y, w);
  CHECK(std::abs(fit.slope - 1.0) <= 0.1);
}

TEST_CASE("block structure survives invertible block maps") {
  RngStream rng(26, 0);
  const BlockEllipsoid e = BlockEllipsoid::canonical(3, 2);
  for (int rep = 0; rep < 20; ++rep) {
    Mat s(3, 3);
    for (int i = 0; i < 9; ++i) s(i / 3, i % 3) = rng.gaussian();
    if (std::abs(s.determinant()) < 0.1) continue;
    BlockEllipsoid image = e.transformed(s);  // constructor revalidates
    // a mapped surface point satisfies the new form
    Mat x = sample_ellipsoid_point(e, rng);
    Mat y = x * s.transpose();
    CHECK(std::abs(image.form(y) - image.level) <= 1e-9);
  }
}
