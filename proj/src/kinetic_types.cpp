#include "polykin/kinetic_types.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace polykin {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Visits all increasing (ell+1)-tuples of {0..m-1}; f returns false to stop.
template <class F>
bool for_each_tuple(int m, int ell, F&& f) {
  std::vector<int> idx(ell + 1);
  for (int i = 0; i <= ell; ++i) idx[i] = i;
  while (true) {
    if (!f(std::span<const int>(idx))) return false;
    int pos = ell;
    while (pos >= 0 && idx[pos] == m - 1 - (ell - pos)) --pos;
    if (pos < 0) return true;
    ++idx[pos];
    for (int i = pos + 1; i <= ell; ++i) idx[i] = idx[i - 1] + 1;
  }
}

}  // namespace

void SystemParams::validate() const {
  require(d >= 2, "SystemParams: d must be >= 2");
  require(M >= 1, "SystemParams: M must be >= 1");
  require(eps.size() == M, "SystemParams: eps must have M entries");
  for (int l = 0; l < M; ++l) {
    require(eps[l] > 0.0 && eps[l] < 1.0,
            "SystemParams: zones must lie in (0, 1)");
    if (l > 0)
      require(eps[l - 1] < eps[l] && eps[l - 1] <= ratio_max * eps[l],
              "SystemParams: zone separation eps_l <= ratio_max * eps_{l+1} "
              "violated (N too small for the requested gap)");
  }
  require(delta > 0.0 && delta <= 0.01 * eps[0],
          "SystemParams: need 0 < delta <= 0.01 * eps_2");
  require(R >= 1.0, "SystemParams: need R >= 1");
  require(rho > R, "SystemParams: need rho > R");
  require(beta0 > 0.0, "SystemParams: need beta0 > 0");
  require(n_trunc >= 1, "SystemParams: need n_trunc >= 1");
}

void to_json(nlohmann::json& j, const SystemParams& p) {
  j = nlohmann::json{{"d", p.d},         {"M", p.M},
                     {"N", p.N},         {"eps", std::vector<double>(p.eps.begin(), p.eps.end())},
                     {"delta", p.delta}, {"R", p.R},
                     {"rho", p.rho},     {"beta0", p.beta0},
                     {"mu0", p.mu0},     {"n_trunc", p.n_trunc},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, SystemParams& p) {
  static const std::set<std::string> keys = {"d",     "M",     "N",    "eps",
                                             "delta", "R",     "rho",  "beta0",
                                             "mu0",   "n_trunc", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    require(keys.count(it.key()) == 1,
            "SystemParams: unknown key '" + it.key() + "'");
  for (const auto& k : keys)
    require(j.contains(k), "SystemParams: missing key '" + k + "'");
  p.d = j.at("d").get<int>();
  p.M = j.at("M").get<int>();
  p.N = j.at("N").get<std::int64_t>();
  auto e = j.at("eps").get<std::vector<double>>();
  p.eps = Eigen::Map<const Vec>(e.data(), static_cast<Eigen::Index>(e.size()));
  p.delta = j.at("delta").get<double>();
  p.R = j.at("R").get<double>();
  p.rho = j.at("rho").get<double>();
  p.beta0 = j.at("beta0").get<double>();
  p.mu0 = j.at("mu0").get<double>();
  p.n_trunc = j.at("n_trunc").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
}

void ImpactParams::validate(double tol) const {
  require(omega.cols() >= 1, "ImpactParams: need at least one impact vector");
  require(velocities.rows() == omega.rows() &&
              velocities.cols() == omega.cols(),
          "ImpactParams: velocity block must match omega block");
  const int ell = static_cast<int>(omega.cols());
  double level = 0.0;
  for (int i = 0; i < ell; ++i) {
    level += omega.col(i).squaredNorm();
    for (int jj = i + 1; jj < ell; ++jj)
      level += (omega.col(i) - omega.col(jj)).squaredNorm();
  }
  require(std::abs(level - 1.0) <= tol,
          "ImpactParams: omega is not on the unit interaction ellipsoid");
}

const char* to_string(ContactKind k) {
  switch (k) {
    case ContactKind::pre: return "pre";
    case ContactKind::post: return "post";
    case ContactKind::grazing: return "grazing";
  }
  return "?";
}

SystemParams make_scaled_params(int d, int M, std::int64_t N, double delta_frac,
                                double R, double rho, double beta0, double mu0,
                                int n_trunc, std::uint64_t seed,
                                double ratio_max) {
  require(d >= 2 && M >= 1, "make_scaled_params: need d >= 2, M >= 1");
  require(N >= M + 1, "make_scaled_params: need N >= M + 1");
  SystemParams p;
  p.d = d;
  p.M = M;
  p.N = N;
  p.ratio_max = ratio_max;
  p.eps = Vec(M);
  double lfact = 1.0;
  for (int ell = 1; ell <= M; ++ell) {
    lfact *= ell;
    const double exponent = d - 1.0 / ell;
    p.eps[ell - 1] = std::exp(-std::log(lfact * static_cast<double>(N)) / exponent);
  }
  p.delta = delta_frac * p.eps[0];
  p.R = R;
  p.rho = rho;
  p.beta0 = beta0;
  p.mu0 = mu0;
  p.n_trunc = n_trunc;
  p.seed = seed;
  p.validate();
  return p;
}

double symmetric_distance(const Mat& points) {
  const int n = static_cast<int>(points.cols());
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      s += (points.col(i) - points.col(j)).squaredNorm();
  return std::sqrt(s);
}

double symmetric_distance_sq(const PhaseConfig& z, std::span<const int> tuple) {
  double s = 0.0;
  for (std::size_t i = 0; i < tuple.size(); ++i)
    for (std::size_t j = i + 1; j < tuple.size(); ++j)
      s += (z.X.col(tuple[i]) - z.X.col(tuple[j])).squaredNorm();
  return s;
}

bool in_phase_space(const PhaseConfig& z, const SystemParams& params,
                    double slack_rel) {
  const int m = z.m();
  const int lmax = std::min(m - 1, params.M);
  for (int ell = 1; ell <= lmax; ++ell) {
    const double floor2 =
        params.zone(ell) * params.zone(ell) * (1.0 - slack_rel);
    bool ok = for_each_tuple(m, ell, [&](std::span<const int> tuple) {
      return symmetric_distance_sq(z, tuple) >= floor2;
    });
    if (!ok) return false;
  }
  return true;
}

}  // namespace polykin
