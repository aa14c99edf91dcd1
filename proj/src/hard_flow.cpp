#include "polykin/hard_flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace polykin {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kBoundaryRel = 1e-9;
constexpr double kGrazingTol = 1e-12;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<std::vector<int>> enumerate_tuples(int m, int ell) {
  std::vector<std::vector<int>> out;
  std::vector<int> idx(ell + 1);
  for (int i = 0; i <= ell; ++i) idx[i] = i;
  while (true) {
    out.push_back(idx);
    int pos = ell;
    while (pos >= 0 && idx[pos] == m - 1 - (ell - pos)) --pos;
    if (pos < 0) break;
    ++idx[pos];
    for (int i = pos + 1; i <= ell; ++i) idx[i] = idx[i - 1] + 1;
  }
  return out;
}

struct TupleEntry {
  std::vector<int> idx;
  int ell;
  double eps;
  double time = kInf;  // absolute contact time
};

// Incremental event detector over a mutable phase state.
class EventTable {
 public:
  EventTable(const PhaseConfig& z, const SystemParams& params) {
    const int lmax = std::min(z.m() - 1, params.M);
    for (int ell = 1; ell <= lmax; ++ell)
      for (auto& t : enumerate_tuples(z.m(), ell))
        entries_.push_back({std::move(t), ell, params.zone(ell)});
    touching_.resize(z.m());
    for (std::size_t k = 0; k < entries_.size(); ++k)
      for (int p : entries_[k].idx) touching_[p].push_back(k);
  }

  void recompute_all(const PhaseConfig& z, double now) {
    for (auto& e : entries_) refresh(e, z, now);
  }

  void recompute_touching(const PhaseConfig& z, double now,
                          std::span<const int> particles) {
    for (int p : particles)
      for (std::size_t k : touching_[p]) refresh(entries_[k], z, now);
  }

  // Smallest contact time and the gap to the next distinct tuple's time.
  struct Minimum {
    const TupleEntry* first = nullptr;
    double gap = kInf;
  };
  Minimum minimum() const {
    Minimum m;
    double best = kInf, second = kInf;
    for (const auto& e : entries_) {
      if (e.time < best) {
        second = best;
        best = e.time;
        m.first = &e;
      } else if (e.time < second) {
        second = e.time;
      }
    }
    if (m.first && second < kInf) m.gap = second - best;
    return m;
  }

 private:
  static void refresh(TupleEntry& e, const PhaseConfig& z, double now) {
    auto dt = tuple_contact_time(z, e.idx, e.ell, e.eps);
    e.time = dt ? now + *dt : kInf;
  }

  std::vector<TupleEntry> entries_;
  std::vector<std::vector<std::size_t>> touching_;
};

}  // namespace

void SimOptions::validate() const {
  require(t_max > 0.0, "SimOptions: t_max must be positive");
  require(max_events > 0, "SimOptions: max_events must be positive");
  require(snapshot_dt >= 0.0, "SimOptions: snapshot_dt must be nonnegative");
  require(simultaneity_tol >= 0.0,
          "SimOptions: simultaneity_tol must be nonnegative");
}

double SimOptions::effective_tie_tol(const SystemParams& params) const {
  if (simultaneity_tol > 0.0) return simultaneity_tol;
  return 1e-12 * params.eps[0] / params.R;
}

std::optional<double> tuple_contact_time(const PhaseConfig& z,
                                         std::span<const int> tuple, int ell,
                                         double eps_zone) {
  double a = 0.0, b = 0.0, c0 = 0.0;
  for (std::size_t i = 0; i < tuple.size(); ++i)
    for (std::size_t j = i + 1; j < tuple.size(); ++j) {
      const int p = tuple[i], q = tuple[j];
      const Vec dx = z.X.col(p) - z.X.col(q);
      const Vec dv = z.V.col(p) - z.V.col(q);
      a += dv.squaredNorm();
      b += dx.dot(dv);
      c0 += dx.squaredNorm();
    }
  (void)ell;
  const double eps2 = eps_zone * eps_zone;
  const double ct = c0 - eps2;
  if (ct < -kBoundaryRel * eps2)
    throw std::runtime_error(
        "tuple_contact_time: configuration strictly inside the interaction "
        "zone (corrupted state)");
  if (ct <= kBoundaryRel * eps2) {
    // on the boundary: only an approaching state re-enters
    if (b < -kGrazingTol) return 0.0;
    return std::nullopt;
  }
  if (b >= 0.0 || a <= 0.0) return std::nullopt;
  const double disc = b * b - a * ct;
  if (disc <= 0.0) return std::nullopt;
  // smaller root, in the cancellation-free form for b < 0
  return ct / (-b + std::sqrt(disc));
}

NextEventResult next_event(const PhaseConfig& z, const SystemParams& params,
                           double after, double simultaneity_tol) {
  EventTable table(z, params);
  table.recompute_all(z, after);
  auto min = table.minimum();
  NextEventResult res;
  if (!min.first || min.first->time == kInf) return res;
  const double tol = simultaneity_tol >= 0.0
                         ? simultaneity_tol
                         : 1e-12 * params.eps[0] / params.R;
  res.pathological_tie = min.gap <= tol;
  CollisionEvent ev;
  ev.t = min.first->time;
  ev.order = min.first->ell + 1;
  ev.tuple = min.first->idx;
  PhaseConfig at_contact = z.advected(ev.t - after);
  Mat omega(z.dim(), min.first->ell);
  for (int i = 1; i <= min.first->ell; ++i)
    omega.col(i - 1) = (at_contact.X.col(ev.tuple[i]) -
                        at_contact.X.col(ev.tuple[0])) /
                       min.first->eps;
  Mat vt(z.dim(), min.first->ell + 1);
  for (std::size_t i = 0; i < ev.tuple.size(); ++i)
    vt.col(i) = z.V.col(ev.tuple[i]);
  ev.kind = classify(omega, VelocityTuple(vt), kGrazingTol);
  res.event = ev;
  return res;
}

PhaseConfig apply_event(const PhaseConfig& z, const CollisionEvent& ev,
                        const SystemParams& params) {
  const int ell = ev.order - 1;
  require(ell >= 1 && ell <= params.M, "apply_event: bad event order");
  require(static_cast<int>(ev.tuple.size()) == ev.order,
          "apply_event: tuple size does not match order");
  const double eps = params.zone(ell);
  const double d2 = symmetric_distance_sq(z, ev.tuple);
  require(std::abs(d2 - eps * eps) <= 1e-8 * eps * eps,
          "apply_event: tuple is not at contact");

  Mat omega(z.dim(), ell);
  for (int i = 1; i <= ell; ++i)
    omega.col(i - 1) = (z.X.col(ev.tuple[i]) - z.X.col(ev.tuple[0])) / eps;
  Mat vt(z.dim(), ell + 1);
  for (int i = 0; i <= ell; ++i) vt.col(i) = z.V.col(ev.tuple[i]);
  const VelocityTuple incoming(vt);

  const ContactKind kind = classify(omega, incoming, kGrazingTol);
  if (kind == ContactKind::grazing) return z;
  require(kind == ContactKind::pre,
          "apply_event: tuple is post-collisional at contact");

  const VelocityTuple outgoing = collide(omega, incoming);
  PhaseConfig out = z;
  for (int i = 0; i <= ell; ++i) out.V.col(ev.tuple[i]) = outgoing.v.col(i);
  return out;
}

Trajectory simulate(const PhaseConfig& z0, const SystemParams& params,
                    const SimOptions& options) {
  options.validate();
  require(in_phase_space(z0, params, 1e-12),
          "simulate: initial configuration outside the phase space");

  Trajectory traj;
  traj.initial = z0;
  traj.energy_log.reserve(64);

  PhaseConfig state = z0;
  double t_cur = 0.0;
  const double tie_tol = options.effective_tie_tol(params);

  EventTable table(state, params);
  table.recompute_all(state, 0.0);

  double next_snap = options.snapshot_dt;
  if (options.snapshot_dt > 0.0) traj.snapshots.emplace_back(0.0, state);
  auto emit_snapshots_until = [&](double t_target) {
    if (options.snapshot_dt <= 0.0) return;
    while (next_snap <= t_target + 1e-15 * std::max(1.0, t_target)) {
      traj.snapshots.emplace_back(next_snap,
                                  state.advected(next_snap - t_cur));
      next_snap += options.snapshot_dt;
    }
  };

  traj.status = Trajectory::Status::ok;
  while (true) {
    auto min = table.minimum();
    const double t_next = min.first ? min.first->time : kInf;
    if (t_next > options.t_max) {
      emit_snapshots_until(options.t_max);
      state = state.advected(options.t_max - t_cur);
      t_cur = options.t_max;
      break;
    }
    if (min.gap <= tie_tol ||
        (!traj.events.empty() && t_next <= traj.events.back().t)) {
      traj.status = Trajectory::Status::pathological;
      state = state.advected(t_next - t_cur);
      t_cur = t_next;
      break;
    }
    emit_snapshots_until(t_next);
    state = state.advected(t_next - t_cur);
    t_cur = t_next;

    CollisionEvent ev;
    ev.t = t_cur;
    ev.order = min.first->ell + 1;
    ev.tuple = min.first->idx;
    const PhaseConfig before = state;
    state = apply_event(state, ev, params);
    ev.kind = (state.V - before.V).squaredNorm() == 0.0 ? ContactKind::grazing
                                                        : ContactKind::pre;
    traj.events.push_back(ev);
    traj.energy_log.push_back(state.kinetic_energy());

    table.recompute_touching(state, t_cur, ev.tuple);
    if (static_cast<std::int64_t>(traj.events.size()) >= options.max_events) {
      traj.status = Trajectory::Status::event_cap;
      break;
    }
  }

  traj.final_state = state;
  traj.t_end = t_cur;
  return traj;
}

PhaseConfig sample_phase_config(const SystemParams& params, int m,
                                RngStream& rng, int max_tries) {
  const int d = params.d;
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    Mat X(d, m), V(d, m);
    for (int i = 0; i < m; ++i) {
      X.col(i) = rng.in_ball(d, params.rho);
      V.col(i) = rng.in_ball(d, params.R);
    }
    PhaseConfig z(std::move(X), std::move(V));
    if (in_phase_space(z, params)) return z;
  }
  throw std::runtime_error(
      "sample_phase_config: rejection sampling failed (zones too dense for "
      "the requested density)");
}

McEstimate double_event_fraction(const SystemParams& params, double delta,
                                 std::uint64_t ensemble, const ExecPlan& plan,
                                 int m) {
  require(delta > 0.0, "double_event_fraction: delta must be positive");
  const int mm = m > 0 ? m : static_cast<int>(params.N);
  Accumulator acc = run_sharded(ensemble, plan, [&](RngStream& rng) -> double {
    PhaseConfig z = sample_phase_config(params, mm, rng);
    auto first = next_event(z, params, 0.0);
    if (!first.event || first.event->t > delta) return 0.0;
    if (first.pathological_tie) return 1.0;  // multiple contact
    PhaseConfig at1 = z.advected(first.event->t);
    at1 = apply_event(at1, *first.event, params);
    auto second = next_event(at1, params, 0.0);
    if (!second.event) return 0.0;
    return second.event->t <= delta ? 1.0 : 0.0;
  });
  return acc.estimate();
}

void write_events_jsonl(const Trajectory& traj, std::ostream& out) {
  for (const auto& ev : traj.events) {
    nlohmann::json j{{"t", ev.t},
                     {"order", ev.order},
                     {"tuple", ev.tuple},
                     {"kind", to_string(ev.kind)}};
    out << j.dump() << '\n';
  }
}

void write_snapshots_bin(const Trajectory& traj, std::ostream& out) {
  const std::uint64_t m = traj.initial.m();
  const std::uint64_t d = traj.initial.dim();
  const std::uint64_t count = traj.snapshots.size();
  out.write(reinterpret_cast<const char*>(&m), 8);
  out.write(reinterpret_cast<const char*>(&d), 8);
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto& [t, z] : traj.snapshots) {
    out.write(reinterpret_cast<const char*>(&t), 8);
    out.write(reinterpret_cast<const char*>(z.X.data()),
              static_cast<std::streamsize>(8 * z.X.size()));
    out.write(reinterpret_cast<const char*>(z.V.data()),
              static_cast<std::streamsize>(8 * z.V.size()));
  }
}

void write_snapshots_csv(const Trajectory& traj, std::ostream& out) {
  out << "t,particle,axis,x,v\n";
  char buf[96];
  for (const auto& [t, z] : traj.snapshots)
    for (int p = 0; p < z.m(); ++p)
      for (int a = 0; a < z.dim(); ++a) {
        std::snprintf(buf, sizeof buf, "%.17g,%d,%d,%.17g,%.17g\n", t, p, a,
                      z.X(a, p), z.V(a, p));
        out << buf;
      }
}

}  // namespace polykin
