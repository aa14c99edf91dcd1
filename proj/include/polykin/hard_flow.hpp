#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include "polykin/collision_core.hpp"
#include "polykin/mc_stats.hpp"

namespace polykin {

struct SimOptions {
  double t_max = 1.0;
  std::int64_t max_events = 100000;
  double snapshot_dt = 0.0;  // 0 disables snapshots
  double simultaneity_tol = 0.0;  // 0 selects the default eps_2/R scale
  // abort: stop the trajectory at a simultaneous contact (single runs).
  // resample: ensemble drivers draw a fresh initial condition instead.
  enum class Policy { abort, resample } policy = Policy::abort;

  void validate() const;
  double effective_tie_tol(const SystemParams& params) const;
};

struct Trajectory {
  enum class Status { ok, event_cap, pathological };

  PhaseConfig initial;
  std::vector<CollisionEvent> events;
  std::vector<std::pair<double, PhaseConfig>> snapshots;
  std::vector<double> energy_log;  // kinetic energy after each event
  PhaseConfig final_state;
  double t_end = 0.0;
  Status status = Status::ok;
};

/// Earliest strictly positive approaching contact time of one tuple under
/// free flight, solved from the quadratic pair-sum distance. Returns nothing
/// if the tuple never reaches its zone while approaching.
/// Throws if the tuple is already strictly inside the zone.
std::optional<double> tuple_contact_time(const PhaseConfig& z,
                                         std::span<const int> tuple, int ell,
                                         double eps_zone);

/// Minimum contact event over all orders and tuples, strictly after `after`.
/// A tie between distinct tuples within the simultaneity tolerance is
/// reported as a pathological event via the optional flag.
struct NextEventResult {
  std::optional<CollisionEvent> event;
  bool pathological_tie = false;
};
NextEventResult next_event(const PhaseConfig& z, const SystemParams& params,
                           double after = 0.0,
                           double simultaneity_tol = -1.0);

/// Applies an event whose tuple is at contact: impact parameters are read
/// off the geometry, only the tuple velocities change. Grazing contacts pass
/// through unchanged.
PhaseConfig apply_event(const PhaseConfig& z, const CollisionEvent& ev,
                        const SystemParams& params);

/// Event-driven evolution: free flight interleaved with instantaneous
/// velocity updates until t_max or max_events.
Trajectory simulate(const PhaseConfig& z0, const SystemParams& params,
                    const SimOptions& options);

/// Uniformly samples m particles (positions in the d-ball of radius rho,
/// velocities in the d-ball of radius R) conditioned on the phase space.
PhaseConfig sample_phase_config(const SystemParams& params, int m,
                                RngStream& rng, int max_tries = 100000);

/// Fraction of initial conditions that reach a second boundary contact
/// within time `delta` of the first (ties count as pathological hits).
McEstimate double_event_fraction(const SystemParams& params, double delta,
                                 std::uint64_t ensemble, const ExecPlan& plan,
                                 int m = 0);

/// One event per line: {"t": ..., "order": ..., "tuple": [...], "kind": ...}.
void write_events_jsonl(const Trajectory& traj, std::ostream& out);

/// Snapshots as little-endian doubles. Header: three uint64 (m, d, count),
/// then per snapshot: time, m*d positions, m*d velocities.
void write_snapshots_bin(const Trajectory& traj, std::ostream& out);

void write_snapshots_csv(const Trajectory& traj, std::ostream& out);

}  // namespace polykin
