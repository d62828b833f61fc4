# coding=utf-8
# Copyright 2022 The corridor_opt Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Self-checks of the planners against independent references.

Each check draws seeded random instances, runs the production code path and
compares it with a reference: the analytic optimality conditions, the
discretised QP oracle or the brute-force slot search. A perturbation corrupts
the production result on purpose, so a run with it must report failures.
"""

import collections
import dataclasses
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from absl import logging
import numpy as np

from corridor_opt.planning import ocp
from corridor_opt.planning import qp_oracle
from corridor_opt.planning import scenario
from corridor_opt.planning import scheduler

# Corridor-like node layout: zone k starts 150 + 90 k m from the entry and
# is 15 m long.
_FIRST_ZONE = 150.0
_ZONE_PITCH = 90.0
_ZONE_LENGTH = 15.0


@dataclasses.dataclass(frozen=True)
class CheckResult:
  name: str
  instances: int
  failures: int
  worst: float
  tolerance: float
  notes: Tuple[str, ...] = ()

  @property
  def passed(self) -> bool:
    return self.instances > 0 and self.failures == 0


def _on_grid(t: float, grid: float) -> float:
  return round(t / grid) * grid


def random_boundary(rng: np.random.Generator,
                    n_zones: int,
                    grid: float = 0.01) -> ocp.BoundaryData:
  """Boundary data shaped like a schedule: cruise plus random zone delays."""
  v0 = float(rng.uniform(10.0, 14.0))
  occupancy = _on_grid(_ZONE_LENGTH / v0, grid)
  delay = 0.0
  points = []
  for k in range(n_zones):
    entry = _FIRST_ZONE + k * _ZONE_PITCH
    delay += float(rng.uniform(0.0, 2.0))
    arrival = _on_grid(entry / v0 + delay, grid)
    points.append((arrival, entry))
    points.append((arrival + occupancy, entry + _ZONE_LENGTH))
  tf, pf = points.pop()
  return ocp.BoundaryData(
      t0=0.0, p0=0.0, v0=v0, tf=tf, pf=pf, interior_points=tuple(points))


def perturb(traj: ocp.TrajectoryArcs, magnitude: float) -> ocp.TrajectoryArcs:
  """Scales the control and speed coefficients of every arc by 1 + magnitude."""
  if not magnitude:
    return traj
  scale = 1.0 + magnitude
  arcs = tuple(
      dataclasses.replace(arc, a=arc.a * scale, b=arc.b * scale,
                          c=arc.c * scale) for arc in traj.arcs)
  return dataclasses.replace(traj, arcs=arcs)


def exactness_error(traj: ocp.TrajectoryArcs, b: ocp.BoundaryData) -> float:
  """Worst violation of continuity, interior, boundary and terminal rows."""
  p0, v0, _ = traj.initial_state
  pf, _, uf = traj.final_state
  return max(
      max(traj.continuity_errors()), traj.interior_errors(), abs(p0 - b.p0),
      abs(v0 - b.v0), abs(pf - b.pf), abs(uf), traj.residual)


def _summarise(name: str, errors: Sequence[float], tolerance: float,
               notes: Sequence[str] = ()) -> CheckResult:
  errors = [e if np.isfinite(e) else np.inf for e in errors]
  result = CheckResult(
      name=name,
      instances=len(errors),
      failures=sum(1 for e in errors if e > tolerance),
      worst=max(errors, default=0.0),
      tolerance=tolerance,
      notes=tuple(notes))
  log = logging.info if result.passed else logging.error
  log('%s: %d/%d passed, worst %.3g (tolerance %.1g)', name,
      result.instances - result.failures, result.instances, result.worst,
      tolerance)
  return result


def check_solver_exactness(instances: int = 100,
                           seed: int = 0,
                           perturbation: float = 0.0,
                           tolerance: float = 1e-8) -> CheckResult:
  rng = np.random.default_rng(seed)
  errors = []
  for i in range(instances):
    b = random_boundary(rng, 1 + i % 3)
    traj = perturb(ocp.solve_unconstrained(b), perturbation)
    errors.append(exactness_error(traj, b))
  return _summarise('solver_exactness', errors, tolerance)


def check_corollary(instances: int = 100,
                    seed: int = 1,
                    perturbation: float = 0.0,
                    tolerance: float = 1e-8) -> CheckResult:
  """Interior multipliers satisfy pi_2 = -pi_1 * v(t_j)."""
  rng = np.random.default_rng(seed)
  errors = []
  for i in range(instances):
    b = random_boundary(rng, 1 + i % 3)
    traj = perturb(ocp.solve_unconstrained(b), perturbation)
    errors.append(max(traj.corollary_residuals(), default=0.0))
  return _summarise('corollary', errors, tolerance)


@dataclasses.dataclass(frozen=True)
class _OracleCase:
  family: str
  b: ocp.BoundaryData
  expected: ocp.ArcKind = ocp.ArcKind.UNCONSTRAINED
  limits: Optional[scenario.VehicleLimits] = None
  leader: Optional[ocp.TrajectoryArcs] = None
  gap: Optional[float] = None


def _limits(**overrides) -> scenario.VehicleLimits:
  values = dict(u_min=-3.0, u_max=3.0, v_min=2.0, v_max=25.0, delta=10.0)
  values.update(overrides)
  return scenario.VehicleLimits(**values)


def _free_end(rng: np.random.Generator) -> Tuple[ocp.BoundaryData, float]:
  """A single free segment and its average speed.

  Without bounds the control falls linearly from 3 (v_avg - v0) / tf to zero
  and the speed ends at v0 + 1.5 (v_avg - v0).
  """
  v0 = float(rng.uniform(9.5, 10.5))
  tf = float(rng.uniform(9.5, 10.5))
  v_avg = v0 + float(rng.uniform(4.5, 5.5))
  return ocp.BoundaryData(
      t0=0.0, p0=0.0, v0=v0, tf=tf, pf=v_avg * tf, interior_points=()), v_avg


def _speed_cap_case(rng: np.random.Generator) -> _OracleCase:
  b, v_avg = _free_end(rng)
  v_end = b.v0 + 1.5 * (v_avg - b.v0)
  cap = v_avg + float(rng.uniform(0.4, 0.7)) * (v_end - v_avg)
  return _OracleCase('v_max', b, ocp.ArcKind.V_MAX, _limits(v_max=cap))


def _control_cap_case(rng: np.random.Generator) -> _OracleCase:
  b, v_avg = _free_end(rng)
  u_start = 3.0 * (v_avg - b.v0) / b.tf
  # Below 2/3 of u_start the distance is out of reach.
  cap = float(rng.uniform(0.75, 0.9)) * u_start
  return _OracleCase('u_max', b, ocp.ArcKind.U_MAX, _limits(u_max=cap))


def _rear_end_case(rng: np.random.Generator) -> _OracleCase:
  # Free, the follower closes to ~15.55 m of a 15 m/s leader after t = 4.
  follower = ocp.BoundaryData(
      t0=0.0, p0=0.0, v0=15.0, tf=10.0, pf=150.0,
      interior_points=((4.0, 64.0),))
  leader = ocp.solve_unconstrained(
      ocp.BoundaryData(
          t0=0.0, p0=20.0, v0=15.0, tf=10.0, pf=170.0, interior_points=()))
  return _OracleCase('rear_end', follower, ocp.ArcKind.REAR_END_FOLLOW,
                     _limits(), leader, float(rng.uniform(15.65, 15.9)))


def _oracle_cases(rng: np.random.Generator, instances: int,
                  per_family: int) -> List[_OracleCase]:
  """`per_family` draws of every bound, then free cases of one to 3 zones."""
  cases = []
  for make in (_speed_cap_case, _control_cap_case, _rear_end_case):
    cases.extend(make(rng) for _ in range(per_family))
  k = 0
  while len(cases) < instances:
    cases.append(_OracleCase('unconstrained', random_boundary(rng, 1 + k % 3)))
    k += 1
  return cases


def _bound_is_active(case: _OracleCase, traj: ocp.TrajectoryArcs) -> bool:
  """Whether the solution rides the bound the case was drawn to hit.

  A rear-end bound may be met at a single touch point, so the gap is checked
  instead of the arc kinds.
  """
  kinds = {arc.kind for arc in traj.arcs}
  if case.expected == ocp.ArcKind.UNCONSTRAINED:
    return kinds == {ocp.ArcKind.UNCONSTRAINED}
  if case.expected == ocp.ArcKind.REAR_END_FOLLOW:
    ts = np.linspace(traj.t0, traj.tf, 2001)
    gap = case.leader.extrapolated_many(ts)[0] - traj.evaluate_many(ts)[0]
    return abs(float(gap.min()) - case.gap) <= 1e-3
  return case.expected in kinds


def check_qp_oracle(instances: int = 20,
                    seed: int = 2,
                    perturbation: float = 0.0,
                    tolerance: float = 1e-3,
                    step: float = 1e-3,
                    per_family: int = 3) -> CheckResult:
  """Closed-form cost against the discretised QP, relative gap."""
  rng = np.random.default_rng(seed)
  cases = _oracle_cases(rng, instances, per_family)
  errors = []
  notes = []
  for i, case in enumerate(cases):
    try:
      traj = ocp.solve_constrained(
          case.b, case.limits, leader=case.leader, gap=case.gap)
      qp = qp_oracle.solve_qp(
          case.b, case.limits, leader=case.leader, gap=case.gap, step=step)
    except ocp.OcpError as e:
      notes.append(f'#{i} {case.family}: {e}')
      errors.append(np.inf)
      continue
    if not _bound_is_active(case, traj):
      notes.append(f'#{i} {case.family}: {case.expected.value} not active in '
                   f'{[a.kind.value for a in traj.arcs]}')
      errors.append(np.inf)
      continue
    cost = perturb(traj, perturbation).cost()
    errors.append(qp_oracle.relative_gap(cost, qp.cost))
  families = collections.Counter(c.family for c in cases)
  notes.extend(f'{name}: {count}' for name, count in sorted(families.items()))
  return _summarise('qp_oracle', errors, tolerance, notes)


def _slot_error(rng: np.random.Generator, perturbation: float) -> float:
  """One zone: the interval scan against the minimum feasible candidate."""
  reservations = [
      scheduler.Reservation(j, round(float(rng.uniform(0.0, 20.0)), 1),
                            round(float(rng.uniform(0.5, 2.0)), 1))
      for j in range(int(rng.integers(0, 7)))
  ]
  lower = round(float(rng.uniform(0.0, 20.0)), 1)
  occupancy = round(float(rng.uniform(0.5, 2.0)), 1)
  idle = float(rng.choice([0.0, 0.2]))
  fast = scheduler.earliest_slot(lower, reservations, occupancy,
                                 idle) + perturbation
  slow = scheduler.brute_force_arrival(lower, reservations, occupancy, idle)
  return abs(fast - slow)


def _path_error(rng: np.random.Generator, path: scenario.PathSpec,
                perturbation: float) -> float:
  """A whole path behind a cruising leader, zone by zone.

  Every zone lower bound is the largest of the cruise arrival, the leader's
  arrival plus rho and the rear-end floor; the slot above it comes from the
  brute-force search.
  """
  v_lead = float(rng.uniform(11.0, 13.0))
  trajectory = ocp.solve_unconstrained(
      ocp.BoundaryData(
          t0=0.0,
          p0=0.0,
          v0=v_lead,
          tf=path.path_length / v_lead,
          pf=path.path_length,
          interior_points=()))
  leader = scheduler.LeaderPlan(
      vehicle_id=1,
      arrivals={z: o / v_lead for z, o in zip(path.zones, path.zone_offsets)},
      v_avg=v_lead,
      trajectory=trajectory)
  t0 = float(rng.uniform(0.5, 2.5))
  v0 = float(rng.uniform(11.0, 13.0))

  def reservation(zone, j):
    arrival = round(float(rng.uniform(t0 + 8.0, t0 + 30.0)), 1)
    occupancy = round(float(rng.uniform(0.5, 2.0)), 1)
    return scheduler.Reservation(10 * zone + j, arrival, occupancy)

  reservations = {
      zone: tuple(
          reservation(zone, j) for j in range(int(rng.integers(0, 4))))
      for zone in path.zones
  }
  context = scheduler.PlanningContext(
      vehicle_id=2,
      path=path,
      t0=t0,
      v0=v0,
      delta=10.0,
      reservations=reservations,
      leaders={1: leader},
      lane_change_zone_busy=False,
      lanes=(1,))
  occupancy = scenario.zone_occupancy_duration(v0, path.merging_zone_length)
  floors = scheduler.rear_end_floors(path, trajectory, occupancy,
                                     context.delta + float(rng.uniform(0, 2)))
  plan = scheduler.arrival_times(context, 1, floors)
  rho = scheduler.SafetyTimes.for_leader(context.delta, v_lead).rho
  error = 0.0
  previous = None
  for index, zone in enumerate(path.zones):
    lower = max(
        scheduler.unconstrained_arrival(path, t0, v0, index, previous,
                                        occupancy),
        leader.arrivals[zone] + rho, floors[zone])
    expected = scheduler.brute_force_arrival(lower, reservations[zone],
                                             occupancy)
    error = max(error, abs(plan.arrivals[zone] + perturbation - expected))
    previous = expected
  return error


def check_scheduler(instances: int = 1000,
                    seed: int = 3,
                    perturbation: float = 0.0) -> CheckResult:
  """Slot scans and whole-path schedules against brute-force search.

  Even instances check one zone's interval scan; odd ones plan a full path
  behind a leader through `scheduler.arrival_times` with rear-end floors.
  """
  rng = np.random.default_rng(seed)
  path = scenario.build_corridor(
      _FIRST_ZONE, [_ZONE_PITCH - _ZONE_LENGTH] * 2,
      merging_zone_length=_ZONE_LENGTH).path('EB', 1)
  errors = []
  for i in range(instances):
    if i % 2:
      errors.append(_path_error(rng, path, perturbation))
    else:
      errors.append(_slot_error(rng, perturbation))
  return _summarise('scheduler_brute_force', errors, 0.0)


Check = Callable[..., CheckResult]

CHECKS: Dict[str, Check] = {
    'solver_exactness': check_solver_exactness,
    'corollary': check_corollary,
    'qp_oracle': check_qp_oracle,
    'scheduler_brute_force': check_scheduler,
}


def run_checks(perturbation: float = 0.0,
               names: Optional[Sequence[str]] = None,
               **overrides) -> List[CheckResult]:
  """Runs the named checks (all by default).

  Args:
    perturbation: corruption applied to every production result.
    names: subset of `CHECKS`.
    **overrides: `<check>_instances=N` overrides the instance count.

  Returns:
    One result per check, in `CHECKS` order.
  """
  names = list(CHECKS) if names is None else list(names)
  unknown = set(names) - set(CHECKS)
  if unknown:
    raise ValueError(f'unknown checks: {sorted(unknown)}')
  results = []
  for name in CHECKS:
    if name not in names:
      continue
    kwargs = {'perturbation': perturbation}
    count = overrides.get(f'{name}_instances')
    if count is not None:
      kwargs['instances'] = count
    results.append(CHECKS[name](**kwargs))
  return results
