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
"""Energy-optimal trajectories with interior-point position constraints.

A vehicle entering the control zone at (t0, p0, v0) must pass every merging
zone entry and exit at the scheduled instants and leave the last zone at
(tf, pf), minimising the control effort 1/2 * integral(u^2). On unconstrained
arcs the control is linear in time; the arcs are joined by the jump conditions
of the interior-point constraints, yielding a square linear system of size
10n - 1 for n merging zones.

When the unconstrained solution leaves the admissible set (control or speed
bounds, or the safe gap to the preceding vehicle in the same lane), boundary
arcs are pieced in. The junction times of these arcs are found by a bounded
least-squares search whose inner step is a linear solve for the polynomial
coefficients of every arc.

Arc coefficients are expressed in arc-local time s = t - t_start:

  u(s) = a*s + b
  v(s) = c + b*s + a*s^2/2
  p(s) = d + c*s + b*s^2/2 + a*s^3/6
"""

import bisect
import dataclasses
import enum
import functools
import warnings
from typing import Callable, List, Optional, Sequence, Tuple

from absl import logging
import gin
import numpy as np
from scipy import linalg
from scipy import optimize

from corridor_opt.planning import scenario

# Horizon tolerance when evaluating a trajectory at its own end points.
_TIME_EPS = 1e-9
# Minimum separation between the nodes of an arc layout.
_NODE_EPS = 1e-6


class OcpError(ValueError):
  """Degenerate boundary data, singular systems or out-of-horizon queries."""


class OcpInfeasibleError(OcpError):
  """No admissible arc layout was found for the constrained problem.

  `kind` names the bound that could not be restored, when one is known, and
  `interval` the time span over which it was violated.
  """

  def __init__(self,
               message: str,
               residuals: Sequence[float] = (),
               layout: Sequence[str] = (),
               iterations: int = 0,
               kind: Optional[str] = None,
               interval: Optional[Tuple[float, float]] = None):
    super().__init__(message)
    self.residuals = tuple(float(r) for r in residuals)
    self.layout = tuple(layout)
    self.iterations = iterations
    self.kind = kind
    self.interval = interval

  def __reduce__(self):
    return (type(self), (str(self), self.residuals, self.layout,
                         self.iterations, self.kind, self.interval))


class ArcKind(enum.Enum):
  UNCONSTRAINED = 'unconstrained'
  U_MAX = 'u_max'
  U_MIN = 'u_min'
  V_MAX = 'v_max'
  V_MIN = 'v_min'
  REAR_END_FOLLOW = 'rear_end_follow'


_CONTROL_ARCS = (ArcKind.U_MAX, ArcKind.U_MIN)
_SPEED_ARCS = (ArcKind.V_MAX, ArcKind.V_MIN)

# Inequality multiplier that is active on each constrained arc kind.
_ACTIVE_MULTIPLIER = {
    ArcKind.U_MAX: 'mu_a',
    ArcKind.U_MIN: 'mu_b',
    ArcKind.V_MAX: 'mu_c',
    ArcKind.V_MIN: 'mu_d',
    ArcKind.REAR_END_FOLLOW: 'mu_s',
}


@dataclasses.dataclass(frozen=True)
class Arc:
  """One polynomial piece of a trajectory."""
  kind: ArcKind
  t_start: float
  t_end: float
  a: float
  b: float
  c: float
  d: float
  leader_id: Optional[int] = None
  gap: float = 0.0

  def state(self, t):
    s = t - self.t_start
    u = self.a * s + self.b
    v = self.c + self.b * s + 0.5 * self.a * s * s
    p = self.d + self.c * s + 0.5 * self.b * s * s + self.a * s * s * s / 6.0
    return p, v, u

  def control_effort(self) -> float:
    h = self.t_end - self.t_start
    return 0.5 * (self.a * self.a * h**3 / 3.0 + self.a * self.b * h * h +
                  self.b * self.b * h)


@dataclasses.dataclass(frozen=True)
class AdjointState:
  """Costate of one arc: constant lambda_p and the active inequality."""
  lambda_p: float
  active_multiplier: Optional[str] = None


@dataclasses.dataclass(frozen=True)
class BoundaryData:
  """Entry/exit state and the interior position constraints of one vehicle."""
  t0: float
  p0: float
  v0: float
  tf: float
  pf: float
  interior_points: Tuple[Tuple[float, float], ...]

  def __post_init__(self):
    if not self.tf > self.t0:
      raise OcpError(f'horizon is empty: t0={self.t0}, tf={self.tf}')
    if not self.pf > self.p0:
      raise OcpError(f'final position {self.pf} not after {self.p0}')
    if self.v0 < 0:
      raise OcpError(f'negative entry speed {self.v0}')
    times = [self.t0] + [t for t, _ in self.interior_points] + [self.tf]
    positions = [self.p0] + [c for _, c in self.interior_points] + [self.pf]
    if any(b <= a for a, b in zip(times, times[1:])):
      raise OcpError(f'interior times not strictly increasing: {times}')
    if any(b <= a for a, b in zip(positions, positions[1:])):
      raise OcpError(
          f'interior positions not strictly increasing: {positions}')

  @property
  def node_times(self) -> List[float]:
    return [self.t0] + [t for t, _ in self.interior_points] + [self.tf]

  @classmethod
  def from_schedule(cls,
                    path: scenario.PathSpec,
                    plan,
                    t0: float,
                    v0: float,
                    p0: float = 0.0) -> 'BoundaryData':
    """Builds the 2n - 1 interior points from a schedule plan.

    Args:
      path: the vehicle path.
      plan: a `scheduler.SchedulePlan` (zones, arrivals and occupancy).
      t0: entry time.
      v0: entry speed.
      p0: entry position.

    Returns:
      Boundary data whose final point is the exit of the last zone.
    """
    points = []
    for zone, offset in zip(path.zones, path.zone_offsets):
      arrival = plan.arrivals[zone]
      points.append((arrival, offset))
      points.append(
          (arrival + plan.occupancy[zone], offset + path.merging_zone_length))
    tf, pf = points.pop()
    return cls(
        t0=t0, p0=p0, v0=v0, tf=tf, pf=pf, interior_points=tuple(points))


@dataclasses.dataclass(frozen=True)
class TrajectoryArcs:
  """A solved trajectory: arcs, multipliers and solve diagnostics."""
  arcs: Tuple[Arc, ...]
  interior_points: Tuple[Tuple[float, float], ...]
  pi_1: Tuple[float, ...]
  pi_2: Tuple[float, ...]
  adjoints: Tuple[AdjointState, ...]
  residual: float = 0.0

  @property
  def t0(self) -> float:
    return self.arcs[0].t_start

  @property
  def tf(self) -> float:
    return self.arcs[-1].t_end

  @functools.cached_property
  def _starts(self) -> np.ndarray:
    return np.array([arc.t_start for arc in self.arcs])

  @functools.cached_property
  def _coefficients(self) -> np.ndarray:
    return np.array([[arc.a, arc.b, arc.c, arc.d] for arc in self.arcs])

  @functools.cached_property
  def final_state(self) -> Tuple[float, float, float]:
    arc = self.arcs[-1]
    return tuple(float(x) for x in arc.state(arc.t_end))

  @property
  def initial_state(self) -> Tuple[float, float, float]:
    arc = self.arcs[0]
    return tuple(float(x) for x in arc.state(arc.t_start))

  @property
  def constrained_kinds(self) -> List[ArcKind]:
    return sorted({a.kind for a in self.arcs} - {ArcKind.UNCONSTRAINED},
                  key=lambda k: k.value)

  def _check_horizon(self, t_min: float, t_max: float):
    if t_min < self.t0 - _TIME_EPS or t_max > self.tf + _TIME_EPS:
      raise OcpError(f'time outside horizon [{self.t0}, {self.tf}]: '
                     f'[{t_min}, {t_max}]')

  def evaluate(self, t: float) -> Tuple[float, float, float]:
    """Closed-form (p, v, u) at `t`."""
    self._check_horizon(t, t)
    i = min(max(bisect.bisect_right(self._starts, t) - 1, 0),
            len(self.arcs) - 1)
    return tuple(float(x) for x in self.arcs[i].state(t))

  def evaluate_many(self, ts) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ts = np.asarray(ts, dtype=float)
    if ts.size == 0:
      return ts.copy(), ts.copy(), ts.copy()
    self._check_horizon(float(ts.min()), float(ts.max()))
    return self._evaluate_unchecked(ts)

  def _evaluate_unchecked(self, ts: np.ndarray):
    idx = np.clip(
        np.searchsorted(self._starts, ts, side='right') - 1, 0,
        len(self.arcs) - 1)
    a, b, c, d = self._coefficients[idx].T
    s = ts - self._starts[idx]
    u = a * s + b
    v = c + b * s + 0.5 * a * s * s
    p = d + c * s + 0.5 * b * s * s + a * s * s * s / 6.0
    return p, v, u

  def extrapolated_state(self, t: float) -> Tuple[float, float, float]:
    """State at `t`, cruising at the boundary speed outside the horizon."""
    if t > self.tf:
      p, v, _ = self.final_state
      return p + v * (t - self.tf), v, 0.0
    if t < self.t0:
      p, v, _ = self.initial_state
      return p + v * (t - self.t0), v, 0.0
    return self.evaluate(t)

  def extrapolated_many(self, ts) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ts = np.asarray(ts, dtype=float)
    inside = np.clip(ts, self.t0, self.tf)
    p, v, u = self._evaluate_unchecked(inside)
    p = p + v * (ts - inside)
    u = np.where(ts == inside, u, 0.0)
    return p, v, u

  def time_at_position(self, x: float) -> float:
    """First time the vehicle reaches position `x` (cruise extrapolated)."""
    p0, v0, _ = self.initial_state
    pf, vf, _ = self.final_state
    if x >= pf:
      if x == pf:
        return self.tf
      if vf <= 0:
        raise OcpError(f'position {x} is never reached')
      return self.tf + (x - pf) / vf
    if x <= p0:
      if x == p0:
        return self.t0
      if v0 <= 0:
        raise OcpError(f'position {x} precedes the entry')
      return self.t0 - (p0 - x) / v0
    for arc in self.arcs:
      p_end = float(arc.state(arc.t_end)[0])
      if p_end < x:
        continue
      if arc.d >= x:
        return arc.t_start
      return float(
          optimize.brentq(
              lambda t, arc=arc: arc.state(t)[0] - x,
              arc.t_start,
              arc.t_end,
              xtol=1e-12))
    return self.tf

  def cost(self) -> float:
    return float(sum(arc.control_effort() for arc in self.arcs))

  def costate(self, t: float) -> Tuple[float, float]:
    """(lambda_p, lambda_v) at `t`; lambda_v = -u on unconstrained arcs."""
    self._check_horizon(t, t)
    i = min(max(bisect.bisect_right(self._starts, t) - 1, 0),
            len(self.arcs) - 1)
    _, _, u = self.arcs[i].state(t)
    return self.adjoints[i].lambda_p, -float(u)

  def continuity_errors(self) -> Tuple[float, float, float]:
    """Max |jump| of p, v and u over all arc joins."""
    dp = dv = du = 0.0
    for left, right in zip(self.arcs, self.arcs[1:]):
      pl, vl, ul = left.state(left.t_end)
      pr, vr, ur = right.state(right.t_start)
      dp = max(dp, abs(pl - pr))
      dv = max(dv, abs(vl - vr))
      du = max(du, abs(ul - ur))
    return dp, dv, du

  def interior_errors(self) -> float:
    if not self.interior_points:
      return 0.0
    times = np.array([t for t, _ in self.interior_points])
    positions = np.array([c for _, c in self.interior_points])
    p, _, _ = self.evaluate_many(times)
    return float(np.max(np.abs(p - positions)))

  def corollary_residuals(self) -> List[float]:
    """|pi_2 + pi_1 * v(t_j)| per interior point, relative to |pi_2|."""
    out = []
    for (t, _), p1, p2 in zip(self.interior_points, self.pi_1, self.pi_2):
      if not (np.isfinite(p1) and np.isfinite(p2)):
        continue
      _, v, _ = self.evaluate(t)
      out.append(abs(p2 + p1 * v) / max(1.0, abs(p2)))
    return out


def control_effort(traj: TrajectoryArcs) -> float:
  """Exact 1/2 * integral(u^2) of a solved trajectory."""
  return traj.cost()


def apply_tracking_margin(limits: scenario.VehicleLimits) -> float:
  """Rear-end gap widened for a bounded position tracking error."""
  return limits.delta + 2.0 * limits.epsilon


def _hamiltonian(lambda_p: float, v: float, u: float) -> float:
  # With u = -lambda_v on unconstrained arcs.
  return -0.5 * u * u + lambda_p * v


# -----------------------------------------------------------------------------
# Unconstrained problem.


def assemble_unconstrained(b: BoundaryData) -> Tuple[np.ndarray, np.ndarray]:
  """Builds the square system A x = B of the unconstrained problem.

  Unknowns are (a_j, b_j, c_j, d_j) for each of the m + 1 arcs followed by
  pi_1 for each of the m interior points; for n zones m = 2n - 1.

  Args:
    b: boundary data.

  Returns:
    The matrix and right-hand side.
  """
  times = b.node_times
  m = len(b.interior_points)
  n_arcs = m + 1
  size = 4 * n_arcs + m
  A = np.zeros((size, size))
  B = np.zeros(size)

  def col(arc, k):
    return 4 * arc + k

  row = 0
  A[row, col(0, 3)] = 1.0
  B[row] = b.p0
  row += 1
  A[row, col(0, 2)] = 1.0
  B[row] = b.v0
  row += 1
  for j in range(1, m + 1):
    h = times[j] - times[j - 1]
    left, right = j - 1, j
    # position
    A[row, col(left, 0)] = h**3 / 6.0
    A[row, col(left, 1)] = h * h / 2.0
    A[row, col(left, 2)] = h
    A[row, col(left, 3)] = 1.0
    A[row, col(right, 3)] = -1.0
    row += 1
    # speed
    A[row, col(left, 0)] = h * h / 2.0
    A[row, col(left, 1)] = h
    A[row, col(left, 2)] = 1.0
    A[row, col(right, 2)] = -1.0
    row += 1
    # control
    A[row, col(left, 0)] = h
    A[row, col(left, 1)] = 1.0
    A[row, col(right, 1)] = -1.0
    row += 1
    # interior position
    A[row, col(right, 3)] = 1.0
    B[row] = b.interior_points[j - 1][1]
    row += 1
    # lambda_p jump
    A[row, col(left, 0)] = 1.0
    A[row, col(right, 0)] = -1.0
    A[row, 4 * n_arcs + j - 1] = -1.0
    row += 1
  h = b.tf - times[m]
  last = n_arcs - 1
  A[row, col(last, 0)] = h**3 / 6.0
  A[row, col(last, 1)] = h * h / 2.0
  A[row, col(last, 2)] = h
  A[row, col(last, 3)] = 1.0
  B[row] = b.pf
  row += 1
  A[row, col(last, 0)] = h
  A[row, col(last, 1)] = 1.0
  row += 1
  assert row == size
  return A, B


def _lu_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
  with warnings.catch_warnings():
    warnings.simplefilter('error', linalg.LinAlgWarning)
    try:
      lu, piv = linalg.lu_factor(A)
      x = linalg.lu_solve((lu, piv), B)
    except (linalg.LinAlgWarning, linalg.LinAlgError, ValueError) as e:
      raise OcpError(f'singular interior-point system: {e}') from e
  if not np.all(np.isfinite(x)):
    raise OcpError('interior-point system produced non-finite values')
  return x


def arcs_from_solution(b: BoundaryData,
                       x: np.ndarray,
                       residual: float = float('nan')) -> TrajectoryArcs:
  """Turns a solution vector of `assemble_unconstrained` into arcs."""
  times = b.node_times
  m = len(b.interior_points)
  arcs = tuple(
      Arc(ArcKind.UNCONSTRAINED, times[j], times[j + 1], float(x[4 * j]),
          float(x[4 * j + 1]), float(x[4 * j + 2]), float(x[4 * j + 3]))
      for j in range(m + 1))
  pi_1 = tuple(float(p) for p in x[4 * (m + 1):])
  pi_2 = []
  for j in range(1, m + 1):
    left, right = arcs[j - 1], arcs[j]
    _, vl, ul = left.state(left.t_end)
    _, vr, ur = right.state(right.t_start)
    pi_2.append(
        float(_hamiltonian(right.a, vr, ur) - _hamiltonian(left.a, vl, ul)))
  return TrajectoryArcs(
      arcs=arcs,
      interior_points=b.interior_points,
      pi_1=pi_1,
      pi_2=tuple(pi_2),
      adjoints=tuple(AdjointState(arc.a) for arc in arcs),
      residual=float(residual))


def solve_unconstrained(b: BoundaryData) -> TrajectoryArcs:
  """Closed-form solution with no active inequality constraint."""
  A, B = assemble_unconstrained(b)
  x = _lu_solve(A, B)
  residual = float(np.max(np.abs(A @ x - B)))
  if residual > 1e-6:
    raise OcpError(f'ill-conditioned interior-point system, residual '
                   f'{residual:.3e}')
  return arcs_from_solution(b, x, residual)


# -----------------------------------------------------------------------------
# Constrained problem.

LeaderFn = Callable[[float], Tuple[float, float, float]]


@dataclasses.dataclass(frozen=True)
class _Run:
  """A boundary arc (or rear-end touch point) in a layout."""
  kind: ArcKind
  start: float
  end: float
  start_bounds: Tuple[float, float]
  end_bounds: Tuple[float, float]
  fixed_start: bool = False
  fixed_end: bool = False
  touch: bool = False

  def unknowns(self) -> List[Tuple[float, float, float]]:
    if self.touch:
      return [(self.start,) + self.start_bounds]
    if self.fixed_start:
      return [(self.end,) + self.end_bounds]
    if self.fixed_end:
      return [(self.start,) + self.start_bounds]
    return [(self.start,) + self.start_bounds, (self.end,) + self.end_bounds]

  def with_times(self, values: Sequence[float]) -> '_Run':
    if self.touch:
      return dataclasses.replace(self, start=values[0], end=values[0])
    if self.fixed_start:
      return dataclasses.replace(self, end=values[0])
    if self.fixed_end:
      return dataclasses.replace(self, start=values[0])
    return dataclasses.replace(self, start=values[0], end=values[1])

  def describe(self) -> str:
    if self.touch:
      return f'touch@{self.start:.4f}'
    return f'{self.kind.value}[{self.start:.4f},{self.end:.4f}]'


@dataclasses.dataclass(frozen=True)
class _Node:
  t: float
  kind: str  # 'interior' | 'enter' | 'exit' | 'touch'
  run: int = -1
  position: float = 0.0
  unknown: int = -1  # junction-time index; -1 when the time is fixed


@dataclasses.dataclass(frozen=True)
class _Piece:
  kind: ArcKind
  t_start: float
  t_end: float
  col: int  # first unknown column
  run: int = -1
  start_unknown: int = -1
  end_unknown: int = -1


_PIECE_WIDTH = {
    ArcKind.UNCONSTRAINED: 4,
    ArcKind.U_MAX: 2,
    ArcKind.U_MIN: 2,
    ArcKind.V_MAX: 1,
    ArcKind.V_MIN: 1,
    ArcKind.REAR_END_FOLLOW: 0,
}

# Derivatives of one row in the junction times: (time index, d row / d t).
_Rates = List[Tuple[int, np.ndarray]]


def _neg(rates: _Rates) -> _Rates:
  return [(k, -g) for k, g in rates]


def _constant(nx: int, value: float) -> np.ndarray:
  row = np.zeros(nx + 1)
  row[nx] = value
  return row


def _run_unknowns(runs: Sequence[_Run]) -> List[Tuple[int, int]]:
  """Junction-time indices of the start and end of every run."""
  out = []
  k = 0
  for run in runs:
    if run.touch:
      out.append((k, k))
    elif run.fixed_start:
      out.append((-1, k))
    elif run.fixed_end:
      out.append((k, -1))
    else:
      out.append((k, k + 1))
    k += len(run.unknowns())
  return out


class _LayoutProblem:
  """Variable-projection residual of one arc layout.

  For fixed junction times the rows are linear in the arc coefficients. The
  Jacobian in the junction times differentiates the rows at the projected
  coefficients and drops the part lying in their column space.
  """

  def __init__(self, b: BoundaryData, runs: Sequence[_Run],
               limits: Optional[scenario.VehicleLimits],
               leader: Optional[TrajectoryArcs], gap: float,
               leader_id: Optional[int] = None):
    self._b = b
    self._leader_id = leader_id
    self._runs = list(runs)
    self._limits = limits
    self._leader = leader
    self._gap = gap
    self.n_rows = None
    self._cached_key = None
    self._cached = None

  def _limit(self, kind: ArcKind) -> float:
    return {
        ArcKind.U_MAX: self._limits.u_max,
        ArcKind.U_MIN: self._limits.u_min,
        ArcKind.V_MAX: self._limits.v_max,
        ArcKind.V_MIN: self._limits.v_min,
    }[kind]

  def runs_at(self, taus: Sequence[float]) -> List[_Run]:
    out = []
    k = 0
    for run in self._runs:
      n = len(run.unknowns())
      out.append(run.with_times(taus[k:k + n]))
      k += n
    return out

  def structure(self, runs: Sequence[_Run]):
    """Nodes and pieces of a layout, or None when it is not well formed."""
    unknowns = _run_unknowns(runs)
    nodes = [
        _Node(t, 'interior', position=c) for t, c in self._b.interior_points
    ]
    initial_run = -1
    for i, run in enumerate(runs):
      start_k, end_k = unknowns[i]
      if run.touch:
        nodes.append(_Node(run.start, 'touch', i, unknown=start_k))
        continue
      if run.fixed_start:
        if initial_run >= 0:
          return None
        initial_run = i
      else:
        nodes.append(_Node(run.start, 'enter', i, unknown=start_k))
      if not run.fixed_end:
        nodes.append(_Node(run.end, 'exit', i, unknown=end_k))
    nodes.sort(key=lambda n: n.t)
    times = [self._b.t0] + [n.t for n in nodes] + [self._b.tf]
    if any(t2 - t1 < _NODE_EPS for t1, t2 in zip(times, times[1:])):
      return None
    indices = [-1] + [n.unknown for n in nodes] + [-1]
    pieces = []
    current = initial_run
    col = 0
    for k in range(len(times) - 1):
      if k > 0:
        node = nodes[k - 1]
        if node.kind == 'enter':
          if current >= 0:
            return None
          current = node.run
        elif node.kind == 'exit':
          if current != node.run:
            return None
          current = -1
        elif node.kind == 'touch' and current >= 0:
          return None
      kind = (
          runs[current].kind if current >= 0 else ArcKind.UNCONSTRAINED)
      if kind == ArcKind.REAR_END_FOLLOW and self._leader is None:
        return None
      pieces.append(
          _Piece(kind, times[k], times[k + 1], col, current, indices[k],
                 indices[k + 1]))
      col += _PIECE_WIDTH[kind]
    if current >= 0 and not runs[current].fixed_end:
      return None
    return nodes, pieces, col

  def _leader_state(self, t: float) -> Tuple[float, float, float]:
    return self._leader.extrapolated_state(t)

  def _forms(self, piece: _Piece, s: float, nx: int):
    """Linear forms (coefficients + constant) of p, v, u at local time s."""
    P = np.zeros(nx + 1)
    V = np.zeros(nx + 1)
    U = np.zeros(nx + 1)
    c0 = piece.col
    kind = piece.kind
    if kind == ArcKind.UNCONSTRAINED:
      P[c0:c0 + 4] = (s**3 / 6.0, s * s / 2.0, s, 1.0)
      V[c0:c0 + 3] = (s * s / 2.0, s, 1.0)
      U[c0:c0 + 2] = (s, 1.0)
    elif kind in _CONTROL_ARCS:
      ulim = self._limit(kind)
      P[c0:c0 + 2] = (s, 1.0)
      P[nx] = 0.5 * ulim * s * s
      V[c0] = 1.0
      V[nx] = ulim * s
      U[nx] = ulim
    elif kind in _SPEED_ARCS:
      P[c0] = 1.0
      P[nx] = self._limit(kind) * s
      V[nx] = self._limit(kind)
    else:
      p, v, u = self._leader_state(piece.t_start + s)
      P[nx] = p - self._gap
      V[nx] = v
      U[nx] = u
    return P, V, U

  def _jerk(self, piece: _Piece, nx: int) -> np.ndarray:
    row = np.zeros(nx + 1)
    row[piece.col] = 1.0
    return row

  def _jerk_form(self, piece: _Piece, s: float, nx: int) -> np.ndarray:
    if piece.kind == ArcKind.UNCONSTRAINED:
      return self._jerk(piece, nx)
    if piece.kind == ArcKind.REAR_END_FOLLOW:
      return _constant(nx, _jerk_at(self._leader, piece.t_start + s))
    return np.zeros(nx + 1)

  def _at(self, piece: _Piece, at_end: bool, nx: int):
    """Forms of p, v, u at one end of `piece` and their junction-time rates.

    Shifting the start of a polynomial piece shifts its local time; a
    rear-end piece is tied to the leader's clock instead.
    """
    s = piece.t_end - piece.t_start if at_end else 0.0
    P, V, U = self._forms(piece, s, nx)
    at = piece.end_unknown if at_end else piece.start_unknown
    follow = piece.kind == ArcKind.REAR_END_FOLLOW
    rates = []
    for rate in (V, U, self._jerk_form(piece, s, nx)):
      terms = [(at, rate)]
      if not follow:
        terms.append((piece.start_unknown, -rate))
      rates.append(terms)
    return (P, V, U), rates

  def rows(self, runs: Sequence[_Run]):
    """Stacked rows [coefficients | constant] of a layout and their rates."""
    built = self.structure(runs)
    if built is None:
      return None
    nodes, pieces, nx = built
    b = self._b
    rows = []
    rates = []

    def add(row, terms=()):
      rows.append(row)
      rates.append([(k, g) for k, g in terms if k >= 0])

    (P, V, _), _ = self._at(pieces[0], False, nx)
    add(P - _constant(nx, b.p0))
    add(V - _constant(nx, b.v0))
    for k, node in enumerate(nodes):
      left, right = pieces[k], pieces[k + 1]
      (PL, VL, UL), gl = self._at(left, True, nx)
      (PR, VR, UR), gr = self._at(right, False, nx)
      add(PL - PR, gl[0] + _neg(gr[0]))
      add(VL - VR, gl[1] + _neg(gr[1]))
      both_free = (
          left.kind == ArcKind.UNCONSTRAINED and
          right.kind == ArcKind.UNCONSTRAINED)
      if node.kind != 'interior' or both_free:
        add(UL - UR, gl[2] + _neg(gr[2]))
      if node.kind == 'interior':
        add(PR - _constant(nx, node.position), gr[0])
      elif node.kind == 'touch':
        p, v, u = self._leader_state(node.t)
        add(PL - _constant(nx, p - self._gap),
            gl[0] + [(node.unknown, _constant(nx, -v))])
        add(VL - _constant(nx, v), gl[1] + [(node.unknown, _constant(nx, -u))])
    last = pieces[-1]
    (PE, _, UE), ge = self._at(last, True, nx)
    add(PE - _constant(nx, b.pf), ge[0])
    if last.kind == ArcKind.UNCONSTRAINED:
      add(UE, ge[2])
    unknowns = _run_unknowns(runs)
    for i, run in enumerate(runs):
      if run.touch or run.fixed_start or run.kind == ArcKind.REAR_END_FOLLOW:
        continue
      start_k, end_k = unknowns[i]
      inside = [p for p in pieces if p.run == i]
      k_first = pieces.index(inside[0])
      k_last = pieces.index(inside[-1])
      if run.fixed_end:
        if k_first == 0 or pieces[k_first - 1].kind != ArcKind.UNCONSTRAINED:
          return None
        left = pieces[k_first - 1]
        if run.kind in _CONTROL_ARCS:
          if any(n.kind == 'interior' and n.t > run.start for n in nodes):
            return None
          # lambda_v of the unconstrained extension vanishes at tf.
          (_, _, uL), gl = self._at(left, True, nx)
          aL = self._jerk(left, nx)
          add(-uL - aL * (self._b.tf - run.start),
              _neg(gl[2]) + [(start_k, aL)])
        continue
      if k_first == 0 or k_last == len(pieces) - 1:
        return None
      left, right = pieces[k_first - 1], pieces[k_last + 1]
      if (left.kind != ArcKind.UNCONSTRAINED or
          right.kind != ArcKind.UNCONSTRAINED):
        return None
      inner = [
          n for n in nodes if n.kind == 'interior' and run.start < n.t < run.end
      ]
      aL = self._jerk(left, nx)
      aR = self._jerk(right, nx)
      if run.kind in _SPEED_ARCS:
        if not inner:
          add(aL - aR)
        continue
      if len(inner) > 1:
        return None
      (_, _, uL), gl = self._at(left, True, nx)
      (_, _, uR), gr = self._at(right, False, nx)
      terms = gr[2] + _neg(gl[2])
      if not inner:
        add(aL - aR)
        add(uR - uL - aL * (run.end - run.start),
            terms + [(start_k, aL), (end_k, -aL)])
      else:
        tj = inner[0].t
        add(uR - uL - aL * (tj - run.start) - aR * (run.end - tj),
            terms + [(start_k, aL), (end_k, -aR)])
    return np.array(rows), rates, nodes, pieces, nx

  def solve_linear(self, runs: Sequence[_Run]):
    built = self.rows(runs)
    if built is None:
      return None
    rows, _, nodes, pieces, nx = built
    M = rows[:, :nx]
    rhs = -rows[:, nx]
    if nx:
      x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    else:
      x = np.zeros(0)
    return M @ x - rhs, x, nodes, pieces

  def _evaluate(self, taus: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Residual and junction-time Jacobian, cached for the last `taus`."""
    key = tuple(float(t) for t in taus)
    if key == self._cached_key:
      return self._cached
    n = len(key)
    out = np.full(self.n_rows, 1e3), np.zeros((self.n_rows, n))
    built = self.rows(self.runs_at(taus))
    if built is not None and len(built[0]) == self.n_rows:
      rows, rates, _, _, nx = built
      M = rows[:, :nx]
      x = np.zeros(0)
      if nx:
        x, *_ = np.linalg.lstsq(M, -rows[:, nx], rcond=None)
      z = np.append(x, 1.0)
      jac = np.zeros((n, self.n_rows))
      for i, terms in enumerate(rates):
        for k, g in terms:
          jac[k, i] += g @ z
      if nx:
        basis, sv, _ = np.linalg.svd(M, full_matrices=False)
        basis = basis[:, sv > 1e-12 * sv[0]]
        jac -= (jac @ basis) @ basis.T
      out = rows @ z, jac.T
    self._cached_key, self._cached = key, out
    return out

  def residual(self, taus: np.ndarray) -> np.ndarray:
    return self._evaluate(taus)[0]

  def jacobian(self, taus: np.ndarray) -> np.ndarray:
    return self._evaluate(taus)[1]

  def build(self, runs: Sequence[_Run], x: np.ndarray,
            pieces: Sequence[_Piece], nodes: Sequence[_Node]) -> TrajectoryArcs:
    """Assembles the trajectory of a converged layout."""
    coefficients = []
    for piece in pieces:
      c0 = piece.col
      if piece.kind == ArcKind.UNCONSTRAINED:
        coefficients.append(tuple(float(v) for v in x[c0:c0 + 4]))
      elif piece.kind in _CONTROL_ARCS:
        coefficients.append(
            (0.0, self._limit(piece.kind), float(x[c0]), float(x[c0 + 1])))
      elif piece.kind in _SPEED_ARCS:
        coefficients.append((0.0, 0.0, self._limit(piece.kind), float(x[c0])))
      else:
        coefficients.append(None)

    # lambda_p per piece; boundary arcs inherit it from the unconstrained
    # neighbour on the same side of any interior point they contain.
    lambda_p = [
        coef[0] if piece.kind == ArcKind.UNCONSTRAINED else float('nan')
        for piece, coef in zip(pieces, coefficients)
    ]
    for i, run in enumerate(runs):
      if run.touch or run.kind == ArcKind.REAR_END_FOLLOW:
        continue
      idx = [k for k, p in enumerate(pieces) if p.run == i]
      before = lambda_p[idx[0] - 1] if idx[0] > 0 else float('nan')
      after = (
          lambda_p[idx[-1] + 1] if idx[-1] + 1 < len(pieces) else float('nan'))
      if run.fixed_start:
        before = after
      if run.fixed_end:
        after = before
      passed = False
      for k in idx:
        lambda_p[k] = after if passed else before
        if pieces[k].t_end in [n.t for n in nodes if n.kind == 'interior']:
          passed = True
      if len(idx) == 1 and run.kind in _SPEED_ARCS:
        lambda_p[idx[0]] = before

    arcs = []
    adjoints = []
    for piece, coef, lp in zip(pieces, coefficients, lambda_p):
      if coef is not None:
        arcs.append(Arc(piece.kind, piece.t_start, piece.t_end, *coef))
        adjoints.append(
            AdjointState(lp, _ACTIVE_MULTIPLIER.get(piece.kind)))
        continue
      for arc in _follow_arcs(self._leader, piece.t_start, piece.t_end,
                              self._gap, self._leader_id):
        arcs.append(arc)
        adjoints.append(AdjointState(float('nan'), 'mu_s'))

    pi_1 = []
    pi_2 = []
    for k, node in enumerate(nodes):
      if node.kind != 'interior':
        continue
      left, right = pieces[k], pieces[k + 1]
      p1 = lambda_p[k] - lambda_p[k + 1]
      if (left.kind == ArcKind.UNCONSTRAINED and
          right.kind == ArcKind.UNCONSTRAINED):
        la = Arc(left.kind, left.t_start, left.t_end, *coefficients[k])
        ra = Arc(right.kind, right.t_start, right.t_end, *coefficients[k + 1])
        _, vl, ul = la.state(la.t_end)
        _, vr, ur = ra.state(ra.t_start)
        p2 = (
            _hamiltonian(lambda_p[k + 1], vr, ur) -
            _hamiltonian(lambda_p[k], vl, ul))
      else:
        _, v, _ = _piece_state(self, left, coefficients[k], left.t_end)
        p2 = -p1 * v
      pi_1.append(float(p1))
      pi_2.append(float(p2))
    return TrajectoryArcs(
        arcs=tuple(arcs),
        interior_points=self._b.interior_points,
        pi_1=tuple(pi_1),
        pi_2=tuple(pi_2),
        adjoints=tuple(adjoints))


def _piece_state(problem: _LayoutProblem, piece: _Piece, coef, t: float):
  if coef is None:
    # pylint: disable=protected-access
    p, v, u = problem._leader_state(t)
    return p - problem._gap, v, u
  return Arc(piece.kind, piece.t_start, piece.t_end, *coef).state(t)


def _follow_arcs(leader: TrajectoryArcs,
                 t_start: float,
                 t_end: float,
                 gap: float,
                 leader_id: Optional[int] = None) -> List[Arc]:
  """The leader's arcs over [t_start, t_end], shifted back by `gap`."""
  cuts = {t_start}
  cuts.update(a.t_start for a in leader.arcs if t_start < a.t_start < t_end)
  cuts.update(t for t in (leader.t0, leader.tf) if t_start < t < t_end)
  cuts = sorted(cuts) + [t_end]
  out = []
  for s0, s1 in zip(cuts, cuts[1:]):
    p, v, u = leader.extrapolated_state(s0)
    jerk = 0.0
    if leader.t0 <= s0 < leader.tf:
      # pylint: disable-next=protected-access
      i = bisect.bisect_right(leader._starts, s0) - 1
      jerk = leader.arcs[i].a
    out.append(
        Arc(ArcKind.REAR_END_FOLLOW,
            s0,
            s1,
            jerk,
            u,
            v,
            p - gap,
            leader_id=leader_id,
            gap=gap))
  return out


@dataclasses.dataclass(frozen=True)
class _Violation:
  kind: ArcKind
  t_start: float
  t_end: float
  t_peak: float
  peak: float = 0.0


_VIOLATION_ORDER = (ArcKind.U_MAX, ArcKind.U_MIN, ArcKind.V_MAX,
                    ArcKind.V_MIN, ArcKind.REAR_END_FOLLOW)

# A cubic k3*s^3 + k2*s^2 + k1*s + k0 on local time [0, h].
_Cubic = Tuple[float, float, float, float]


def _cubic_value(k: _Cubic, s: float) -> float:
  return ((k[0] * s + k[1]) * s + k[2]) * s + k[3]


def _cubic_turning_points(k: _Cubic, h: float) -> List[float]:
  """Roots of the derivative inside (0, h)."""
  qa, qb, qc = 3.0 * k[0], 2.0 * k[1], k[2]
  if abs(qa) < 1e-14:
    roots = [-qc / qb] if abs(qb) > 1e-14 else []
  else:
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0:
      return []
    root = np.sqrt(disc)
    roots = [(-qb - root) / (2.0 * qa), (-qb + root) / (2.0 * qa)]
  return sorted(s for s in roots if 0.0 < s < h)


def _excess_intervals(pieces, tol: float) -> List[_Violation]:
  """Maximal intervals where a piecewise cubic exceeds `tol`.

  Args:
    pieces: (t_start, t_end, cubic) in time order; the cubic is in local time.
    tol: threshold.

  Returns:
    Violations (kind left unset) with exact crossing times and the peak.
  """
  out = []
  current = None
  for t_start, t_end, k in pieces:
    h = t_end - t_start
    if h <= 0:
      continue
    knots = [0.0] + _cubic_turning_points(k, h) + [h]
    for s_a, s_b in zip(knots, knots[1:]):
      f_a = _cubic_value(k, s_a) - tol
      f_b = _cubic_value(k, s_b) - tol
      if f_a <= 0 and current is not None:
        out.append(current)
        current = None
      if f_a <= 0 and f_b <= 0:
        continue
      # Monotone between knots: at most one crossing.
      lo, hi = s_a, s_b
      if f_a <= 0:
        lo = optimize.brentq(lambda s: _cubic_value(k, s) - tol, s_a, s_b)
      elif f_b <= 0:
        hi = optimize.brentq(lambda s: _cubic_value(k, s) - tol, s_a, s_b)
      s_peak, f_peak = (s_a, f_a) if f_a >= f_b else (s_b, f_b)
      if current is None:
        current = _Violation(ArcKind.UNCONSTRAINED, t_start + lo, t_start + hi,
                             t_start + s_peak, f_peak + tol)
      else:
        peak = current.t_peak, current.peak
        if f_peak + tol > current.peak:
          peak = t_start + s_peak, f_peak + tol
        current = dataclasses.replace(
            current, t_end=t_start + hi, t_peak=peak[0], peak=peak[1])
      if f_b <= 0:
        out.append(current)
        current = None
  if current is not None:
    out.append(current)
  return out


def _limit_cubics(traj: TrajectoryArcs, kind: ArcKind,
                  limits: scenario.VehicleLimits):
  """Excess over one control or speed bound, arc by arc."""
  for arc in traj.arcs:
    a, b, c = arc.a, arc.b, arc.c
    if kind == ArcKind.U_MAX:
      k = (0.0, 0.0, a, b - limits.u_max)
    elif kind == ArcKind.U_MIN:
      k = (0.0, 0.0, -a, limits.u_min - b)
    elif kind == ArcKind.V_MAX:
      k = (0.0, 0.5 * a, b, c - limits.v_max)
    else:
      k = (0.0, -0.5 * a, -b, limits.v_min - c)
    yield arc.t_start, arc.t_end, k


def _jerk_at(traj: TrajectoryArcs, t: float) -> float:
  if not traj.t0 <= t < traj.tf:
    return 0.0
  # pylint: disable-next=protected-access
  i = bisect.bisect_right(traj._starts, t) - 1
  return traj.arcs[max(i, 0)].a


def _gap_cubics(traj: TrajectoryArcs, leader: TrajectoryArcs, gap: float):
  """gap - (leader - follower) on the merged breakpoints of both."""
  cuts = {a.t_start for a in traj.arcs}
  cuts.update(a.t_start for a in leader.arcs)
  cuts.update((leader.t0, leader.tf))
  cuts = sorted(t for t in cuts if traj.t0 <= t < traj.tf) + [traj.tf]
  if cuts[0] > traj.t0:
    cuts.insert(0, traj.t0)
  for t_a, t_b in zip(cuts, cuts[1:]):
    p, v, u = traj.evaluate(t_a)
    lp, lv, lu = leader.extrapolated_state(t_a)
    jerk = _jerk_at(traj, t_a) - _jerk_at(leader, t_a)
    yield t_a, t_b, (jerk / 6.0, 0.5 * (u - lu), v - lv, gap + p - lp)


def _find_first_violation(traj: TrajectoryArcs,
                          limits: Optional[scenario.VehicleLimits],
                          leader: Optional[TrajectoryArcs], gap: float,
                          tol: float) -> Optional[_Violation]:
  """Earliest violated inequality, with its contiguous interval and peak.

  Bounds are checked at the closed-form extrema of each polynomial arc.
  """
  pieces = {}
  if limits is not None:
    for kind in _CONTROL_ARCS + _SPEED_ARCS:
      pieces[kind] = _limit_cubics(traj, kind, limits)
  if leader is not None:
    pieces[ArcKind.REAR_END_FOLLOW] = _gap_cubics(traj, leader, gap)
  first = None
  for kind in _VIOLATION_ORDER:
    if kind not in pieces:
      continue
    found = _excess_intervals(pieces[kind], tol)
    if found and (first is None or found[0].t_start < first.t_start):
      first = dataclasses.replace(found[0], kind=kind)
  return first


def _window(lo: float, hi: float, around: float,
            runs: Sequence[_Run]) -> Optional[Tuple[float, float]]:
  """Shrinks [lo, hi] around `around` so that it avoids every existing run."""
  for run in runs:
    s = lo - 1.0 if run.fixed_start else run.start
    e = hi + 1.0 if run.fixed_end else run.end
    if e <= around:
      lo = max(lo, e)
    elif s >= around:
      hi = min(hi, s)
    else:
      return None
  lo += 10 * _NODE_EPS
  hi -= 10 * _NODE_EPS
  if hi - lo <= 10 * _NODE_EPS:
    return None
  return lo, hi


def _clip(x: float, lo: float, hi: float) -> float:
  return min(max(x, lo), hi)


def _interval_run(kind: ArcKind, start: float, end: float, start_window,
                  end_window) -> Optional[_Run]:
  s = _clip(start, *start_window)
  e = _clip(end, *end_window)
  if e - s < 1e-3:
    mid = 0.5 * (s + e)
    s = _clip(mid - 0.01, *start_window)
    e = _clip(mid + 0.01, *end_window)
  if e <= s:
    return None
  return _Run(kind, s, e, tuple(start_window), tuple(end_window))


def _candidate_runs(viol: _Violation, b: BoundaryData, runs: Sequence[_Run],
                    limits: Optional[scenario.VehicleLimits],
                    slack: float) -> List[_Run]:
  """Boundary-arc layouts to try for `viol`, most specific first."""
  fixed = b.node_times
  seg = min(max(bisect.bisect_right(fixed, viol.t_peak) - 1, 0),
            len(fixed) - 2)
  seg_window = _window(fixed[seg], fixed[seg + 1], viol.t_peak, runs)
  kind = viol.kind
  out = []

  if kind == ArcKind.REAR_END_FOLLOW:
    if seg_window:
      peak = _clip(viol.t_peak, *seg_window)
      out.append(_Run(kind, peak, peak, seg_window, seg_window, touch=True))
      run = _interval_run(kind, viol.t_start, viol.t_end, seg_window,
                          seg_window)
      if run:
        out.append(run)
    return out

  at_start = viol.t_start <= b.t0 + slack
  at_end = viol.t_end >= b.tf - slack
  if kind in _SPEED_ARCS:
    limit = limits.v_max if kind == ArcKind.V_MAX else limits.v_min
    at_start = at_start and abs(b.v0 - limit) <= 1e-9
  if at_start and not any(r.fixed_start for r in runs):
    first = _window(fixed[0], fixed[1], b.t0, runs)
    if first:
      out.append(
          _Run(
              kind,
              b.t0,
              _clip(viol.t_end, *first), (b.t0, b.t0),
              first,
              fixed_start=True))
  if at_end and not any(r.fixed_end for r in runs):
    last = _window(fixed[-2], fixed[-1], b.tf, runs)
    if last:
      out.append(
          _Run(
              kind,
              _clip(viol.t_start, *last),
              b.tf,
              last, (b.tf, b.tf),
              fixed_end=True))

  # Runs spanning one interior point.
  inner = [t for t, _ in b.interior_points if viol.t_start < t < viol.t_end]
  if kind in _CONTROL_ARCS and not inner and b.interior_points:
    inner = [
        min((t for t, _ in b.interior_points),
            key=lambda t: abs(t - viol.t_peak))
    ]
  if len(inner) == 1:
    j = fixed.index(inner[0])
    left = _window(fixed[j - 1], inner[0], inner[0] - 100 * _NODE_EPS, runs)
    right = _window(inner[0], fixed[j + 1], inner[0] + 100 * _NODE_EPS, runs)
    if left and right:
      width = max(viol.t_end - viol.t_start, 0.05)
      run = _interval_run(kind, min(viol.t_start, inner[0] - width / 2),
                          max(viol.t_end, inner[0] + width / 2), left, right)
      if run:
        out.append(run)

  if seg_window:
    run = _interval_run(kind, viol.t_start, viol.t_end, seg_window, seg_window)
    if run:
      out.append(run)
    run = _interval_run(kind, viol.t_peak - 0.02, viol.t_peak + 0.02,
                        seg_window, seg_window)
    if run:
      out.append(run)
  return out


def _solve_layout(b: BoundaryData, runs: Sequence[_Run],
                  limits: Optional[scenario.VehicleLimits],
                  leader: Optional[TrajectoryArcs], gap: float,
                  tolerance: float, leader_id: Optional[int] = None):
  """Solves one layout; returns (trajectory, runs, residuals) or residuals.

  The junction times are searched with the projected Jacobian first and with
  forward differences when that search stalls above `tolerance`.
  """
  problem = _LayoutProblem(b, runs, limits, leader, gap, leader_id)
  initial = problem.solve_linear(runs)
  if initial is None:
    return None, None, ()
  problem.n_rows = len(initial[0])
  unknowns = [u for run in runs for u in run.unknowns()]
  x0 = np.array([u[0] for u in unknowns])
  lo = np.array([u[1] for u in unknowns])
  hi = np.array([u[2] for u in unknowns])
  if np.any(hi <= lo):
    return None, None, ()
  x0 = np.clip(x0, lo, hi)
  residuals = ()
  for jac in (problem.jacobian, '2-point'):
    result = optimize.least_squares(
        problem.residual,
        x0,
        jac=jac,
        bounds=(lo, hi),
        method='trf',
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=200)
    solved_runs = problem.runs_at(result.x)
    solved = problem.solve_linear(solved_runs)
    if solved is None:
      continue
    residuals, x, nodes, pieces = solved
    if np.max(np.abs(residuals)) <= tolerance:
      traj = problem.build(solved_runs, x, pieces, nodes)
      return traj, solved_runs, residuals
  return None, None, residuals


def _touch_points_valid(traj: TrajectoryArcs, runs: Sequence[_Run],
                        leader: Optional[TrajectoryArcs]) -> bool:
  """Sign conditions of rear-end touch points."""
  for run in runs:
    if not run.touch:
      continue
    before = traj.evaluate(run.start - 1e-7)
    after = traj.evaluate(run.start + 1e-7)
    if leader is None:
      return False
    _, _, u_lead = leader.extrapolated_state(run.start)
    _, _, u_follow = traj.evaluate(run.start)
    if u_follow > u_lead + 1e-7:
      return False
    jerk_left = (traj.evaluate(run.start)[2] - before[2]) / 1e-7
    jerk_right = (after[2] - traj.evaluate(run.start)[2]) / 1e-7
    if jerk_left - jerk_right < -1e-5:
      return False
  return True


@gin.configurable(
    module='ocp', denylist=['b', 'limits', 'leader', 'gap', 'leader_id'])
def solve_constrained(b: BoundaryData,
                      limits: Optional[scenario.VehicleLimits],
                      leader: Optional[TrajectoryArcs] = None,
                      gap: Optional[float] = None,
                      time_slack: float = 1e-3,
                      max_insertions: int = 8,
                      tolerance: float = 1e-8,
                      violation_tolerance: float = 1e-7,
                      leader_id: Optional[int] = None) -> TrajectoryArcs:
  """Energy-optimal trajectory honouring control, speed and gap bounds.

  Args:
    b: boundary data.
    limits: control and speed bounds; None disables them.
    leader: trajectory of the preceding vehicle in the same lane.
    gap: minimum distance to `leader`; defaults to `limits.delta`.
    time_slack: how close, in seconds, a violation must come to the horizon
      ends or to a placed arc to count as touching it.
    max_insertions: cap on the number of boundary arcs pieced in.
    tolerance: max residual of an accepted layout.
    violation_tolerance: slack before a bound counts as violated.
    leader_id: recorded on rear-end arcs.

  Returns:
    The pieced trajectory.

  Raises:
    OcpInfeasibleError: when no layout removes a violation.
  """
  traj = solve_unconstrained(b)
  if limits is None and leader is None:
    return traj
  if leader is not None and gap is None:
    if limits is None:
      raise OcpError('a leader needs a gap or limits')
    gap = limits.delta
  gap = 0.0 if gap is None else gap
  runs: List[_Run] = []
  last_residuals = ()
  for iteration in range(max_insertions + 1):
    viol = _find_first_violation(traj, limits, leader, gap,
                                 violation_tolerance)
    if viol is None:
      return traj
    if iteration == max_insertions:
      break
    accepted = False
    for candidate in _candidate_runs(viol, b, runs, limits, time_slack):
      new_traj, new_runs, residuals = _solve_layout(b, runs + [candidate],
                                                    limits, leader, gap,
                                                    tolerance, leader_id)
      if len(residuals):
        last_residuals = residuals
      if new_traj is None:
        continue
      if not _touch_points_valid(new_traj, new_runs, leader):
        continue
      again = _find_first_violation(new_traj, limits, leader, gap,
                                    violation_tolerance)
      placed = new_runs[-1]
      if (again is not None and again.kind == viol.kind and
          again.t_start <= placed.end + time_slack and
          again.t_end >= placed.start - time_slack):
        continue
      logging.debug('inserted %s', placed.describe())
      traj, runs = new_traj, new_runs
      accepted = True
      break
    if not accepted:
      raise OcpInfeasibleError(
          f'no arc layout removes the {viol.kind.value} violation on '
          f'[{viol.t_start:.3f}, {viol.t_end:.3f}]',
          residuals=last_residuals,
          layout=[r.describe() for r in runs],
          iterations=iteration,
          kind=viol.kind.value,
          interval=(viol.t_start, viol.t_end))
  raise OcpInfeasibleError(
      f'still infeasible after {max_insertions} arc insertions',
      residuals=last_residuals,
      layout=[r.describe() for r in runs],
      iterations=max_insertions,
      kind=viol.kind.value,
      interval=(viol.t_start, viol.t_end))
