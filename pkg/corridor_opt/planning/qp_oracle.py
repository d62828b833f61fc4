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
"""Discretised energy-optimal problem, solved as a convex QP.

Used as an independent oracle for the closed-form solver: the same boundary
data is transcribed on a fixed grid with exact zero-order-hold double
integrator dynamics and handed to cvxpy.
"""

import dataclasses
from typing import Optional

import cvxpy as cp
import gin
import numpy as np

from corridor_opt.planning import ocp
from corridor_opt.planning import scenario


@dataclasses.dataclass(frozen=True)
class QpSolution:
  status: str
  cost: float
  times: np.ndarray
  p: np.ndarray
  v: np.ndarray
  u: np.ndarray


def _grid_index(t: float, t0: float, step: float) -> int:
  k = int(round((t - t0) / step))
  if abs(k * step - (t - t0)) > 1e-9:
    raise ValueError(f'time {t} is not on the {step} s grid from {t0}')
  return k


@gin.configurable(module='qp_oracle', denylist=['b', 'limits', 'leader', 'gap'])
def solve_qp(b: ocp.BoundaryData,
             limits: Optional[scenario.VehicleLimits] = None,
             leader: Optional[ocp.TrajectoryArcs] = None,
             gap: Optional[float] = None,
             step: float = 1e-3,
             solver: str = 'CLARABEL') -> QpSolution:
  """Solves the discretised problem.

  Args:
    b: boundary data; every node time must lie on the grid.
    limits: optional control and speed boxes.
    leader: optional predecessor whose sampled position bounds p from above.
    gap: distance kept to `leader`; defaults to `limits.delta`.
    step: grid spacing in seconds.
    solver: cvxpy solver name.

  Returns:
    The optimal discrete trajectory and its cost 1/2 * sum(u^2) * step.

  Raises:
    ocp.OcpError: if the QP is infeasible or the solver fails.
  """
  n = _grid_index(b.tf, b.t0, step)
  h = step
  p = cp.Variable(n + 1)
  v = cp.Variable(n + 1)
  u = cp.Variable(n)
  constraints = [
      p[0] == b.p0,
      v[0] == b.v0,
      p[1:] == p[:-1] + h * v[:-1] + 0.5 * h * h * u,
      v[1:] == v[:-1] + h * u,
      p[n] == b.pf,
  ]
  for t, position in b.interior_points:
    constraints.append(p[_grid_index(t, b.t0, step)] == position)
  if limits is not None:
    constraints.extend([
        u <= limits.u_max, u >= limits.u_min, v <= limits.v_max,
        v >= limits.v_min
    ])
  times = b.t0 + h * np.arange(n + 1)
  if leader is not None:
    if gap is None:
      if limits is None:
        raise ValueError('a leader needs a gap or limits')
      gap = limits.delta
    leader_p, _, _ = leader.extrapolated_many(times)
    constraints.append(p <= leader_p - gap)
  problem = cp.Problem(cp.Minimize(0.5 * h * cp.sum_squares(u)), constraints)
  try:
    problem.solve(solver=solver)
  except cp.error.SolverError as e:
    raise ocp.OcpError(f'QP solver failed: {e}') from e
  if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
    raise ocp.OcpError(f'QP status {problem.status}')
  return QpSolution(
      status=problem.status,
      cost=float(problem.value),
      times=times,
      p=np.asarray(p.value),
      v=np.asarray(v.value),
      u=np.asarray(u.value))


def relative_gap(closed_form_cost: float, qp_cost: float) -> float:
  return abs(closed_form_cost - qp_cost) / max(qp_cost, 1e-6)
