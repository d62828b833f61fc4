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
"""Tests for corridor_opt.planning.qp_oracle."""

from absl.testing import absltest

from corridor_opt.planning import ocp
from corridor_opt.planning import qp_oracle
from corridor_opt.planning import scenario


def _limits(**overrides):
  kwargs = dict(u_min=-3.0, u_max=3.0, v_min=2.0, v_max=25.0, delta=10.0)
  kwargs.update(overrides)
  return scenario.VehicleLimits(**kwargs)


class QpOracleTest(absltest.TestCase):

  def test_matches_closed_form(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=12.0, tf=13.2, pf=165.0,
        interior_points=((12.0, 150.0),))
    closed_form = ocp.solve_unconstrained(b)
    qp = qp_oracle.solve_qp(b, step=0.01)
    self.assertGreaterEqual(qp.cost, closed_form.cost() - 1e-9)
    self.assertLess(qp_oracle.relative_gap(closed_form.cost(), qp.cost), 1e-3)
    self.assertAlmostEqual(qp.p[1200], 150.0, places=6)
    self.assertLen(qp.u, 1320)

  def test_speed_bound(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    limits = _limits(v_max=16.0)
    qp = qp_oracle.solve_qp(b, limits=limits, step=0.01)
    self.assertLessEqual(qp.v.max(), 16.0 + 1e-5)
    self.assertLess(qp_oracle.relative_gap(4.8, qp.cost), 1e-3)

  def test_off_grid_rejected(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0005, pf=100.0, interior_points=())
    with self.assertRaises(ValueError):
      qp_oracle.solve_qp(b, step=0.001)

  def test_infeasible(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    with self.assertRaises(ocp.OcpError):
      qp_oracle.solve_qp(b, limits=_limits(u_max=0.1), step=0.01)


if __name__ == '__main__':
  absltest.main()
