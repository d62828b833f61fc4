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
"""Tests for corridor_opt.planning.ocp."""

import dataclasses
import math
import pickle
import types

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np
from scipy import integrate

from corridor_opt.planning import ocp
from corridor_opt.planning import scenario

_LIMITS = scenario.VehicleLimits(
    u_min=-3.0, u_max=3.0, v_min=2.0, v_max=25.0, delta=10.0)


def _one_zone():
  # Enter the zone at 12 s, leave it 1.2 s later.
  return ocp.BoundaryData(
      t0=0.0, p0=0.0, v0=12.0, tf=13.2, pf=165.0,
      interior_points=((12.0, 150.0),))


def _two_zones():
  return ocp.BoundaryData(
      t0=1.5,
      p0=0.0,
      v0=11.0,
      tf=24.0,
      pf=270.0,
      interior_points=((12.0, 150.0), (13.4, 165.0), (22.5, 255.0)))


def _sample(traj, n=2001):
  ts = np.linspace(traj.t0, traj.tf, n)
  return ts, traj.evaluate_many(ts)


class BoundaryDataTest(parameterized.TestCase):

  @parameterized.named_parameters(
      ('empty_horizon', dict(tf=0.0)),
      ('backwards_position', dict(pf=-1.0)),
      ('negative_speed', dict(v0=-1.0)),
      ('late_interior', dict(interior_points=((20.0, 50.0),))),
      ('interior_behind_entry', dict(interior_points=((5.0, -1.0),))),
  )
  def test_rejects_degenerate(self, overrides):
    kwargs = dict(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=100.0, interior_points=())
    kwargs.update(overrides)
    with self.assertRaises(ocp.OcpError):
      ocp.BoundaryData(**kwargs)

  def test_from_schedule(self):
    corridor = scenario.build_corridor(150, [75, 75])
    path = corridor.path('EB', 1)
    plan = types.SimpleNamespace(
        zones=path.zones,
        arrivals={1: 12.0, 2: 19.0, 3: 26.0},
        occupancy={1: 1.25, 2: 1.2, 3: 1.1})
    b = ocp.BoundaryData.from_schedule(path, plan, t0=1.0, v0=12.0)
    self.assertAlmostEqual(b.tf, 27.1)
    self.assertEqual(b.pf, 345.0)
    np.testing.assert_allclose(
        b.interior_points,
        [(12.0, 150.0), (13.25, 165.0), (19.0, 240.0), (20.2, 255.0),
         (26.0, 330.0)])


class UnconstrainedTest(parameterized.TestCase):

  def test_system_size(self):
    for n, b in ((1, _one_zone()), (2, _two_zones())):
      A, B = ocp.assemble_unconstrained(b)
      self.assertEqual(A.shape, (10 * n - 1, 10 * n - 1))
      self.assertEqual(B.shape, (10 * n - 1,))

  def test_cruise_needs_no_control(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=100.0,
        interior_points=((5.0, 50.0), (6.0, 60.0), (8.0, 80.0)))
    traj = ocp.solve_unconstrained(b)
    self.assertLess(traj.cost(), 1e-20)
    for arc in traj.arcs:
      self.assertAlmostEqual(arc.a, 0.0, places=10)
      self.assertAlmostEqual(arc.b, 0.0, places=10)
    for pi in traj.pi_1:
      self.assertAlmostEqual(pi, 0.0, places=10)
    self.assertAlmostEqual(traj.time_at_position(45.0), 4.5, places=9)

  @parameterized.named_parameters(('one_zone', _one_zone),
                                  ('two_zones', _two_zones))
  def test_boundary_conditions(self, make):
    b = make()
    traj = ocp.solve_unconstrained(b)
    p0, v0, _ = traj.evaluate(b.t0)
    pf, _, uf = traj.evaluate(b.tf)
    self.assertAlmostEqual(p0, b.p0, places=9)
    self.assertAlmostEqual(v0, b.v0, places=9)
    self.assertAlmostEqual(pf, b.pf, places=8)
    self.assertAlmostEqual(uf, 0.0, places=9)
    self.assertLess(traj.interior_errors(), 1e-8)
    dp, dv, du = traj.continuity_errors()
    self.assertLess(max(dp, dv, du), 1e-8)
    self.assertLess(traj.residual, 1e-8)

  @parameterized.named_parameters(('one_zone', _one_zone),
                                  ('two_zones', _two_zones))
  def test_multipliers_satisfy_corollary(self, make):
    traj = ocp.solve_unconstrained(make())
    self.assertLen(traj.pi_1, len(traj.interior_points))
    self.assertLen(traj.pi_2, len(traj.interior_points))
    for r in traj.corollary_residuals():
      self.assertLess(r, 1e-9)
    for i, (left, right) in enumerate(zip(traj.arcs, traj.arcs[1:])):
      self.assertAlmostEqual(left.a - right.a, traj.pi_1[i], places=9)

  def test_costate_matches_control(self):
    traj = ocp.solve_unconstrained(_two_zones())
    lambda_p, lambda_v = traj.costate(5.0)
    self.assertAlmostEqual(lambda_p, traj.arcs[0].a)
    self.assertAlmostEqual(lambda_v, -traj.evaluate(5.0)[2])

  def test_cost_matches_quadrature(self):
    traj = ocp.solve_unconstrained(_two_zones())
    total = 0.0
    for arc in traj.arcs:
      value, _ = integrate.quad(lambda t, arc=arc: 0.5 * arc.state(t)[2]**2,
                                arc.t_start, arc.t_end)
      total += value
    self.assertAlmostEqual(traj.cost(), total, places=9)
    self.assertEqual(ocp.control_effort(traj), traj.cost())

  def test_evaluate_many_matches_evaluate(self):
    traj = ocp.solve_unconstrained(_two_zones())
    ts = np.array([1.5, 3.0, 12.0, 13.0, 13.4, 20.0, 24.0])
    p, v, u = traj.evaluate_many(ts)
    for i, t in enumerate(ts):
      expected = traj.evaluate(t)
      self.assertAlmostEqual(p[i], expected[0], places=9)
      self.assertAlmostEqual(v[i], expected[1], places=9)
      self.assertAlmostEqual(u[i], expected[2], places=9)

  def test_outside_horizon(self):
    traj = ocp.solve_unconstrained(_one_zone())
    with self.assertRaises(ocp.OcpError):
      traj.evaluate(14.0)
    with self.assertRaises(ocp.OcpError):
      traj.evaluate_many([-1.0, 1.0])

  def test_extrapolation(self):
    traj = ocp.solve_unconstrained(_one_zone())
    pf, vf, _ = traj.evaluate(traj.tf)
    p, v, u = traj.extrapolated_state(traj.tf + 2.0)
    self.assertAlmostEqual(p, pf + 2.0 * vf)
    self.assertAlmostEqual(v, vf)
    self.assertEqual(u, 0.0)
    p, v, _ = traj.extrapolated_state(-1.0)
    self.assertAlmostEqual(p, -12.0)
    self.assertAlmostEqual(v, 12.0)
    ps, _, _ = traj.extrapolated_many([-1.0, traj.tf + 2.0])
    self.assertAlmostEqual(ps[0], -12.0)
    self.assertAlmostEqual(ps[1], pf + 2.0 * vf)

  def test_time_at_position(self):
    traj = ocp.solve_unconstrained(_two_zones())
    self.assertAlmostEqual(traj.time_at_position(150.0), 12.0, places=8)
    self.assertAlmostEqual(traj.time_at_position(255.0), 22.5, places=8)
    t = traj.time_at_position(30.0)
    self.assertAlmostEqual(traj.evaluate(t)[0], 30.0, places=8)
    _, vf, _ = traj.evaluate(traj.tf)
    self.assertAlmostEqual(
        traj.time_at_position(280.0), traj.tf + 10.0 / vf, places=8)

  def test_arcs_are_picklable(self):
    traj = ocp.solve_unconstrained(_two_zones())
    restored = pickle.loads(pickle.dumps(traj))
    self.assertEqual(restored.arcs, traj.arcs)
    self.assertEqual(restored.evaluate(10.0), traj.evaluate(10.0))


class ConstrainedTest(absltest.TestCase):

  def test_no_violation_is_unconstrained(self):
    b = _one_zone()
    self.assertEqual(
        ocp.solve_constrained(b, _LIMITS).arcs,
        ocp.solve_unconstrained(b).arcs)

  def test_speed_limit_at_the_end(self):
    # Unconstrained speed peaks at 17.5 m/s at tf; the optimum with
    # v <= 16 rides the bound from t = 5 with cost 4.8.
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=3.0, v_min=2.0, v_max=16.0, delta=10.0)
    self.assertAlmostEqual(ocp.solve_unconstrained(b).cost(), 3.75)
    traj = ocp.solve_constrained(b, limits)
    _, (_, v, _) = _sample(traj)
    self.assertLessEqual(v.max(), 16.0 + 1e-7)
    self.assertAlmostEqual(traj.cost(), 4.8, places=6)
    self.assertEqual(traj.arcs[-1].kind, ocp.ArcKind.V_MAX)
    self.assertAlmostEqual(traj.arcs[-1].t_start, 5.0, places=6)
    self.assertAlmostEqual(traj.evaluate(10.0)[0], 150.0, places=7)
    self.assertEqual(traj.adjoints[-1].active_multiplier, 'mu_c')

  def test_control_limit_at_the_start(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=1.2, v_min=2.0, v_max=25.0, delta=10.0)
    traj = ocp.solve_constrained(b, limits)
    _, (_, _, u) = _sample(traj)
    self.assertLessEqual(u.max(), 1.2 + 1e-7)
    self.assertEqual(traj.arcs[0].kind, ocp.ArcKind.U_MAX)
    self.assertAlmostEqual(traj.arcs[0].t_end, 10.0 - math.sqrt(50.0), places=6)
    self.assertAlmostEqual(traj.evaluate(10.0)[0], 150.0, places=7)
    self.assertAlmostEqual(traj.evaluate(10.0)[2], 0.0, places=7)
    dp, dv, du = traj.continuity_errors()
    self.assertLess(max(dp, dv, du), 1e-7)

  def test_rear_end_gap(self):
    # The follower must be 4 m ahead of cruising by t = 4 and its gap to a
    # 15 m/s leader dips to ~15.55 m shortly after.
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=15.0, tf=10.0, pf=150.0,
        interior_points=((4.0, 64.0),))
    leader = ocp.solve_unconstrained(
        ocp.BoundaryData(
            t0=0.0, p0=20.0, v0=15.0, tf=10.0, pf=170.0, interior_points=()))
    free = ocp.solve_unconstrained(b)
    ts, (p, _, _) = _sample(free)
    gap = leader.extrapolated_many(ts)[0] - p
    self.assertLess(gap.min(), 15.6)
    traj = ocp.solve_constrained(b, _LIMITS, leader=leader, gap=15.8,
                                 leader_id=7)
    ts, (p, _, _) = _sample(traj, 10001)
    gap = leader.extrapolated_many(ts)[0] - p
    self.assertGreaterEqual(gap.min(), 15.8 - 1e-6)
    self.assertLess(traj.interior_errors(), 1e-7)
    self.assertAlmostEqual(traj.evaluate(10.0)[0], 150.0, places=7)
    self.assertGreater(traj.cost(), free.cost())
    for arc in traj.arcs:
      if arc.kind == ocp.ArcKind.REAR_END_FOLLOW:
        self.assertEqual(arc.leader_id, 7)
        self.assertEqual(arc.gap, 15.8)

  def test_infeasible(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=0.1, v_min=2.0, v_max=25.0, delta=10.0)
    with self.assertRaises(ocp.OcpInfeasibleError):
      ocp.solve_constrained(b, limits)

  def test_infeasible_error_pickles(self):
    err = ocp.OcpInfeasibleError('boom', residuals=[0.5], layout=['x'],
                                 iterations=2, kind='v_min',
                                 interval=(3.0, 4.5))
    restored = pickle.loads(pickle.dumps(err))
    self.assertEqual(str(restored), 'boom')
    self.assertEqual(restored.residuals, (0.5,))
    self.assertEqual(restored.layout, ('x',))
    self.assertEqual(restored.iterations, 2)
    self.assertEqual(restored.kind, 'v_min')
    self.assertEqual(restored.interval, (3.0, 4.5))

  def test_infeasible_error_names_the_bound(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=0.1, v_min=2.0, v_max=25.0, delta=10.0)
    with self.assertRaises(ocp.OcpInfeasibleError) as raised:
      ocp.solve_constrained(b, limits)
    self.assertIn(raised.exception.kind,
                  [kind.value for kind in ocp.ArcKind])
    self.assertIsNotNone(raised.exception.interval)

  def test_tracking_margin(self):
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=3.0, v_min=2.0, v_max=25.0, delta=10.0,
        epsilon=0.25)
    self.assertEqual(ocp.apply_tracking_margin(limits), 10.5)


class AdjointStateTest(absltest.TestCase):

  def test_unconstrained_arcs_carry_their_jerk(self):
    traj = ocp.solve_unconstrained(_two_zones())
    self.assertLen(traj.adjoints, len(traj.arcs))
    for arc, adjoint in zip(traj.arcs, traj.adjoints):
      self.assertEqual(adjoint, ocp.AdjointState(arc.a))
      self.assertIsNone(adjoint.active_multiplier)

  def test_boundary_arc_names_its_multiplier(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=1.2, v_min=2.0, v_max=25.0, delta=10.0)
    traj = ocp.solve_constrained(b, limits)
    self.assertEqual(traj.adjoints[0].active_multiplier, 'mu_a')
    for arc, adjoint in zip(traj.arcs[1:], traj.adjoints[1:]):
      self.assertEqual(arc.kind, ocp.ArcKind.UNCONSTRAINED)
      self.assertIsNone(adjoint.active_multiplier)
      self.assertTrue(math.isfinite(adjoint.lambda_p))

  def test_frozen(self):
    adjoint = ocp.AdjointState(0.5, 'mu_c')
    with self.assertRaises(dataclasses.FrozenInstanceError):
      adjoint.lambda_p = 1.0


class ViolationSearchTest(absltest.TestCase):
  # pylint: disable=protected-access

  def setUp(self):
    super().setUp()
    # v = 10 + 1.5 t - 0.075 t^2 and u = 1.5 - 0.15 t.
    self._free = ocp.solve_unconstrained(
        ocp.BoundaryData(
            t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=()))

  def test_speed_crossing_is_exact(self):
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=3.0, v_min=2.0, v_max=16.0, delta=10.0)
    viol = ocp._find_first_violation(self._free, limits, None, 0.0, 1e-9)
    self.assertEqual(viol.kind, ocp.ArcKind.V_MAX)
    self.assertAlmostEqual(viol.t_start, 10.0 - math.sqrt(20.0), places=8)
    self.assertAlmostEqual(viol.t_end, 10.0)
    self.assertAlmostEqual(viol.t_peak, 10.0)
    self.assertAlmostEqual(viol.peak, 1.5, places=8)

  def test_earliest_bound_wins(self):
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=1.2, v_min=2.0, v_max=16.0, delta=10.0)
    viol = ocp._find_first_violation(self._free, limits, None, 0.0, 1e-9)
    self.assertEqual(viol.kind, ocp.ArcKind.U_MAX)
    self.assertAlmostEqual(viol.t_start, 0.0)
    self.assertAlmostEqual(viol.t_end, 2.0, places=8)
    self.assertAlmostEqual(viol.peak, 0.3, places=8)

  def test_feasible_trajectory_has_none(self):
    self.assertIsNone(
        ocp._find_first_violation(self._free, _LIMITS, None, 0.0, 1e-9))

  def test_gap_crossings_match_sampling(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=15.0, tf=10.0, pf=150.0,
        interior_points=((4.0, 64.0),))
    leader = ocp.solve_unconstrained(
        ocp.BoundaryData(
            t0=0.0, p0=20.0, v0=15.0, tf=10.0, pf=170.0, interior_points=()))
    free = ocp.solve_unconstrained(b)
    viol = ocp._find_first_violation(free, None, leader, 15.8, 1e-9)
    self.assertEqual(viol.kind, ocp.ArcKind.REAR_END_FOLLOW)
    ts, (p, _, _) = _sample(free, 20001)
    gap = leader.extrapolated_many(ts)[0] - p
    self.assertAlmostEqual(viol.peak, 15.8 - gap.min(), places=5)
    inside = ts[gap < 15.8]
    self.assertAlmostEqual(viol.t_start, inside.min(), delta=1e-3)
    self.assertAlmostEqual(viol.t_end, inside.max(), delta=1e-3)


class LayoutJacobianTest(absltest.TestCase):
  # pylint: disable=protected-access

  def test_projected_jacobian_matches_differences(self):
    b = ocp.BoundaryData(
        t0=0.0, p0=0.0, v0=10.0, tf=10.0, pf=150.0, interior_points=())
    limits = scenario.VehicleLimits(
        u_min=-3.0, u_max=3.0, v_min=2.0, v_max=16.0, delta=10.0)
    # Riding v_max from t = 5 solves this layout exactly.
    run = ocp._Run(ocp.ArcKind.V_MAX, 5.0, 10.0, (0.0, 10.0), (10.0, 10.0),
                   fixed_end=True)
    problem = ocp._LayoutProblem(b, [run], limits, None, 0.0)
    residuals, _, _, _ = problem.solve_linear([run])
    problem.n_rows = len(residuals)
    taus = np.array([5.0])
    self.assertLess(np.max(np.abs(problem.residual(taus))), 1e-8)
    h = 1e-6
    numeric = (problem.residual(taus + h) - problem.residual(taus - h)) / (
        2.0 * h)
    np.testing.assert_allclose(
        problem.jacobian(taus)[:, 0], numeric, atol=1e-5)


if __name__ == '__main__':
  absltest.main()
