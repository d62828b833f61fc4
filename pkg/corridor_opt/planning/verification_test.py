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
"""Tests for corridor_opt.planning.verification."""

from absl.testing import absltest
import numpy as np

from corridor_opt.planning import ocp
from corridor_opt.planning import verification


class RandomBoundaryTest(absltest.TestCase):

  def test_shape_and_grid(self):
    rng = np.random.default_rng(0)
    for n_zones in (1, 2, 3):
      b = verification.random_boundary(rng, n_zones)
      self.assertLen(b.interior_points, 2 * n_zones - 1)
      self.assertAlmostEqual(b.pf, 150.0 + 90.0 * (n_zones - 1) + 15.0)
      for t in b.node_times:
        self.assertAlmostEqual(t * 100.0, round(t * 100.0), places=6)

  def test_deterministic(self):
    first = verification.random_boundary(np.random.default_rng(5), 2)
    second = verification.random_boundary(np.random.default_rng(5), 2)
    self.assertEqual(first, second)


class PerturbTest(absltest.TestCase):

  def test_zero_is_identity(self):
    b = verification.random_boundary(np.random.default_rng(1), 2)
    traj = ocp.solve_unconstrained(b)
    self.assertIs(verification.perturb(traj, 0.0), traj)

  def test_breaks_exactness(self):
    b = verification.random_boundary(np.random.default_rng(1), 2)
    traj = ocp.solve_unconstrained(b)
    self.assertLess(verification.exactness_error(traj, b), 1e-8)
    broken = verification.perturb(traj, 1e-3)
    self.assertGreater(verification.exactness_error(broken, b), 1e-6)


class ChecksTest(absltest.TestCase):

  def test_solver_exactness(self):
    result = verification.check_solver_exactness(instances=12)
    self.assertTrue(result.passed, result)
    self.assertEqual(result.instances, 12)

  def test_corollary(self):
    self.assertTrue(verification.check_corollary(instances=12).passed)

  def test_scheduler(self):
    result = verification.check_scheduler(instances=300)
    self.assertTrue(result.passed, result)
    self.assertEqual(result.worst, 0.0)

  def test_qp_oracle(self):
    result = verification.check_qp_oracle(
        instances=4, per_family=1, step=0.01, tolerance=1e-2)
    self.assertTrue(result.passed, result)
    self.assertEqual(result.instances, 4)
    for family in ('v_max', 'u_max', 'rear_end', 'unconstrained'):
      self.assertIn(f'{family}: 1', result.notes)

  def test_scheduler_paths_fail_when_perturbed(self):
    # Instance 1 plans a whole path behind a leader.
    result = verification.check_scheduler(instances=2, perturbation=1e-3)
    self.assertEqual(result.failures, 2)

  def test_perturbation_is_detected(self):
    results = verification.run_checks(
        perturbation=1e-3,
        names=['solver_exactness', 'corollary', 'scheduler_brute_force'],
        solver_exactness_instances=5,
        corollary_instances=5,
        scheduler_brute_force_instances=20)
    self.assertEqual([r.name for r in results],
                     ['solver_exactness', 'corollary', 'scheduler_brute_force'])
    for r in results:
      self.assertFalse(r.passed, r)

  def test_unknown_check(self):
    with self.assertRaises(ValueError):
      verification.run_checks(names=['nope'])


class OracleCasesTest(absltest.TestCase):
  # pylint: disable=protected-access

  def setUp(self):
    super().setUp()
    self._cases = verification._oracle_cases(
        np.random.default_rng(2), instances=12, per_family=2)

  def test_bounded_families_violate_without_the_bound(self):
    ts = np.linspace(0.0, 1.0, 2001)
    bounded = [c for c in self._cases if c.family != 'unconstrained']
    self.assertLen(bounded, 6)
    for case in bounded:
      free = ocp.solve_unconstrained(case.b)
      t = free.t0 + ts * (free.tf - free.t0)
      p, v, u = free.evaluate_many(t)
      if case.family == 'v_max':
        self.assertGreater(v.max(), case.limits.v_max + 0.1)
      elif case.family == 'u_max':
        self.assertGreater(u.max(), case.limits.u_max + 0.05)
      else:
        gap = case.leader.extrapolated_many(t)[0] - p
        self.assertLess(gap.min(), case.gap - 0.04)

  def test_free_cases_span_one_to_three_zones(self):
    free = [c for c in self._cases if c.family == 'unconstrained']
    self.assertEqual({len(c.b.interior_points) for c in free}, {1, 3, 5})

  def test_draws_differ(self):
    caps = [c.limits.v_max for c in self._cases if c.family == 'v_max']
    self.assertNotEqual(caps[0], caps[1])


if __name__ == '__main__':
  absltest.main()
