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
"""Tests for corridor_opt.planning.coordinator."""

from absl.testing import absltest

from corridor_opt.planning import coordinator
from corridor_opt.planning import ocp
from corridor_opt.planning import scenario
from corridor_opt.planning import scheduler

_CORRIDOR = scenario.build_corridor(150, [75, 75])


def _cruise(path, t0, v0, lane):
  occupancy = path.merging_zone_length / v0
  arrivals = {z: t0 + o / v0 for z, o in zip(path.zones, path.zone_offsets)}
  plan = scheduler.SchedulePlan(
      lane=lane,
      zones=path.zones,
      arrivals=arrivals,
      occupancy={z: occupancy for z in path.zones},
      exit_time=arrivals[path.zones[-1]] + occupancy,
      v_avg=v0)
  trajectory = ocp.solve_unconstrained(
      ocp.BoundaryData(
          t0=t0,
          p0=0.0,
          v0=v0,
          tf=t0 + path.path_length / v0,
          pf=path.path_length,
          interior_points=()))
  return plan, trajectory


def _enter(coord, path_id, lane, t0, v0=12.5, final_lane=None):
  path = _CORRIDOR.path(path_id, lane)
  vehicle_id, sets = coord.register(v0, path, t0)
  plan, trajectory = _cruise(path, t0, v0, final_lane or lane)
  coord.commit(vehicle_id, plan, trajectory)
  return vehicle_id, sets


class CoordinatorTest(absltest.TestCase):

  def test_first_vehicle(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    vehicle_id, sets = coord.register(12.0, _CORRIDOR.path('EB', 1), 0.0)
    self.assertEqual(vehicle_id, 1)
    self.assertEmpty(sets.all_ids())
    self.assertEqual(coord.next_index, 2)

  def test_conflict_sets_partition(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    entries = [('EB', 1), ('EB', 2), ('NB1', 1), ('SB1', 2), ('WB', 1),
               ('EB', 1), ('NB2', 2), ('SB2', 1)]
    for k, (path_id, lane) in enumerate(entries):
      _enter(coord, path_id, lane, float(k))
    coord.deregister(1)
    vehicle_id, sets = coord.register(12.5, _CORRIDOR.path('EB', 1), 8.5)
    self.assertEqual(vehicle_id, 9)
    self.assertEqual(sets.same_lane_ahead, {1: {6}, 2: {2}})
    self.assertEqual(sets.lateral, {1: {3, 4}, 2: {7, 8}, 3: frozenset()})
    self.assertEqual(sets.no_conflict, {5})
    self.assertEqual(sets.all_ids(), frozenset(coord.active_ids()) - {9})

    context = coord.snapshot(9, delta=10.0)
    self.assertEqual(context.leaders[1].vehicle_id, 6)
    self.assertEqual(context.leaders[2].vehicle_id, 2)
    self.assertEqual([r.vehicle_id for r in context.reservations[1]], [3, 4])
    self.assertEqual([r.vehicle_id for r in context.reservations[2]], [7, 8])
    self.assertEqual(context.reservations[3], ())
    self.assertFalse(context.lane_change_zone_busy)
    self.assertEqual(context.lanes, (1, 2))
    self.assertIn(1, coord.archive)

  def test_final_lane_keys_same_lane_set(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    _enter(coord, 'EB', 1, 0.0, final_lane=2)
    _, sets = coord.register(12.5, _CORRIDOR.path('EB', 1), 1.0)
    self.assertEqual(sets.same_lane_ahead, {1: frozenset(), 2: {1}})

  def test_gamma(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    vehicle_id, _ = _enter(coord, 'EB', 1, 3.0)
    start, end = coord.committed(vehicle_id).gamma
    self.assertEqual(start, 3.0)
    self.assertAlmostEqual(end, 5.4, places=9)

  def test_lane_change_zone_busy(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    _enter(coord, 'EB', 2, 0.0)
    coord.register(12.5, _CORRIDOR.path('EB', 1), 2.0)
    self.assertTrue(coord.snapshot(2, delta=10.0).lane_change_zone_busy)

  def test_other_approach_does_not_block_lane_change(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    _enter(coord, 'WB', 1, 0.0)
    coord.register(12.5, _CORRIDOR.path('EB', 1), 1.0)
    self.assertFalse(coord.snapshot(2, delta=10.0).lane_change_zone_busy)

  def test_register_requires_commit(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    coord.register(12.5, _CORRIDOR.path('EB', 1), 0.0)
    with self.assertRaises(coordinator.CoordinatorError):
      coord.register(12.5, _CORRIDOR.path('NB1', 1), 0.5)

  def test_double_commit_rejected(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    vehicle_id, _ = _enter(coord, 'EB', 1, 0.0)
    plan, trajectory = _cruise(_CORRIDOR.path('EB', 1), 0.0, 12.5, 1)
    with self.assertRaises(coordinator.CoordinatorError):
      coord.commit(vehicle_id, plan, trajectory)

  def test_deregister_errors(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    vehicle_id, _ = _enter(coord, 'EB', 1, 0.0)
    coord.deregister(vehicle_id)
    with self.assertRaises(coordinator.CoordinatorError):
      coord.deregister(vehicle_id)
    with self.assertRaises(coordinator.CoordinatorError):
      coord.deregister(42)

  def test_withdraw_frees_the_index(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    _enter(coord, 'EB', 1, 0.0)
    vehicle_id, _ = coord.register(12.5, _CORRIDOR.path('NB1', 1), 1.0)
    coord.withdraw(vehicle_id)
    self.assertEqual(coord.active_ids(), [1])
    self.assertEqual(coord.next_index, 2)
    self.assertNotIn(vehicle_id, coord.archive)
    again, sets = coord.register(12.5, _CORRIDOR.path('NB1', 1), 1.5)
    self.assertEqual(again, vehicle_id)
    self.assertEqual(sets.lateral[1], {1})

  def test_withdraw_errors(self):
    coord = coordinator.Coordinator(_CORRIDOR)
    vehicle_id, _ = _enter(coord, 'EB', 1, 0.0)
    with self.assertRaises(coordinator.CoordinatorError):
      coord.withdraw(vehicle_id)
    with self.assertRaises(coordinator.CoordinatorError):
      coord.withdraw(42)

  def test_entry_order_key(self):
    keys = [
        coordinator.entry_order_key(1.0, 345.0, 0.1),
        coordinator.entry_order_key(1.0, 165.0, 0.9),
        coordinator.entry_order_key(0.5, 345.0, 0.5),
        coordinator.entry_order_key(1.0, 165.0, 0.2),
    ]
    self.assertEqual(
        sorted(keys), [keys[2], keys[3], keys[1], keys[0]])


if __name__ == '__main__':
  absltest.main()
