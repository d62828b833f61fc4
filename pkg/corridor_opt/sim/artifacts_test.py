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
"""Tests for corridor_opt.sim.artifacts."""

import csv
import json
import os

from absl.testing import absltest
import numpy as np

from corridor_opt.analysis import metrics
from corridor_opt.sim import artifacts


def _vehicle(vehicle_id, travel_time):
  return metrics.VehicleMetrics(
      vehicle_id=vehicle_id,
      path_id='P1',
      entry_lane=1,
      final_lane=1,
      t0=0.0,
      tf=travel_time,
      v0=10.0,
      travel_time=travel_time,
      delay=0.0,
      fuel=2.0 * travel_time,
      avg_fuel_rate=2.0,
      min_speed=10.0,
      max_speed=10.0)


class ArtifactsTest(absltest.TestCase):

  def _run(self):
    run = artifacts.RunArtifacts(
        mode='optimal',
        scenario='scenario1',
        volume=1200,
        seed=3,
        corridor_fingerprint='abc')
    run.vehicles = [_vehicle(2, 40.0), _vehicle(1, 30.0)]
    run.latencies = {1: 0.01, 2: 0.03}
    run.log_event(0.0, 'arrival', 1, lane=1)
    run.log_event(0.5, 'commit', 1, final_lane=2)
    run.bump('deferred')
    run.bump('deferred')
    run.envelope = np.array([[0.0, 1, 10.0, 10.0, 10.0],
                             [0.5, 2, 9.0, 9.5, 10.0]])
    return run

  def test_unknown_event_rejected(self):
    with self.assertRaises(ValueError):
      artifacts.Event(0.0, 'teleport', 1)

  def test_summary(self):
    summary = self._run().summary()
    self.assertEqual(summary['vehicles'], 2)
    self.assertAlmostEqual(summary['travel_time']['mean'], 35.0)
    self.assertAlmostEqual(summary['latency_max'], 0.03)
    self.assertEqual(summary['counters'], {'deferred': 2})

  def test_empty_summary(self):
    run = artifacts.RunArtifacts('baseline', 's', 600, 0, 'x')
    summary = run.summary()
    self.assertEqual(summary['vehicles'], 0)
    self.assertIsNone(summary['delay']['mean'])
    self.assertIsNone(summary['latency_max'])

  def test_write_run(self):
    out = self.create_tempdir().full_path
    paths = artifacts.write_run(out, self._run())
    self.assertNotIn('trajectories', paths)
    with open(paths['metrics'], encoding='utf-8') as f:
      rows = list(csv.reader(f))
    self.assertEqual(rows[0][0], 'vehicle_id')
    self.assertNotIn('latency', rows[0])
    self.assertEqual([r[0] for r in rows[1:]], ['1', '2'])

    events = artifacts.read_events(paths['events'])
    self.assertEqual([e.event for e in events], ['arrival', 'commit'])
    self.assertEqual(events[1].detail, {'final_lane': 2})

    with open(paths['envelope'], encoding='utf-8') as f:
      rows = list(csv.reader(f))
    self.assertEqual(rows[0], ['t', 'count', 'v_min', 'v_mean', 'v_max'])
    self.assertEqual(rows[2][:2], ['0.500', '2'])

    with open(paths['summary'], encoding='utf-8') as f:
      self.assertEqual(json.load(f)['seed'], 3)

  def test_trajectories_written_when_present(self):
    run = self._run()
    run.trajectories = [(1, 0.0, 0.0, 10.0, 0.0, 1, 0)]
    out = self.create_tempdir().full_path
    paths = artifacts.write_run(out, run)
    self.assertTrue(os.path.exists(paths['trajectories']))
    with open(paths['trajectories'], encoding='utf-8') as f:
      rows = list(csv.reader(f))
    self.assertEqual(tuple(rows[0]), artifacts.TRAJECTORY_HEADER)
    self.assertLen(rows, 2)

  def test_run_dir_name(self):
    self.assertEqual(artifacts.run_dir_name('optimal', 1200.0, 4),
                     'optimal_v1200_s4')


if __name__ == '__main__':
  absltest.main()
