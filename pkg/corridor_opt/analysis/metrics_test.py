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
"""Tests for corridor_opt.analysis.metrics."""

from absl.testing import absltest
from absl.testing import parameterized
import numpy as np
from scipy import integrate

from corridor_opt.analysis import metrics


class MetricsTest(parameterized.TestCase):

  def test_time_delay(self):
    self.assertAlmostEqual(metrics.time_delay(0.0, 27.6, 0.0, 345.0, 12.5), 0.0)
    self.assertAlmostEqual(metrics.time_delay(5.0, 35.6, 0.0, 345.0, 12.5), 3.0)
    with self.assertRaises(ValueError):
      metrics.time_delay(0.0, 1.0, 0.0, 1.0, 0.0)

  def test_fuel_model_file(self):
    model = metrics.load_fuel_model()
    self.assertLen(model.cruise, 4)
    self.assertLen(model.acceleration, 3)
    self.assertAlmostEqual(float(metrics.fuel_rate(0.0, 0.0)), model.cruise[0])

  def test_fuel_rate_acceleration_term(self):
    v = np.array([10.0, 10.0, 10.0])
    u = np.array([-1.0, 0.0, 1.0])
    rate = metrics.fuel_rate(v, u)
    self.assertEqual(rate[0], rate[1])
    model = metrics.load_fuel_model()
    expected = model.acceleration[0] + 10 * model.acceleration[1] + (
        100 * model.acceleration[2])
    self.assertAlmostEqual(rate[2] - rate[1], expected)

  def test_fuel_rate_clamped(self):
    model = metrics.FuelModel(cruise=(-1.0, 0.0, 0.0, 0.0),
                              acceleration=(0.0, 0.0, 0.0))
    self.assertEqual(float(metrics.fuel_rate(5.0, 0.0, model)), 0.0)

  def test_cumulative_fuel(self):
    t = np.linspace(0.0, 10.0, 101)
    total = metrics.cumulative_fuel(t, np.full_like(t, 2.0))
    self.assertEqual(total[0], 0.0)
    self.assertAlmostEqual(total[-1], 20.0)
    self.assertTrue(np.all(np.diff(total) >= 0))

  @parameterized.parameters((25.51, 19.41, 24), (37.72, 24.53, 35),
                            (10.0, 10.0, 0), (10.0, 12.0, -20))
  def test_improvement_percent(self, base, experiment, expected):
    self.assertEqual(metrics.improvement_percent(base, experiment), expected)

  def test_vehicle_metrics_cruise(self):
    t = np.linspace(0.0, 27.6, 2761)
    v = np.full_like(t, 12.5)
    result = metrics.vehicle_metrics(
        7, 'EB', 1, 2, t, 12.5 * t, v, np.zeros_like(t))
    self.assertAlmostEqual(result.travel_time, 27.6)
    self.assertAlmostEqual(result.delay, 0.0)
    rate = float(metrics.fuel_rate(12.5, 0.0))
    self.assertAlmostEqual(result.fuel, rate * 27.6, places=9)
    self.assertAlmostEqual(result.avg_fuel_rate, rate)
    self.assertEqual(result.final_lane, 2)
    self.assertEqual(result.min_speed, 12.5)

  def test_published_cruise_rate(self):
    # 0.1569 + 0.0245 * 12 - 7.415e-4 * 144 + 5.975e-5 * 1728 mL/s.
    self.assertAlmostEqual(float(metrics.fuel_rate(12.0, 0.0)), 0.447372)
    t = np.arange(0, 2876) * 0.01
    result = metrics.vehicle_metrics(
        1, 'EB', 1, 1, t, 12.0 * t, np.full_like(t, 12.0), np.zeros_like(t))
    self.assertAlmostEqual(result.travel_time, 28.75)
    self.assertAlmostEqual(result.fuel, 0.447372 * 28.75, places=6)

  @parameterized.parameters(0.1, 0.01, 0.001)
  def test_fuel_does_not_depend_on_sampling_step(self, step):
    # Two seconds at u = 1 from 10 m/s.
    t = np.linspace(0.0, 2.0, int(round(2.0 / step)) + 1)
    v = 10.0 + t
    result = metrics.vehicle_metrics(1, 'EB', 1, 1, t, 10.0 * t + 0.5 * t * t,
                                     v, np.ones_like(t))
    exact, _ = integrate.quad(
        lambda s: float(metrics.fuel_rate(10.0 + s, 1.0)), 0.0, 2.0)
    self.assertAlmostEqual(result.fuel, exact, delta=1e-3 * exact)
    self.assertAlmostEqual(result.avg_fuel_rate, result.fuel / 2.0)


if __name__ == '__main__':
  absltest.main()
