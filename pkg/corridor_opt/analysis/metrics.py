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
"""Per-vehicle travel time, delay and fuel metrics."""

import dataclasses
import functools
import json
import math
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from corridor_opt import constant


@dataclasses.dataclass(frozen=True)
class FuelModel:
  """rate = cruise(v) + [u > 0] * u * acceleration(v), clamped at zero.

  Both polynomials are in increasing powers of v.
  """
  cruise: Sequence[float]
  acceleration: Sequence[float]

  def rate(self, v, u):
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    cruise = np.polynomial.polynomial.polyval(v, self.cruise)
    accel = np.polynomial.polynomial.polyval(v, self.acceleration)
    rate = cruise + np.where(u > 0, u * accel, 0.0)
    return np.maximum(rate, 0.0)


@functools.lru_cache(maxsize=None)
def load_fuel_model(path: str = constant.FUEL_MODEL_PATH) -> FuelModel:
  with open(path, encoding='utf-8') as f:
    data = json.load(f)
  cruise = tuple(float(c) for c in data['cruise'])
  acceleration = tuple(float(c) for c in data['acceleration'])
  if len(cruise) != 4 or len(acceleration) != 3:
    raise ValueError(f'{path}: expected 4 cruise and 3 acceleration terms')
  return FuelModel(cruise=cruise, acceleration=acceleration)


def fuel_rate(v, u, model: Optional[FuelModel] = None):
  """Instantaneous fuel rate in mL/s."""
  return (model or load_fuel_model()).rate(v, u)


def cumulative_fuel(t, rate) -> np.ndarray:
  """Running trapezoidal integral of `rate` over `t`; starts at zero."""
  return integrate.cumulative_trapezoid(rate, t, initial=0.0)


def time_delay(t0: float, tf: float, p0: float, pf: float, v0: float) -> float:
  """Travel time in excess of cruising the same distance at the entry speed."""
  if v0 <= 0:
    raise ValueError(f'entry speed must be > 0, got {v0}')
  return (tf - t0) - (pf - p0) / v0


def improvement_percent(base: float, experiment: float) -> int:
  """Integer improvement of `experiment` over `base`, rounded half up."""
  if base <= 0:
    raise ValueError(f'baseline value must be > 0, got {base}')
  return int(math.floor(100.0 * (1.0 - experiment / base) + 0.5))


@dataclasses.dataclass(frozen=True)
class VehicleMetrics:
  vehicle_id: int
  path_id: str
  entry_lane: int
  final_lane: int
  t0: float
  tf: float
  v0: float
  travel_time: float
  delay: float
  fuel: float
  avg_fuel_rate: float
  min_speed: float
  max_speed: float


def vehicle_metrics(vehicle_id: int,
                    path_id: str,
                    entry_lane: int,
                    final_lane: int,
                    t: np.ndarray,
                    p: np.ndarray,
                    v: np.ndarray,
                    u: np.ndarray,
                    model: Optional[FuelModel] = None) -> VehicleMetrics:
  """Metrics of one vehicle from its samples between entry and exit."""
  t = np.asarray(t, dtype=float)
  if t.size < 2:
    raise ValueError(f'vehicle {vehicle_id}: need at least two samples')
  rate = fuel_rate(v, u, model)
  fuel = float(integrate.trapezoid(rate, t))
  travel_time = float(t[-1] - t[0])
  return VehicleMetrics(
      vehicle_id=vehicle_id,
      path_id=path_id,
      entry_lane=entry_lane,
      final_lane=final_lane,
      t0=float(t[0]),
      tf=float(t[-1]),
      v0=float(v[0]),
      travel_time=travel_time,
      delay=float(time_delay(t[0], t[-1], p[0], p[-1], v[0])),
      fuel=fuel,
      avg_fuel_rate=fuel / travel_time,
      min_speed=float(np.min(v)),
      max_speed=float(np.max(v)))
