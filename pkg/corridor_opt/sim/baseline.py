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
"""Fixed-time signalised corridor with car following, for comparison.

Every intersection runs a two-phase plan: the cross street (NB/SB) is green
first, the arterial (EB/WB) second, each phase ending with an all-red
interval. Vehicles follow the intelligent driver model and keep their entry
lane. A vehicle that sees its next signal turn non-green stops when the
constant deceleration needed to halt at the stop line is within its maximum
deceleration; otherwise it commits and clears the intersection. A vehicle on
green still yields while a conflicting vehicle occupies, or is committed to,
the merging zone.
"""

import dataclasses
import math
import time
from typing import Dict, List, Optional, Sequence, Set, Tuple

from absl import logging
import gin
import numpy as np

from corridor_opt.analysis import metrics
from corridor_opt.planning import scenario
from corridor_opt.sim import artifacts
from corridor_opt.sim import safety_monitor
from corridor_opt.sim import simulator
from corridor_opt.sim import traffic_flow


@gin.configurable(module='baseline')
@dataclasses.dataclass(frozen=True)
class SignalPlan:
  """Two-phase fixed-time plan shared by all intersections.

  The cross-street green is [0, ns_split * cycle - all_red) and the arterial
  green [ns_split * cycle, cycle - all_red), both in the local cycle time of
  an intersection (clock minus its offset).
  """
  cycle: float = 60.0
  ns_split: float = 0.5
  all_red: float = 2.0
  # Per-intersection offsets in seconds; empty means all zero.
  offsets: Tuple[float, ...] = ()
  stop_line_setback: float = 2.0

  def __post_init__(self):
    if not self.cycle > 0:
      raise ValueError(f'cycle must be > 0, got {self.cycle}')
    if not 0 < self.ns_split < 1:
      raise ValueError(f'ns_split must be in (0, 1), got {self.ns_split}')
    ns_green = self.ns_split * self.cycle
    if not 0 <= self.all_red < min(ns_green, self.cycle - ns_green):
      raise ValueError(f'all-red {self.all_red} does not fit in a phase')
    if self.stop_line_setback < 0:
      raise ValueError('stop-line setback must be >= 0')

  def offset(self, zone: int) -> float:
    if not self.offsets:
      return 0.0
    if not 1 <= zone <= len(self.offsets):
      raise ValueError(f'no signal offset for intersection {zone}')
    return self.offsets[zone - 1]

  def is_green(self, zone: int, path_id: str, t: float) -> bool:
    phase = (t - self.offset(zone)) % self.cycle
    split = self.ns_split * self.cycle
    if path_id in scenario.ARTERIAL_PATHS:
      return split <= phase < self.cycle - self.all_red
    return phase < split - self.all_red


@gin.configurable(module='baseline')
@dataclasses.dataclass(frozen=True)
class CarFollowingParams:
  # None: every vehicle wants to keep its entry speed.
  desired_speed: Optional[float] = None
  max_acceleration: float = 2.0
  comfortable_deceleration: float = 2.0
  max_deceleration: float = 3.0
  time_headway: float = 1.2
  jam_gap: float = 2.0
  exponent: float = 4.0
  # Added to the jam gap while following; absorbs the discrete update.
  standstill_buffer: float = 1.0

  def __post_init__(self):
    positive = ('max_acceleration', 'comfortable_deceleration',
                'max_deceleration', 'jam_gap', 'exponent')
    for name in positive:
      if not getattr(self, name) > 0:
        raise ValueError(f'{name} must be > 0')
    if self.time_headway < 0 or self.standstill_buffer < 0:
      raise ValueError('time headway and standstill buffer must be >= 0')
    if self.desired_speed is not None and not self.desired_speed > 0:
      raise ValueError('desired speed must be > 0')

  @property
  def minimum_gap(self) -> float:
    return self.jam_gap + self.standstill_buffer

  def desired_gap(self, v: float, dv: float) -> float:
    """IDM desired gap at speed `v` closing at `dv` on the leader."""
    brake = 2.0 * math.sqrt(self.max_acceleration *
                            self.comfortable_deceleration)
    return self.minimum_gap + max(0.0, v * self.time_headway + v * dv / brake)

  def acceleration(self,
                   v: float,
                   v_desired: float,
                   gap: Optional[float] = None,
                   dv: float = 0.0) -> float:
    free = 1.0 - (max(v, 0.0) / v_desired)**self.exponent
    if gap is None:
      return self.max_acceleration * free
    interaction = self.desired_gap(v, dv) / max(gap, 1e-3)
    return self.max_acceleration * (free - interaction * interaction)


def ballistic_update(p: float, v: float, a: float,
                     dt: float) -> Tuple[float, float]:
  """Constant-acceleration step that stops at zero speed."""
  v_next = v + a * dt
  if v_next < 0.0:
    return p - v * v / (2.0 * a), 0.0
  return p + v * dt + 0.5 * a * dt * dt, v_next


@dataclasses.dataclass
class _Car:
  vehicle_id: int
  path: scenario.PathSpec
  t0: float
  v0: float
  v_desired: float
  p: float
  v: float
  u: float = 0.0
  # zone -> 'stop' or 'go', decided at the first non-green sighting
  decisions: Dict[int, str] = dataclasses.field(default_factory=dict)
  ts: List[float] = dataclasses.field(default_factory=list)
  ps: List[float] = dataclasses.field(default_factory=list)
  vs: List[float] = dataclasses.field(default_factory=list)
  us: List[float] = dataclasses.field(default_factory=list)

  def record(self, t: float):
    self.ts.append(t)
    self.ps.append(self.p)
    self.vs.append(self.v)
    self.us.append(self.u)


class _BaselineRun:
  """Fixed-step loop over signals, car following and entries."""

  def __init__(self, corridor: scenario.Corridor, signal: SignalPlan,
               cf: CarFollowingParams, config: simulator.SimConfig,
               step: float, run: artifacts.RunArtifacts):
    if signal.offsets and len(signal.offsets) != corridor.n_zones:
      raise ValueError(
          f'{len(signal.offsets)} signal offsets for {corridor.n_zones} '
          'intersections')
    self._corridor = corridor
    self._signal = signal
    self._cf = cf
    self._step = step
    self._run = run
    self._cars: Dict[int, _Car] = {}
    self._next_id = 1
    # zone -> vehicles committed to clear it on a non-green
    self._committed: Dict[int, Set[int]] = {
        z: set() for z in range(1, corridor.n_zones + 1)
    }
    self._monitor = safety_monitor.SafetyMonitor(corridor, cf.jam_gap)
    self._envelope: List[List[float]] = []
    self._rows: Optional[List[tuple]] = (
        [] if config.export_trajectories else None)
    self._stride = max(
        1, round(config.trajectory_stride * config.playback_step / step))

  def _stop_line(self, path: scenario.PathSpec, index: int) -> float:
    return path.zone_offsets[index] - self._signal.stop_line_setback

  def _upcoming(self, car: _Car) -> Optional[Tuple[int, float]]:
    """Next zone and distance to its stop line, None once past the last."""
    for index, zone in enumerate(car.path.zones):
      line = self._stop_line(car.path, index)
      if car.p < line:
        return zone, line - car.p
    return None

  def _occupies(self, car: _Car, zone: int) -> bool:
    if zone not in car.path.zones:
      return False
    index = car.path.zone_index(zone)
    return (self._stop_line(car.path, index) <= car.p <
            car.path.zone_offsets[index] + car.path.merging_zone_length)

  def _zone_blocked(self, car: _Car, zone: int) -> bool:
    for other in self._cars.values():
      if other is car or zone not in other.path.zones:
        continue
      if not self._corridor.conflicts(zone, car.path.path_id,
                                      other.path.path_id):
        continue
      if other.vehicle_id in self._committed[zone] or self._occupies(
          other, zone):
        return True
    return False

  def _can_stop(self, car: _Car, distance: float) -> bool:
    if distance <= 0.0:
      return False
    return car.v * car.v / (2.0 * distance) <= self._cf.max_deceleration

  def _must_stop(self, car: _Car, t: float) -> Optional[float]:
    """Distance to the stop line the car has to halt at, if any."""
    upcoming = self._upcoming(car)
    if upcoming is None:
      return None
    zone, distance = upcoming
    if not self._signal.is_green(zone, car.path.path_id, t):
      decision = car.decisions.get(zone)
      if decision is None:
        decision = 'stop' if self._can_stop(car, distance) else 'go'
        car.decisions[zone] = decision
        if decision == 'go':
          self._committed[zone].add(car.vehicle_id)
          self._run.log_event(
              t, 'commit', car.vehicle_id, zone=zone, distance=distance)
      return distance if decision == 'stop' else None
    car.decisions.pop(zone, None)
    if self._zone_blocked(car, zone) and self._can_stop(car, distance):
      return distance
    return None

  def _leader(self, car: _Car) -> Optional[_Car]:
    ahead = [
        c for c in self._cars.values()
        if c is not car and c.path.path_id == car.path.path_id and
        c.path.entry_lane == car.path.entry_lane and c.p > car.p
    ]
    return min(ahead, key=lambda c: c.p) if ahead else None

  def _stream_tail(self, path_id: str, lane: int) -> Optional[_Car]:
    stream = [
        c for c in self._cars.values()
        if c.path.path_id == path_id and c.path.entry_lane == lane
    ]
    return min(stream, key=lambda c: c.p) if stream else None

  def _acceleration(self, car: _Car, t: float) -> float:
    leader = self._leader(car)
    if leader is None:
      a = self._cf.acceleration(car.v, car.v_desired)
    else:
      a = self._cf.acceleration(car.v, car.v_desired, leader.p - car.p,
                                car.v - leader.v)
    stop_distance = self._must_stop(car, t)
    if stop_distance is not None:
      a = min(a,
              self._cf.acceleration(car.v, car.v_desired, stop_distance,
                                    car.v))
    return a

  def _admissible(self, arrival: traffic_flow.Arrival) -> bool:
    tail = self._stream_tail(arrival.path_id, arrival.lane)
    if tail is None:
      return True
    return tail.p >= self._cf.desired_gap(arrival.v0, arrival.v0 - tail.v)

  def _admit(self, queue: traffic_flow.EntryQueue, k: int):
    t = k * self._step
    blocked = set()
    for rank, arrival in queue.pop_due(k):
      stream = (arrival.path_id, arrival.lane)
      if rank not in queue.deferred_ranks:
        self._run.log_event(
            arrival.t0, 'arrival', 0, path_id=arrival.path_id,
            lane=arrival.lane, v0=arrival.v0, rank=rank)
      if stream in blocked or not self._admissible(arrival):
        blocked.add(stream)
        if queue.defer(k, rank, arrival):
          self._run.bump('deferred')
          self._run.log_event(
              arrival.t0, 'deferred', 0, path_id=arrival.path_id,
              lane=arrival.lane, rank=rank)
        continue
      vehicle_id = self._next_id
      self._next_id += 1
      path = self._corridor.path(arrival.path_id, arrival.lane)
      v_desired = self._cf.desired_speed or arrival.v0
      self._cars[vehicle_id] = _Car(vehicle_id, path, t, arrival.v0,
                                    v_desired, 0.0, arrival.v0)
      self._run.log_event(
          t, 'register', vehicle_id, path_id=path.path_id, lane=arrival.lane,
          v0=arrival.v0)

  def _sample(self, t: float, k: int):
    samples = []
    speeds = []
    for vehicle_id in sorted(self._cars):
      car = self._cars[vehicle_id]
      car.record(t)
      samples.append(
          safety_monitor.Sample(vehicle_id, car.path.path_id,
                                car.path.entry_lane, car.p))
      speeds.append(car.v)
      if self._rows is not None and k % self._stride == 0:
        self._rows.append((vehicle_id, round(t, 6), car.p, car.v, car.u,
                           car.path.entry_lane, car.path.zone_at(car.p)))
    if samples:
      self._monitor.check(t, samples)
      self._envelope.append(simulator.speed_envelope_row(t, speeds))

  def _exit(self, car: _Car, t: float, p_prev: float, v_prev: float):
    """Closes the record at the interpolated crossing of the path end."""
    end = car.path.path_length
    frac = (end - p_prev) / (car.p - p_prev)
    t_exit = t + frac * self._step
    car.ts.append(t_exit)
    car.ps.append(end)
    car.vs.append(v_prev + frac * (car.v - v_prev))
    car.us.append(car.u)
    for committed in self._committed.values():
      committed.discard(car.vehicle_id)
    del self._cars[car.vehicle_id]
    self._run.vehicles.append(
        metrics.vehicle_metrics(car.vehicle_id, car.path.path_id,
                                car.path.entry_lane, car.path.entry_lane,
                                np.array(car.ts), np.array(car.ps),
                                np.array(car.vs), np.array(car.us)))
    self._run.log_event(t_exit, 'exit', car.vehicle_id)

  def _advance(self, t: float):
    accelerations = {
        vehicle_id: self._acceleration(car, t)
        for vehicle_id, car in sorted(self._cars.items())
    }
    for vehicle_id, a in accelerations.items():
      car = self._cars[vehicle_id]
      p_prev, v_prev = car.p, car.v
      car.u = a
      car.p, car.v = ballistic_update(car.p, car.v, a, self._step)
      for index, zone in enumerate(car.path.zones):
        zone_end = car.path.zone_offsets[index] + car.path.merging_zone_length
        if p_prev < zone_end <= car.p:
          self._committed[zone].discard(vehicle_id)
      if car.p >= car.path.path_length:
        self._exit(car, t, p_prev, v_prev)

  def run(self, arrivals: Sequence[traffic_flow.Arrival],
          dump_path: Optional[str] = None):
    queue = traffic_flow.EntryQueue(arrivals, self._step)
    k = 0
    while len(queue) or self._cars:
      if not self._cars:
        k = max(k, queue.next_step())
      t = k * self._step
      self._admit(queue, k)
      self._sample(t, k)
      self._advance(t)
      logging.log_every_n_seconds(logging.INFO, 't=%.1f cars=%d waiting=%d',
                                  10, t, len(self._cars), len(queue))
      k += 1
    self._monitor.raise_if_violated(dump_path)
    if self._envelope:
      self._run.envelope = np.array(self._envelope)
    self._run.trajectories = self._rows


def run_baseline(corridor: scenario.Corridor,
                 limits: scenario.VehicleLimits,
                 flow: traffic_flow.FlowSpec,
                 signal: Optional[SignalPlan] = None,
                 cf: Optional[CarFollowingParams] = None,
                 config: Optional[simulator.SimConfig] = None,
                 scenario_name: str = 'scenario',
                 arrivals: Optional[Sequence[traffic_flow.Arrival]] = None,
                 dump_path: Optional[str] = None,
                 step: float = 0.1) -> artifacts.RunArtifacts:
  """Runs the signalised corridor on the same demand as `run_optimal`.

  Entry times are snapped to the car-following step. Entries are deferred
  until the desired car-following gap to the stream's last vehicle holds.
  """
  signal = signal or SignalPlan()
  cf = cf or CarFollowingParams()
  config = config or simulator.make_sim_config()
  start = time.perf_counter()
  if arrivals is None:
    arrivals = simulator.generate_demand(flow, corridor, limits)
  run = artifacts.RunArtifacts(
      mode='baseline',
      scenario=scenario_name,
      volume=flow.volume,
      seed=flow.seed,
      corridor_fingerprint=corridor.fingerprint())
  _BaselineRun(corridor, signal, cf, config, step, run).run(arrivals, dump_path)
  run.wall_time = time.perf_counter() - start
  logging.info('%s baseline volume=%g seed=%d: %d vehicles, %d deferred, '
               '%.1f s', scenario_name, flow.volume, flow.seed,
               len(run.vehicles), run.counters.get('deferred', 0),
               run.wall_time)
  return run
