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
"""Merging-zone arrival times and lane selection.

For a newly registered vehicle the scheduler walks its path zone by zone and
picks the earliest arrival time that

  * is not earlier than the unconstrained (constant-speed) arrival,
  * keeps the rear-end headway to the last vehicle planned in the same lane,
  * does not overlap any lateral-conflict occupancy interval already reserved
    in the zone.

With an idle time every comparison is padded so that bounded tracking errors
cannot turn a touching pair of intervals into an overlap.
"""

import dataclasses
import math
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

from corridor_opt.planning import ocp
from corridor_opt.planning import scenario


@dataclasses.dataclass(frozen=True)
class Reservation:
  """A committed occupancy interval [arrival, arrival + occupancy]."""
  vehicle_id: int
  arrival: float
  occupancy: float


@dataclasses.dataclass(frozen=True)
class LeaderPlan:
  """The most recent vehicle planned in a lane on the same approach."""
  vehicle_id: int
  arrivals: Mapping[int, float]
  v_avg: float
  trajectory: Optional[ocp.TrajectoryArcs] = None


@dataclasses.dataclass(frozen=True)
class PlanningContext:
  """Everything the scheduler may read when planning one vehicle."""
  vehicle_id: int
  path: scenario.PathSpec
  t0: float
  v0: float
  delta: float
  # zone -> lateral-conflict reservations
  reservations: Mapping[int, Tuple[Reservation, ...]]
  # lane -> last planned same-approach vehicle in that lane
  leaders: Mapping[int, Optional[LeaderPlan]]
  lane_change_zone_busy: bool
  lanes: Tuple[int, ...]


@dataclasses.dataclass(frozen=True)
class SchedulePlan:
  lane: int
  zones: Tuple[int, ...]
  arrivals: Mapping[int, float]
  occupancy: Mapping[int, float]
  exit_time: float
  v_avg: float

  @property
  def final_arrival(self) -> float:
    return self.arrivals[self.zones[-1]]


@dataclasses.dataclass(frozen=True)
class SafetyTimes:
  """Rear-end headway rho = delta / v_avg of the leader, and the idle time."""
  rho: float
  idle: float = 0.0

  def __post_init__(self):
    if not self.rho > 0:
      raise ValueError(f'rear-end headway must be > 0, got {self.rho}')
    if self.idle < 0:
      raise ValueError(f'idle time must be >= 0, got {self.idle}')

  @classmethod
  def for_leader(cls, delta: float, leader_v_avg: float,
                 idle: float = 0.0) -> 'SafetyTimes':
    if leader_v_avg <= 0:
      raise ValueError(f'leader average speed must be > 0: {leader_v_avg}')
    return cls(rho=delta / leader_v_avg, idle=idle)


def idle_time(epsilon: float, v_min: float) -> float:
  """Time a bounded position error 2 * epsilon takes at the minimum speed."""
  if v_min <= 0:
    raise ValueError(f'v_min must be > 0 for an idle time, got {v_min}')
  if epsilon < 0:
    raise ValueError(f'epsilon must be >= 0, got {epsilon}')
  return 2.0 * epsilon / v_min


def unconstrained_arrival(path: scenario.PathSpec,
                          t0: float,
                          v0: float,
                          zone_index: int,
                          previous_arrival: Optional[float] = None,
                          occupancy: Optional[float] = None) -> float:
  """Earliest zone arrival when cruising at the entry speed.

  Args:
    path: the vehicle path.
    t0: entry time.
    v0: entry speed.
    zone_index: 0-based index of the zone along `path`.
    previous_arrival: scheduled arrival at the previous zone (index > 0).
    occupancy: time spent in the previous zone; defaults to S / v0.

  Returns:
    The lower bound on the arrival time at the zone.
  """
  if not 0 <= zone_index < len(path.zones):
    raise ValueError(f'zone index {zone_index} outside path {path.path_id}')
  if v0 <= 0:
    raise ValueError(f'entry speed must be > 0, got {v0}')
  if zone_index == 0:
    return t0 + path.zone_offsets[0] / v0
  if previous_arrival is None:
    raise ValueError(f'zone index {zone_index} needs the previous arrival')
  if occupancy is None:
    occupancy = scenario.zone_occupancy_duration(v0, path.merging_zone_length)
  return previous_arrival + occupancy + path.gap_before(zone_index) / v0


def _sorted(reservations: Iterable[Reservation]) -> Sequence[Reservation]:
  return sorted(reservations, key=lambda r: (r.arrival, r.occupancy,
                                             r.vehicle_id))


def earliest_slot(lower: float, reservations: Iterable[Reservation],
                  occupancy: float, idle: float = 0.0) -> float:
  """Scans the reserved intervals of one zone in arrival order."""
  t = lower
  for r in _sorted(reservations):
    if r.arrival + r.occupancy + idle <= t:
      continue
    if t + occupancy + idle <= r.arrival:
      break
    t = r.arrival + r.occupancy + idle
  return t


def brute_force_arrival(lower: float, reservations: Sequence[Reservation],
                        occupancy: float, idle: float = 0.0) -> float:
  """Smallest feasible candidate; reference for `earliest_slot`."""

  def feasible(t):
    return all(t + occupancy + idle <= r.arrival or
               r.arrival + r.occupancy + idle <= t for r in reservations)

  candidates = [lower] + [
      r.arrival + r.occupancy + idle
      for r in reservations
      if r.arrival + r.occupancy + idle >= lower
  ]
  return min(t for t in candidates if feasible(t))


def arrival_times_with_idle(
    context: PlanningContext,
    lane: int,
    idle: float,
    floors: Optional[Mapping[int, float]] = None) -> SchedulePlan:
  """Arrival time at every zone of the path when planning in `lane`."""
  path = context.path
  occupancy = scenario.zone_occupancy_duration(context.v0,
                                               path.merging_zone_length)
  leader = context.leaders.get(lane)
  safety = None
  if leader is not None:
    safety = SafetyTimes.for_leader(context.delta, leader.v_avg, idle)
  arrivals = {}
  previous = None
  for index, zone in enumerate(path.zones):
    lower = unconstrained_arrival(path, context.t0, context.v0, index,
                                  previous, occupancy)
    if safety is not None and zone in leader.arrivals:
      lower = max(lower, leader.arrivals[zone] + safety.rho + safety.idle)
    if floors and zone in floors:
      lower = max(lower, floors[zone])
    previous = earliest_slot(lower, context.reservations.get(zone, ()),
                             occupancy, idle)
    arrivals[zone] = previous
  return SchedulePlan(
      lane=lane,
      zones=path.zones,
      arrivals=arrivals,
      occupancy={zone: occupancy for zone in path.zones},
      exit_time=previous + occupancy,
      v_avg=context.v0)


def arrival_times(context: PlanningContext,
                  lane: int,
                  floors: Optional[Mapping[int, float]] = None) -> SchedulePlan:
  return arrival_times_with_idle(context, lane, 0.0, floors)


FloorFn = Callable[[int], Optional[Mapping[int, float]]]


def choose_lane(context: PlanningContext,
                idle: float = 0.0,
                floor_fn: Optional[FloorFn] = None) -> SchedulePlan:
  """Plans the entry lane and switches only for a strictly earlier exit.

  Args:
    context: the planning snapshot.
    idle: idle time padding every comparison.
    floor_fn: optional per-lane extra lower bounds on zone arrivals.

  Returns:
    The plan of the selected lane.
  """

  def plan(lane):
    floors = floor_fn(lane) if floor_fn else None
    return arrival_times_with_idle(context, lane, idle, floors)

  entry_lane = context.path.entry_lane
  best = plan(entry_lane)
  if context.lane_change_zone_busy or len(context.lanes) < 2:
    return best
  for lane in sorted(context.lanes):
    if lane == entry_lane:
      continue
    candidate = plan(lane)
    if candidate.final_arrival < best.final_arrival:
      best = candidate
  return best


def rear_end_floors(path: scenario.PathSpec, leader: ocp.TrajectoryArcs,
                    occupancy: float, gap: float) -> Dict[int, float]:
  """Per-zone arrival floors keeping `gap` to `leader` at entry and exit.

  When the follower reaches a zone entry (offset o) the leader must already
  be at o + gap; when it leaves the zone (o + S, `occupancy` later) the
  leader must be at o + S + gap. Positions beyond the leader's horizon are
  reached by cruising.
  """
  floors = {}
  for zone, offset in zip(path.zones, path.zone_offsets):
    at_entry = leader.time_at_position(offset + gap)
    at_exit = leader.time_at_position(offset + path.merging_zone_length +
                                      gap) - occupancy
    floors[zone] = max(at_entry, at_exit)
  return floors


def merge_floors(*floors: Optional[Mapping[int, float]]) -> Dict[int, float]:
  out = {}
  for f in floors:
    for zone, t in (f or {}).items():
      out[zone] = max(out.get(zone, -math.inf), t)
  return out


def cruise_floors(path: scenario.PathSpec, plan: SchedulePlan,
                  speed: float) -> Dict[int, float]:
  """Floors that close the gaps between zones at a cruising speed.

  Walking back from the last zone, every earlier zone is floored so that the
  vehicle leaves it and covers the following gap at `speed` no earlier than
  the later arrival. A late zone then no longer forces a crawl through the
  gap in front of it; the wait moves ahead of the first zone.

  Args:
    path: the vehicle path.
    plan: the plan whose arrivals are propagated backwards.
    speed: cruising speed between zones.

  Returns:
    Floors for every zone but the last.
  """
  if speed <= 0:
    raise ValueError(f'cruising speed must be > 0, got {speed}')
  floors = {}
  later = plan.arrivals[path.zones[-1]]
  for index in range(len(path.zones) - 1, 0, -1):
    zone = path.zones[index - 1]
    floors[zone] = (
        later - plan.occupancy[zone] - path.gap_before(index) / speed)
    later = max(plan.arrivals[zone], floors[zone])
  return floors
