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
"""Coordinator queue, conflict sets and committed plans.

Vehicles are indexed in the order they enter the control zone. On entry each
earlier active vehicle is placed in exactly one of three sets:

  * same lane ahead (per committed final lane): same approach;
  * lateral conflict (per zone): crosses one of the shared merging zones on a
    conflicting path;
  * no conflict: everything else.

Planning is sequential: a vehicle can only be registered once every active
vehicle has committed its plan.
"""

import dataclasses
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

from absl import logging

from corridor_opt.planning import ocp
from corridor_opt.planning import scenario
from corridor_opt.planning import scheduler


class CoordinatorError(Exception):
  """Queue misuse: unknown ids, double commits, out-of-order registration."""


def entry_order_key(t0: float, path_length: float,
                    tie_break: float) -> Tuple[float, float, float]:
  """Simultaneous entries: shorter path first, then a seeded random draw."""
  return (t0, path_length, tie_break)


@dataclasses.dataclass(frozen=True)
class ConflictSets:
  same_lane_ahead: Mapping[int, FrozenSet[int]]
  lateral: Mapping[int, FrozenSet[int]]
  no_conflict: FrozenSet[int]

  def all_ids(self) -> FrozenSet[int]:
    out = set(self.no_conflict)
    for ids in self.same_lane_ahead.values():
      out |= ids
    for ids in self.lateral.values():
      out |= ids
    return frozenset(out)


@dataclasses.dataclass(frozen=True)
class CommittedPlan:
  plan: scheduler.SchedulePlan
  trajectory: ocp.TrajectoryArcs
  # Occupancy interval of the lane-changing zone.
  gamma: Tuple[float, float]


@dataclasses.dataclass
class _Vehicle:
  vehicle_id: int
  path: scenario.PathSpec
  t0: float
  v0: float
  conflicts: ConflictSets
  committed: Optional[CommittedPlan] = None


class Coordinator:
  """Single-writer store of the active queue and committed plans."""

  def __init__(self, corridor: scenario.Corridor):
    self._corridor = corridor
    self._active: Dict[int, _Vehicle] = {}
    self._archive: Dict[int, CommittedPlan] = {}
    self._next_index = 1

  @property
  def next_index(self) -> int:
    return self._next_index

  def active_ids(self) -> List[int]:
    return sorted(self._active)

  @property
  def archive(self) -> Mapping[int, CommittedPlan]:
    return dict(self._archive)

  def _get(self, vehicle_id: int) -> _Vehicle:
    try:
      return self._active[vehicle_id]
    except KeyError:
      raise CoordinatorError(f'vehicle {vehicle_id} is not active') from None

  def committed(self, vehicle_id: int) -> Optional[CommittedPlan]:
    return self._get(vehicle_id).committed

  def _partition(self, path: scenario.PathSpec) -> ConflictSets:
    same = {lane: set() for lane in self._corridor.lanes}
    lateral = {zone: set() for zone in path.zones}
    none = set()
    for j, other in self._active.items():
      if other.path.path_id == path.path_id:
        same[other.committed.plan.lane].add(j)
        continue
      zones = [
          z for z in path.zones if z in other.path.zones and
          self._corridor.conflicts(z, path.path_id, other.path.path_id)
      ]
      for z in zones:
        lateral[z].add(j)
      if not zones:
        none.add(j)
    return ConflictSets(
        same_lane_ahead={k: frozenset(v) for k, v in same.items()},
        lateral={k: frozenset(v) for k, v in lateral.items()},
        no_conflict=frozenset(none))

  def register(self, v0: float, path: scenario.PathSpec,
               t0: float) -> Tuple[int, ConflictSets]:
    pending = [j for j, v in self._active.items() if v.committed is None]
    if pending:
      raise CoordinatorError(
          f'vehicles {pending} must commit before a new registration')
    if v0 <= 0:
      raise CoordinatorError(f'entry speed must be > 0, got {v0}')
    vehicle_id = self._next_index
    conflicts = self._partition(path)
    self._active[vehicle_id] = _Vehicle(vehicle_id, path, t0, v0, conflicts)
    self._next_index += 1
    return vehicle_id, conflicts

  def commit(self, vehicle_id: int, plan: scheduler.SchedulePlan,
             trajectory: ocp.TrajectoryArcs):
    vehicle = self._get(vehicle_id)
    if vehicle.committed is not None:
      raise CoordinatorError(f'vehicle {vehicle_id} already committed')
    gamma_end = trajectory.time_at_position(
        self._corridor.lane_change_zone_length)
    vehicle.committed = CommittedPlan(plan, trajectory, (vehicle.t0, gamma_end))

  def deregister(self, vehicle_id: int):
    vehicle = self._get(vehicle_id)
    if vehicle.committed is None:
      raise CoordinatorError(f'vehicle {vehicle_id} never committed')
    del self._active[vehicle_id]
    self._archive[vehicle_id] = vehicle.committed

  def withdraw(self, vehicle_id: int):
    """Drops a registration that could not be planned; it re-enters later."""
    vehicle = self._get(vehicle_id)
    if vehicle.committed is not None:
      raise CoordinatorError(f'vehicle {vehicle_id} already committed')
    del self._active[vehicle_id]
    if vehicle_id == self._next_index - 1:
      self._next_index -= 1

  def conflict_sets(self, vehicle_id: int) -> ConflictSets:
    return self._get(vehicle_id).conflicts

  def reservations(self, vehicle_id: int,
                   zone: int) -> Tuple[scheduler.Reservation, ...]:
    """Occupancy intervals of the still-active lateral conflicts in `zone`."""
    out = []
    for j in sorted(self._get(vehicle_id).conflicts.lateral.get(zone, ())):
      other = self._active.get(j)
      if other is None:
        continue
      plan = other.committed.plan
      out.append(
          scheduler.Reservation(j, plan.arrivals[zone], plan.occupancy[zone]))
    return tuple(out)

  def snapshot(self, vehicle_id: int,
               delta: float) -> scheduler.PlanningContext:
    """Immutable planning input for a registered, uncommitted vehicle."""
    vehicle = self._get(vehicle_id)
    leaders = {}
    for lane, ids in vehicle.conflicts.same_lane_ahead.items():
      alive = [j for j in ids if j in self._active]
      if not alive:
        leaders[lane] = None
        continue
      j = max(alive)
      committed = self._active[j].committed
      leaders[lane] = scheduler.LeaderPlan(
          vehicle_id=j,
          arrivals=dict(committed.plan.arrivals),
          v_avg=committed.plan.v_avg,
          trajectory=committed.trajectory)
    busy = any(
        other.path.path_id == vehicle.path.path_id and
        other.committed.gamma[1] >= vehicle.t0
        for j, other in self._active.items()
        if j != vehicle_id)
    if busy:
      logging.debug('vehicle %d: lane-change zone busy', vehicle_id)
    return scheduler.PlanningContext(
        vehicle_id=vehicle_id,
        path=vehicle.path,
        t0=vehicle.t0,
        v0=vehicle.v0,
        delta=delta,
        reservations={
            zone: self.reservations(vehicle_id, zone)
            for zone in vehicle.path.zones
        },
        leaders=leaders,
        lane_change_zone_busy=busy,
        lanes=self._corridor.lanes)
