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
"""Run-time safety checks on sampled vehicle positions."""

import collections
import dataclasses
import itertools
import json
from typing import Dict, List, Optional, Sequence, Tuple

from absl import logging

from corridor_opt import constant
from corridor_opt.planning import scenario


@dataclasses.dataclass(frozen=True)
class Sample:
  vehicle_id: int
  path_id: str
  lane: int
  p: float


@dataclasses.dataclass(frozen=True)
class Violation:
  t: float
  kind: str  # 'rear_end' or 'lateral'
  vehicles: Tuple[int, int]
  value: float
  zone: int = 0


class SafetyViolationError(Exception):
  """Raised after a run recorded at least one safety violation."""

  def __init__(self, violations: Sequence[Violation]):
    self.violations = tuple(violations)
    first = self.violations[0]
    super().__init__(
        f'{len(self.violations)} safety violations; first: {first.kind} '
        f'between {first.vehicles} at t={first.t:.3f}')

  def __reduce__(self):
    return (type(self), (self.violations,))


class SafetyMonitor:
  """Checks same-lane gaps and lateral zone exclusivity at every step."""

  def __init__(self,
               corridor: scenario.Corridor,
               gap: float,
               tolerance: float = constant.MONITOR_TOLERANCE):
    self._corridor = corridor
    self._gap = gap
    self._tolerance = tolerance
    self._offsets: Dict[str, Dict[int, float]] = {}
    for path_id in corridor.path_ids():
      path = corridor.path(path_id, corridor.lanes[0])
      self._offsets[path_id] = dict(zip(path.zones, path.zone_offsets))
    self._violations: List[Violation] = []

  @property
  def gap(self) -> float:
    return self._gap

  @property
  def violations(self) -> List[Violation]:
    return list(self._violations)

  def _zone_of(self, sample: Sample) -> int:
    s = self._corridor.merging_zone_length
    for zone, offset in self._offsets[sample.path_id].items():
      if offset + self._tolerance < sample.p < offset + s - self._tolerance:
        return zone
    return 0

  def check(self, t: float, samples: Sequence[Sample]) -> List[Violation]:
    """Records and returns the violations among `samples` at time `t`."""
    found = []
    lanes = collections.defaultdict(list)
    for sample in samples:
      lanes[(sample.path_id, sample.lane)].append(sample)
    for group in lanes.values():
      group.sort(key=lambda s: s.p, reverse=True)
      for ahead, behind in zip(group, group[1:]):
        gap = ahead.p - behind.p
        if gap < self._gap - self._tolerance:
          found.append(
              Violation(t, 'rear_end', (ahead.vehicle_id, behind.vehicle_id),
                        gap))
    zones = collections.defaultdict(list)
    for sample in samples:
      zone = self._zone_of(sample)
      if zone:
        zones[zone].append(sample)
    for zone, inside in zones.items():
      for a, b in itertools.combinations(inside, 2):
        if self._corridor.conflicts(zone, a.path_id, b.path_id):
          found.append(
              Violation(t, 'lateral', (a.vehicle_id, b.vehicle_id), 0.0, zone))
    self._violations.extend(found)
    return found

  def dump(self, path: str):
    with open(path, 'w', encoding='utf-8') as f:
      json.dump([dataclasses.asdict(v) for v in self._violations],
                f,
                indent=2,
                cls=constant.DataClassJSONEncoder)

  def raise_if_violated(self, dump_path: Optional[str] = None):
    if not self._violations:
      return
    if dump_path:
      self.dump(dump_path)
      logging.error('safety violations written to %s', dump_path)
    raise SafetyViolationError(self._violations)
