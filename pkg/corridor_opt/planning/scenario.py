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
"""Corridor geometry, vehicle limits and scenario files.

The corridor is a straight arterial crossing `n_z` intersections. Each
intersection owns one merging zone of length S. Vehicles travel on straight
paths only:

  * `EB` / `WB`: the arterial, crossing every merging zone;
  * `NB<k>` / `SB<k>`: the cross street of intersection k, crossing zone k.

All positions are measured along a path from the control-zone entry.
"""

import dataclasses
import hashlib
import json
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import gin

ARTERIAL_PATHS = ('EB', 'WB')


class ScenarioError(ValueError):
  """A corridor, limit or scenario file value violates its invariants."""


def _require(condition: bool, message: str):
  if not condition:
    raise ScenarioError(message)


@dataclasses.dataclass(frozen=True)
class VehicleLimits:
  """Control/speed bounds and safety distances shared by all vehicles."""
  u_min: float
  u_max: float
  v_min: float
  v_max: float
  delta: float
  epsilon: float = 0.0

  def __post_init__(self):
    _require(self.u_min < 0 < self.u_max, 'u_min < 0 < u_max violated')
    _require(0 <= self.v_min < self.v_max, '0 <= v_min < v_max violated')
    _require(self.delta > 0, 'safe distance delta must be > 0')
    _require(self.epsilon >= 0, 'tracking error epsilon must be >= 0')


@dataclasses.dataclass(frozen=True)
class MergingZoneSpec:
  zone_id: int
  # Entry offset of the zone along every path crossing it.
  entry_offsets: Mapping[str, float]
  # Ordered (path, path) pairs that laterally conflict inside the zone.
  conflicting_path_pairs: FrozenSet[Tuple[str, str]]

  def conflicts(self, path_a: str, path_b: str) -> bool:
    return (path_a, path_b) in self.conflicting_path_pairs


@dataclasses.dataclass(frozen=True)
class PathSpec:
  """One approach and entry lane, with the merging zones it crosses."""
  path_id: str
  entry_lane: int
  zones: Tuple[int, ...]
  zone_offsets: Tuple[float, ...]
  path_length: float
  merging_zone_length: float

  def __post_init__(self):
    _require(len(self.zones) > 0, f'path {self.path_id} crosses no zone')
    _require(
        len(self.zones) == len(self.zone_offsets),
        'zones and zone_offsets differ in length')
    _require(
        all(a < b for a, b in zip(self.zone_offsets, self.zone_offsets[1:])),
        f'zone offsets of path {self.path_id} are not increasing')

  @property
  def is_arterial(self) -> bool:
    return self.path_id in ARTERIAL_PATHS

  def zone_index(self, zone: int) -> int:
    try:
      return self.zones.index(zone)
    except ValueError:
      raise ScenarioError(
          f'zone {zone} is not on path {self.path_id}') from None

  def offset(self, zone: int) -> float:
    return self.zone_offsets[self.zone_index(zone)]

  def gap_before(self, index: int) -> float:
    """Distance between the exit of zone `index - 1` and entry of `index`."""
    _require(0 < index < len(self.zones), f'no spacing before zone #{index}')
    return (self.zone_offsets[index] - self.zone_offsets[index - 1] -
            self.merging_zone_length)

  def zone_at(self, position: float) -> int:
    """The zone containing `position`, or 0 outside every zone."""
    for zone, offset in zip(self.zones, self.zone_offsets):
      if offset <= position < offset + self.merging_zone_length:
        return zone
    return 0


@dataclasses.dataclass(frozen=True)
class Corridor:
  """Validated, immutable corridor geometry."""
  approach_length: float
  intersection_spacing: Tuple[float, ...]
  lane_width: float
  merging_zone_length: float
  lane_change_zone_length: float
  merging_zones: Tuple[MergingZoneSpec, ...]
  lanes_per_road: int = 2

  @property
  def n_zones(self) -> int:
    return len(self.merging_zones)

  @property
  def lanes(self) -> Tuple[int, ...]:
    return tuple(range(1, self.lanes_per_road + 1))

  def path_ids(self) -> List[str]:
    ids = list(ARTERIAL_PATHS)
    for k in range(1, self.n_zones + 1):
      ids.extend([f'NB{k}', f'SB{k}'])
    return ids

  def zone(self, zone_id: int) -> MergingZoneSpec:
    _require(1 <= zone_id <= self.n_zones, f'unknown zone {zone_id}')
    return self.merging_zones[zone_id - 1]

  def path(self, path_id: str, lane: int) -> PathSpec:
    _require(path_id in self.path_ids(), f'unknown path {path_id}')
    _require(lane in self.lanes, f'lane {lane} not in {self.lanes}')
    crossed = sorted(
        ((z.entry_offsets[path_id], z.zone_id)
         for z in self.merging_zones
         if path_id in z.entry_offsets))
    offsets = tuple(o for o, _ in crossed)
    return PathSpec(
        path_id=path_id,
        entry_lane=lane,
        zones=tuple(z for _, z in crossed),
        zone_offsets=offsets,
        path_length=offsets[-1] + self.merging_zone_length,
        merging_zone_length=self.merging_zone_length)

  def paths(self) -> List[PathSpec]:
    return [self.path(p, lane) for p in self.path_ids() for lane in self.lanes]

  def conflicts(self, zone_id: int, path_a: str, path_b: str) -> bool:
    return self.zone(zone_id).conflicts(path_a, path_b)

  def fingerprint(self) -> str:
    """Stable hash of the geometry, used to refuse mixing corridors."""
    payload = {
        'approach_length': self.approach_length,
        'intersection_spacing': list(self.intersection_spacing),
        'lane_width': self.lane_width,
        'merging_zone_length': self.merging_zone_length,
        'lane_change_zone_length': self.lane_change_zone_length,
        'lanes_per_road': self.lanes_per_road,
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()[:16]


def _zone_offsets(approach_length: float, spacing: Sequence[float],
                  merging_zone_length: float) -> List[float]:
  offsets = [approach_length]
  for d in spacing:
    offsets.append(offsets[-1] + merging_zone_length + d)
  return offsets


@gin.configurable(module='scenario')
def build_corridor(approach_length: float,
                   spacing: Sequence[float],
                   lane_width: float = 3.75,
                   merging_zone_length: Optional[float] = None,
                   lane_change_zone_length: float = 30.0,
                   lanes_per_road: int = 2) -> Corridor:
  """Builds a validated corridor with derived zone offsets.

  Args:
    approach_length: L, distance from the control-zone entry to the first
      merging zone on every path.
    spacing: D per consecutive pair of intersections, west to east.
    lane_width: w; the merging zone length defaults to 4w.
    merging_zone_length: explicit S override.
    lane_change_zone_length: L_c.
    lanes_per_road: lanes per approach.

  Returns:
    The corridor.

  Raises:
    ScenarioError: naming the violated invariant.
  """
  spacing = tuple(float(d) for d in spacing)
  _require(approach_length > 0, 'approach length L must be > 0')
  _require(lane_width > 0, 'lane width w must be > 0')
  s = 4.0 * lane_width if merging_zone_length is None else float(
      merging_zone_length)
  _require(s > 0, 'merging zone length S must be > 0')
  _require(lane_change_zone_length > 0,
           'lane-changing zone length L_c must be > 0')
  _require(lane_change_zone_length < approach_length,
           'lane-changing zone length L_c must be < L')
  _require(lanes_per_road >= 1, 'lanes per road must be >= 1')
  for d in spacing:
    _require(d > s, f'intersection spacing {d} must exceed S = {s}')

  eastbound = _zone_offsets(approach_length, spacing, s)
  westbound = _zone_offsets(approach_length, tuple(reversed(spacing)), s)
  n_zones = len(spacing) + 1
  zones = []
  for k in range(1, n_zones + 1):
    cross = (f'NB{k}', f'SB{k}')
    offsets: Dict[str, float] = {
        'EB': eastbound[k - 1],
        'WB': westbound[n_zones - k],
    }
    for c in cross:
      offsets[c] = float(approach_length)
    pairs = set()
    for a in ARTERIAL_PATHS:
      for c in cross:
        pairs.add((a, c))
        pairs.add((c, a))
    zones.append(
        MergingZoneSpec(
            zone_id=k,
            entry_offsets=offsets,
            conflicting_path_pairs=frozenset(pairs)))
  return Corridor(
      approach_length=float(approach_length),
      intersection_spacing=spacing,
      lane_width=float(lane_width),
      merging_zone_length=s,
      lane_change_zone_length=float(lane_change_zone_length),
      merging_zones=tuple(zones),
      lanes_per_road=lanes_per_road)


def zone_occupancy_duration(v_avg: float, merging_zone_length: float) -> float:
  """Time to cross a merging zone at the imposed average speed."""
  if v_avg <= 0:
    raise ScenarioError(f'average speed must be > 0, got {v_avg}')
  return merging_zone_length / v_avg


_REQUIRED_KEYS = frozenset([
    'approach_length_m', 'spacing_m', 'lane_width_m', 'u_min', 'u_max',
    'v_min', 'v_max', 'delta_m', 'flows_veh_per_h', 'entry_speed_m_s', 'seed',
    'horizon_s'
])
_OPTIONAL_KEYS = {
    'name': 'scenario',
    'merging_zone_m': None,
    'lane_change_zone_m': 30.0,
    'lanes_per_road': 2,
    'epsilon_m': 0.0,
}


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
  """A parsed scenario file."""
  name: str
  approach_length_m: float
  spacing_m: Tuple[float, ...]
  lane_width_m: float
  merging_zone_m: Optional[float]
  lane_change_zone_m: float
  lanes_per_road: int
  u_min: float
  u_max: float
  v_min: float
  v_max: float
  delta_m: float
  epsilon_m: float
  flows_veh_per_h: Tuple[float, ...]
  entry_speed_m_s: Tuple[float, float]
  seed: int
  horizon_s: float

  def corridor(self) -> Corridor:
    return build_corridor(
        approach_length=self.approach_length_m,
        spacing=self.spacing_m,
        lane_width=self.lane_width_m,
        merging_zone_length=self.merging_zone_m,
        lane_change_zone_length=self.lane_change_zone_m,
        lanes_per_road=self.lanes_per_road)

  def limits(self) -> VehicleLimits:
    return VehicleLimits(
        u_min=self.u_min,
        u_max=self.u_max,
        v_min=self.v_min,
        v_max=self.v_max,
        delta=self.delta_m,
        epsilon=self.epsilon_m)

  @classmethod
  def from_dict(cls, data: Mapping[str, object]) -> 'ScenarioConfig':
    unknown = set(data) - _REQUIRED_KEYS - set(_OPTIONAL_KEYS)
    _require(not unknown, f'unknown scenario keys: {sorted(unknown)}')
    missing = _REQUIRED_KEYS - set(data)
    _require(not missing, f'missing scenario keys: {sorted(missing)}')
    values = dict(_OPTIONAL_KEYS)
    values.update(data)
    speeds = tuple(float(v) for v in values['entry_speed_m_s'])
    _require(len(speeds) == 2 and speeds[0] <= speeds[1],
             'entry_speed_m_s must be [low, high]')
    flows = tuple(float(f) for f in values['flows_veh_per_h'])
    _require(flows and all(f > 0 for f in flows),
             'flows_veh_per_h must be a nonempty list of positive volumes')
    _require(float(values['horizon_s']) > 0, 'horizon_s must be > 0')
    config = cls(
        name=str(values['name']),
        approach_length_m=float(values['approach_length_m']),
        spacing_m=tuple(float(d) for d in values['spacing_m']),
        lane_width_m=float(values['lane_width_m']),
        merging_zone_m=(None if values['merging_zone_m'] is None else float(
            values['merging_zone_m'])),
        lane_change_zone_m=float(values['lane_change_zone_m']),
        lanes_per_road=int(values['lanes_per_road']),
        u_min=float(values['u_min']),
        u_max=float(values['u_max']),
        v_min=float(values['v_min']),
        v_max=float(values['v_max']),
        delta_m=float(values['delta_m']),
        epsilon_m=float(values['epsilon_m']),
        flows_veh_per_h=flows,
        entry_speed_m_s=speeds,
        seed=int(values['seed']),
        horizon_s=float(values['horizon_s']))
    # Surface geometry and limit errors at load time.
    config.corridor()
    limits = config.limits()
    _require(limits.v_min < speeds[0] and speeds[1] < limits.v_max,
             'entry speed range must lie inside (v_min, v_max)')
    return config


def load_scenario(path: str) -> ScenarioConfig:
  """Loads and validates a JSON scenario file."""
  try:
    with open(path, encoding='utf-8') as f:
      data = json.load(f)
  except json.JSONDecodeError as e:
    raise ScenarioError(f'{path} is not valid JSON: {e}') from e
  _require(isinstance(data, dict), f'{path} must hold a JSON object')
  return ScenarioConfig.from_dict(data)
