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
"""Seeded arrival streams at the control-zone entries."""

import dataclasses
import heapq
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from corridor_opt.planning import coordinator
from corridor_opt.planning import scenario

# Child-seed tag of the stream used for simultaneous-entry tie breaks.
_TIE_BREAK_STREAM = 1 << 16


@dataclasses.dataclass(frozen=True)
class FlowSpec:
  """Demand of one run: veh/h per lane per entry, speeds, seed, horizon."""
  volume: float
  entry_speed_range: Tuple[float, float]
  seed: int
  horizon: float

  def __post_init__(self):
    if not self.volume > 0:
      raise ValueError(f'volume must be > 0, got {self.volume}')
    low, high = self.entry_speed_range
    if not 0 < low <= high:
      raise ValueError(f'bad entry speed range {self.entry_speed_range}')
    if not self.horizon > 0:
      raise ValueError(f'horizon must be > 0, got {self.horizon}')


@dataclasses.dataclass(frozen=True)
class Arrival:
  t0: float
  path_id: str
  lane: int
  v0: float
  tie_break: float
  path_length: float

  @property
  def order_key(self):
    return coordinator.entry_order_key(self.t0, self.path_length,
                                       self.tie_break)


def generate_arrivals(flow: FlowSpec,
                      corridor: scenario.Corridor,
                      limits: scenario.VehicleLimits,
                      gap: Optional[float] = None) -> List[Arrival]:
  """Poisson arrivals for every (approach, lane) of the corridor.

  Each stream draws from its own generator seeded with (seed, approach index,
  lane), so adding a stream never perturbs another one. Within a stream an
  arrival is deferred until its predecessor, cruising at its entry speed, is
  `gap` (default: delta) downstream of the entry.

  Args:
    flow: demand specification.
    corridor: corridor geometry.
    limits: vehicle limits; the entry speed range must lie inside
      (v_min, v_max).
    gap: boundary spacing enforced within a stream.

  Returns:
    Arrivals sorted by `coordinator.entry_order_key`.
  """
  low, high = flow.entry_speed_range
  if not limits.v_min < low <= high < limits.v_max:
    raise ValueError(
        f'entry speeds {flow.entry_speed_range} outside '
        f'({limits.v_min}, {limits.v_max})')
  gap = limits.delta if gap is None else gap
  mean_headway = 3600.0 / flow.volume
  raw = []
  for entry_index, path_id in enumerate(corridor.path_ids()):
    for lane in corridor.lanes:
      rng = np.random.default_rng([flow.seed, entry_index, lane])
      path_length = corridor.path(path_id, lane).path_length
      t = 0.0
      previous = None
      while True:
        t += rng.exponential(mean_headway)
        if t >= flow.horizon:
          break
        v0 = float(rng.uniform(low, high))
        t0 = float(t)
        if previous is not None:
          t0 = max(t0, previous[0] + gap / previous[1])
        previous = (t0, v0)
        raw.append((t0, path_id, lane, v0, path_length))
  raw.sort(key=lambda a: (a[0], a[1], a[2]))
  tie_rng = np.random.default_rng([flow.seed, _TIE_BREAK_STREAM])
  draws = tie_rng.random(len(raw))
  arrivals = [
      Arrival(t0, path_id, lane, v0, float(draw), path_length)
      for (t0, path_id, lane, v0, path_length), draw in zip(raw, draws)
  ]
  arrivals.sort(key=lambda a: a.order_key)
  return arrivals


def entry_step(t0: float, step: float) -> int:
  """First playback step at or after `t0`."""
  return math.ceil(t0 / step - 1e-9)


class EntryQueue:
  """Arrivals waiting at the entries, released by step then arrival order.

  An arrival that cannot enter yet is pushed back one step with its entry time
  moved to that step. Arrivals keep their original rank, so within one stream
  a deferred vehicle is always reconsidered before the ones behind it.
  """

  def __init__(self, arrivals: Sequence[Arrival], step: float):
    self._step = step
    self._heap = [(entry_step(a.t0, step), rank, a)
                  for rank, a in enumerate(arrivals)]
    heapq.heapify(self._heap)
    self.deferred_ranks = set()

  def __len__(self) -> int:
    return len(self._heap)

  def next_step(self) -> Optional[int]:
    return self._heap[0][0] if self._heap else None

  def pop_due(self, k: int) -> List[Tuple[int, Arrival]]:
    due = []
    while self._heap and self._heap[0][0] <= k:
      _, rank, arrival = heapq.heappop(self._heap)
      due.append((rank, arrival))
    return due

  def defer(self, k: int, rank: int, arrival: Arrival, steps: int = 1) -> bool:
    """Re-queues `steps` steps later; returns True on the first deferral."""
    if steps < 1:
      raise ValueError(f'deferral must be >= 1 step, got {steps}')
    first = rank not in self.deferred_ranks
    self.deferred_ranks.add(rank)
    moved = dataclasses.replace(arrival, t0=(k + steps) * self._step)
    heapq.heappush(self._heap, (k + steps, rank, moved))
    return first
