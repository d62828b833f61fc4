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
"""Outputs of one simulation run and their on-disk formats."""

import csv
import dataclasses
import json
import os
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from corridor_opt import constant
from corridor_opt.analysis import metrics

EVENT_KINDS = ('arrival', 'deferred', 'register', 'lane_change', 'commit',
               'replan', 'exit')

METRICS_FILE = 'metrics.csv'
EVENTS_FILE = 'events.jsonl'
ENVELOPE_FILE = 'speed_envelope.csv'
TRAJECTORIES_FILE = 'trajectories.csv'
SUMMARY_FILE = 'summary.json'

TRAJECTORY_HEADER = ('vehicle_id', 't', 'p', 'v', 'u', 'lane', 'zone_flag')


@dataclasses.dataclass(frozen=True)
class Event:
  t: float
  event: str
  vehicle_id: int
  detail: Mapping[str, Any] = dataclasses.field(default_factory=dict)

  def __post_init__(self):
    if self.event not in EVENT_KINDS:
      raise ValueError(f'unknown event kind {self.event}')


@dataclasses.dataclass
class RunArtifacts:
  """Everything a run produces; written by `write_run`."""
  mode: str
  scenario: str
  volume: float
  seed: int
  corridor_fingerprint: str
  vehicles: List[metrics.VehicleMetrics] = dataclasses.field(
      default_factory=list)
  # vehicle id -> plan + solve wall time in seconds
  latencies: Dict[int, float] = dataclasses.field(default_factory=dict)
  events: List[Event] = dataclasses.field(default_factory=list)
  # columns: t, count, v_min, v_mean, v_max
  envelope: Optional[np.ndarray] = None
  # rows matching TRAJECTORY_HEADER
  trajectories: Optional[List[tuple]] = None
  counters: Dict[str, int] = dataclasses.field(default_factory=dict)
  wall_time: float = 0.0

  def log_event(self, t: float, event: str, vehicle_id: int, **detail):
    self.events.append(Event(float(t), event, int(vehicle_id), detail))

  def bump(self, counter: str, by: int = 1):
    self.counters[counter] = self.counters.get(counter, 0) + by

  def summary(self) -> Dict[str, Any]:
    travel = np.array([m.travel_time for m in self.vehicles])
    delay = np.array([m.delay for m in self.vehicles])
    rate = np.array([m.avg_fuel_rate for m in self.vehicles])
    fuel = np.array([m.fuel for m in self.vehicles])
    latency = np.array(list(self.latencies.values()))

    def stats(x):
      if x.size == 0:
        return {'mean': None, 'std': None}
      return {'mean': float(np.mean(x)), 'std': float(np.std(x))}

    return {
        'mode': self.mode,
        'scenario': self.scenario,
        'volume': self.volume,
        'seed': self.seed,
        'corridor_fingerprint': self.corridor_fingerprint,
        'vehicles': len(self.vehicles),
        'travel_time': stats(travel),
        'delay': stats(delay),
        'fuel_rate': stats(rate),
        'fuel': stats(fuel),
        'latency': stats(latency),
        'latency_max': float(latency.max()) if latency.size else None,
        'counters': dict(sorted(self.counters.items())),
        'wall_time': self.wall_time,
    }


def write_metrics_csv(path: str, vehicles: List[metrics.VehicleMetrics]):
  names = [f.name for f in dataclasses.fields(metrics.VehicleMetrics)]
  with open(path, 'w', newline='', encoding='utf-8') as f:
    writer = csv.writer(f)
    writer.writerow(names)
    for m in sorted(vehicles, key=lambda m: m.vehicle_id):
      writer.writerow([getattr(m, n) for n in names])


def write_events(path: str, events: List[Event]):
  with open(path, 'w', encoding='utf-8') as f:
    for e in events:
      f.write(
          json.dumps(
              dataclasses.asdict(e),
              sort_keys=True,
              cls=constant.DataClassJSONEncoder) + '\n')


def read_events(path: str) -> List[Event]:
  with open(path, encoding='utf-8') as f:
    return [Event(**json.loads(line)) for line in f if line.strip()]


def write_envelope_csv(path: str, envelope: Optional[np.ndarray]):
  with open(path, 'w', newline='', encoding='utf-8') as f:
    writer = csv.writer(f)
    writer.writerow(['t', 'count', 'v_min', 'v_mean', 'v_max'])
    if envelope is not None:
      for t, count, lo, mean, hi in envelope:
        writer.writerow([f'{t:.3f}', int(count), lo, mean, hi])


def write_trajectories_csv(path: str, rows: List[tuple]):
  with open(path, 'w', newline='', encoding='utf-8') as f:
    writer = csv.writer(f)
    writer.writerow(TRAJECTORY_HEADER)
    writer.writerows(rows)


def write_run(output_dir: str, run: RunArtifacts) -> Dict[str, str]:
  """Writes every artifact of `run` under `output_dir`; returns the paths."""
  os.makedirs(output_dir, exist_ok=True)
  paths = {
      'metrics': os.path.join(output_dir, METRICS_FILE),
      'events': os.path.join(output_dir, EVENTS_FILE),
      'envelope': os.path.join(output_dir, ENVELOPE_FILE),
      'summary': os.path.join(output_dir, SUMMARY_FILE),
  }
  write_metrics_csv(paths['metrics'], run.vehicles)
  write_events(paths['events'], run.events)
  write_envelope_csv(paths['envelope'], run.envelope)
  if run.trajectories is not None:
    paths['trajectories'] = os.path.join(output_dir, TRAJECTORIES_FILE)
    write_trajectories_csv(paths['trajectories'], run.trajectories)
  with open(paths['summary'], 'w', encoding='utf-8') as f:
    json.dump(run.summary(), f, indent=2, sort_keys=True)
  return paths


def run_dir_name(mode: str, volume: float, seed: int) -> str:
  return f'{mode}_v{int(volume)}_s{seed}'
