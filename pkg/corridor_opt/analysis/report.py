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
"""Sweep tables: per-volume means across seeds, optimal against baseline.

A sweep is a set of runs of one scenario, each identified by (mode, volume,
seed). Means are taken per run first and then averaged over seeds; standard
deviations pool every vehicle of a (mode, volume) cell.
"""

import dataclasses
import json
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence

from absl import logging
import numpy as np
import pandas as pd

from corridor_opt.analysis import metrics
from corridor_opt.sim import artifacts

MODES = ('baseline', 'optimal')

TRAVEL_TIME_TABLE = 'travel_time.csv'
DELAY_TABLE = 'delay.csv'
FUEL_TABLE = 'fuel.csv'
LATENCY_TABLE = 'latency.csv'
HISTOGRAM_TABLE = 'travel_time_histogram.csv'
REPORT_FILE = 'report.json'

_VEHICLE_COLUMNS = tuple(
    f.name for f in dataclasses.fields(metrics.VehicleMetrics))
_RUN_COLUMNS = ('mode', 'volume', 'seed')
_TEXT_COLUMNS = ('path_id', 'mode')
_MEAN_COLUMNS = ('travel_time', 'delay', 'avg_fuel_rate', 'fuel')


class ReportError(ValueError):
  """Runs that cannot be aggregated together."""


def _empty_frame(columns: Sequence[str]) -> pd.DataFrame:
  return pd.DataFrame({
      c: pd.Series(dtype=object if c in _TEXT_COLUMNS else float)
      for c in columns
  })


@dataclasses.dataclass(frozen=True)
class RunRecord:
  """One run as the report sees it: its summary and per-vehicle table."""
  summary: Mapping[str, Any]
  vehicles: pd.DataFrame
  envelope_path: Optional[str] = None

  @property
  def mode(self) -> str:
    return self.summary['mode']

  @property
  def volume(self) -> float:
    return float(self.summary['volume'])

  @property
  def seed(self) -> int:
    return int(self.summary['seed'])

  @classmethod
  def from_artifacts(cls, run: artifacts.RunArtifacts) -> 'RunRecord':
    if not run.vehicles:
      return cls(run.summary(), _empty_frame(_VEHICLE_COLUMNS))
    rows = [dataclasses.asdict(m) for m in run.vehicles]
    return cls(run.summary(), pd.DataFrame(rows))

  @classmethod
  def load(cls, run_dir: str) -> 'RunRecord':
    with open(
        os.path.join(run_dir, artifacts.SUMMARY_FILE), encoding='utf-8') as f:
      summary = json.load(f)
    vehicles = pd.read_csv(os.path.join(run_dir, artifacts.METRICS_FILE))
    envelope = os.path.join(run_dir, artifacts.ENVELOPE_FILE)
    return cls(summary, vehicles,
               envelope if os.path.exists(envelope) else None)


def load_runs(output_dir: str) -> List[RunRecord]:
  """Every run directory (one holding a summary) directly under output_dir."""
  records = []
  for name in sorted(os.listdir(output_dir)):
    run_dir = os.path.join(output_dir, name)
    if os.path.isfile(os.path.join(run_dir, artifacts.SUMMARY_FILE)):
      records.append(RunRecord.load(run_dir))
  logging.info('loaded %d runs from %s', len(records), output_dir)
  return records


def _improvement(base: float, experiment: float) -> Optional[int]:
  """Percent improvement, or None when the baseline leaves nothing to gain."""
  if pd.isna(base) or pd.isna(experiment) or base <= 0:
    return None
  return metrics.improvement_percent(base, experiment)


class SweepReport:
  """Aggregates of a sweep, built by `aggregate`."""

  def __init__(self, runs: Sequence[RunRecord]):
    if not runs:
      raise ReportError('no runs to aggregate')
    fingerprints = {r.summary['corridor_fingerprint'] for r in runs}
    if len(fingerprints) > 1:
      raise ReportError(
          f'runs come from different corridors: {sorted(fingerprints)}')
    keys = [(r.mode, r.volume, r.seed) for r in runs]
    if len(set(keys)) != len(keys):
      raise ReportError('duplicate (mode, volume, seed) runs')
    self._runs = list(runs)
    frames = []
    for r in runs:
      if r.vehicles.empty:
        continue
      frame = r.vehicles.copy()
      frame['mode'] = r.mode
      frame['volume'] = r.volume
      frame['seed'] = r.seed
      frames.append(frame)
    if frames:
      self._vehicles = pd.concat(frames, ignore_index=True)
    else:
      self._vehicles = _empty_frame(_VEHICLE_COLUMNS + _RUN_COLUMNS)
    rows = []
    for r in runs:
      row = {
          'mode': r.mode,
          'volume': r.volume,
          'seed': r.seed,
          'vehicles': len(r.vehicles)
      }
      for column in _MEAN_COLUMNS:
        row[column] = (
            float(r.vehicles[column].mean()) if len(r.vehicles) else np.nan)
      rows.append(row)
    self._per_run = pd.DataFrame(rows)

  @property
  def fingerprint(self) -> str:
    return self._runs[0].summary['corridor_fingerprint']

  @property
  def volumes(self) -> List[float]:
    return sorted({r.volume for r in self._runs})

  @property
  def vehicles(self) -> pd.DataFrame:
    return self._vehicles

  def cell_means(self) -> pd.DataFrame:
    """Per (mode, volume): seed-averaged means and pooled stds."""
    means = self._per_run.groupby(['mode', 'volume']).mean(
        numeric_only=True).drop(columns=['seed'])
    stds = self._vehicles.groupby(['mode', 'volume']).agg(
        travel_time_std=('travel_time', 'std'),
        delay_std=('delay', 'std'),
        avg_fuel_rate_std=('avg_fuel_rate', 'std'),
        fuel_std=('fuel', 'std'))
    return means.join(stds).reset_index()

  def _comparison(self, column: str, extra: Sequence[str] = ()):
    cells = self.cell_means().set_index(['mode', 'volume'])
    rows = []
    for volume in self.volumes:
      row: Dict[str, Any] = {'volume': volume}
      for mode in MODES:
        for name in (column,) + tuple(extra):
          key = (mode, volume)
          row[f'{mode}_{name}'] = (
              cells.at[key, name] if key in cells.index else np.nan)
      row['improvement_pct'] = _improvement(row[f'baseline_{column}'],
                                            row[f'optimal_{column}'])
      rows.append(row)
    return pd.DataFrame(rows)

  def travel_time_table(self) -> pd.DataFrame:
    """Average travel time and vehicle count per volume, with delays."""
    return self._comparison('travel_time', ('vehicles', 'delay'))

  def delay_table(self) -> pd.DataFrame:
    return self._comparison('delay', ('delay_std',))

  def fuel_table(self) -> pd.DataFrame:
    """Average fuel rate (ml/s) and cumulative fuel (ml) per vehicle."""
    rate = self._comparison('avg_fuel_rate')
    total = self._comparison('fuel').rename(
        columns={'improvement_pct': 'fuel_improvement_pct'})
    return rate.merge(total, on='volume')

  def latency_table(self) -> pd.DataFrame:
    """Per volume, the optimal run whose mean latency is the largest."""
    rows = []
    for volume in self.volumes:
      runs = [
          r for r in self._runs if r.mode == 'optimal' and
          r.volume == volume and r.summary['latency']['mean'] is not None
      ]
      if not runs:
        continue
      worst = max(runs, key=lambda r: (r.summary['latency']['mean'], -r.seed))
      rows.append({
          'volume': volume,
          'seed': worst.seed,
          'mean_ms': 1e3 * worst.summary['latency']['mean'],
          'std_ms': 1e3 * worst.summary['latency']['std'],
          'max_ms': 1e3 * worst.summary['latency_max'],
      })
    return pd.DataFrame(
        rows, columns=['volume', 'seed', 'mean_ms', 'std_ms', 'max_ms'])

  def travel_time_histogram(self, bin_width: float = 1.0) -> pd.DataFrame:
    """Vehicle counts per travel-time bin, one column per (mode, volume)."""
    if not bin_width > 0:
      raise ReportError(f'bin width must be > 0, got {bin_width}')
    travel = self._vehicles['travel_time']
    if travel.empty:
      return pd.DataFrame(columns=['bin_start'])
    start = np.floor(travel.min() / bin_width) * bin_width
    stop = np.ceil(travel.max() / bin_width) * bin_width + bin_width
    edges = np.arange(start, stop + 0.5 * bin_width, bin_width)
    out = pd.DataFrame({'bin_start': edges[:-1]})
    for (mode, volume), group in self._vehicles.groupby(['mode', 'volume']):
      counts, _ = np.histogram(group['travel_time'], bins=edges)
      out[f'{mode}_{int(volume)}'] = counts
    return out

  def envelope_paths(self) -> Dict[str, str]:
    """Speed-envelope CSV of the lowest seed per (mode, volume)."""
    out = {}
    for r in sorted(self._runs, key=lambda r: (r.mode, r.volume, r.seed)):
      name = f'{r.mode}_{int(r.volume)}'
      if name not in out and r.envelope_path:
        out[name] = r.envelope_path
    return out

  def to_json(self) -> Dict[str, Any]:

    def records(frame):
      return json.loads(frame.to_json(orient='records'))

    return {
        'corridor_fingerprint': self.fingerprint,
        'runs': len(self._runs),
        'travel_time': records(self.travel_time_table()),
        'delay': records(self.delay_table()),
        'fuel': records(self.fuel_table()),
        'latency': records(self.latency_table()),
    }

  def write(self, output_dir: str) -> Dict[str, str]:
    os.makedirs(output_dir, exist_ok=True)
    tables = {
        TRAVEL_TIME_TABLE: self.travel_time_table(),
        DELAY_TABLE: self.delay_table(),
        FUEL_TABLE: self.fuel_table(),
        LATENCY_TABLE: self.latency_table(),
        HISTOGRAM_TABLE: self.travel_time_histogram(),
    }
    paths = {}
    for name, table in tables.items():
      paths[name] = os.path.join(output_dir, name)
      table.to_csv(paths[name], index=False)
    paths[REPORT_FILE] = os.path.join(output_dir, REPORT_FILE)
    with open(paths[REPORT_FILE], 'w', encoding='utf-8') as f:
      json.dump(self.to_json(), f, indent=2, sort_keys=True)
    return paths


def aggregate(runs: Sequence[RunRecord]) -> SweepReport:
  return SweepReport(runs)


def format_comparison(report: SweepReport) -> str:
  """Travel-time comparison laid out for a terminal."""
  table = report.travel_time_table()
  columns = [
      'volume', 'baseline_travel_time', 'baseline_vehicles',
      'optimal_travel_time', 'optimal_vehicles', 'improvement_pct'
  ]
  return table[columns].to_string(
      index=False, float_format=lambda x: f'{x:.2f}', na_rep='n/a')
