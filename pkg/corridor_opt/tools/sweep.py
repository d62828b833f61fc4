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
"""Runs a (mode, volume, seed) sweep of one scenario on a worker pool."""

import dataclasses
import os
import time
from typing import Any, Dict, List, Optional, Sequence, Tuple

from absl import logging
import gin

from corridor_opt import constant
from corridor_opt.distributed import buffered_scheduler
from corridor_opt.distributed import worker
from corridor_opt.planning import scenario
from corridor_opt.sim import artifacts
from corridor_opt.sim import baseline
from corridor_opt.sim import simulator
from corridor_opt.sim import traffic_flow

VIOLATIONS_FILE = 'violations.json'


@dataclasses.dataclass(frozen=True)
class SweepOptions:
  """Command-line overrides applied on top of the scenario and gin config."""
  use_idle_time: Optional[bool] = None
  epsilon: Optional[float] = None
  playback_step: Optional[float] = None
  export_trajectories: Optional[bool] = None


@dataclasses.dataclass(frozen=True)
class SweepCell:
  mode: str
  volume: float
  seed: int

  def __post_init__(self):
    constant.RunMode(self.mode)


class SweepFailedError(Exception):
  """Some cells raised; `failures` pairs each such cell with its error."""

  def __init__(self, failures: List[Tuple[SweepCell, Exception]]):
    self.failures = failures
    cell, error = failures[0]
    super().__init__(
        f'{len(failures)} sweep cells failed; first {cell.mode} '
        f'volume={cell.volume:g} seed={cell.seed}: {error}')

  def __reduce__(self):
    return type(self), (self.failures,)


def make_cells(modes: Sequence[str], volumes: Sequence[float],
               seeds: Sequence[int]) -> List[SweepCell]:
  return [
      SweepCell(mode, float(volume), int(seed))
      for mode in modes
      for volume in volumes
      for seed in seeds
  ]


class SweepWorker(worker.Worker):
  """Simulates sweep cells and writes their artifacts.

  Hosted in a spawned process, so the parent's gin state arrives as the
  `gin_config` string and is parsed before anything reads a configurable.
  """

  def __init__(self,
               scenario_path: str,
               output_dir: str,
               options: SweepOptions = SweepOptions(),
               gin_config: str = ''):
    if gin_config:
      # Bindings for modules this process never imports are skipped.
      gin.parse_config(gin_config, skip_unknown=True)
    self._scenario = scenario.load_scenario(scenario_path)
    self._output_dir = output_dir
    self._corridor = self._scenario.corridor()
    limits = self._scenario.limits()
    if options.epsilon is not None:
      limits = dataclasses.replace(limits, epsilon=options.epsilon)
    self._limits = limits
    overrides = {
        'use_idle_time': options.use_idle_time,
        'playback_step': options.playback_step,
        'export_trajectories': options.export_trajectories,
    }
    self._config = dataclasses.replace(
        simulator.make_sim_config(),
        **{k: v for k, v in overrides.items() if v is not None})

  def run_cell(self, cell: SweepCell) -> Dict[str, Any]:
    """Simulates one cell; returns its summary plus the run directory."""
    flow = traffic_flow.FlowSpec(
        volume=cell.volume,
        entry_speed_range=self._scenario.entry_speed_m_s,
        seed=cell.seed,
        horizon=self._scenario.horizon_s)
    run_dir = os.path.join(
        self._output_dir, artifacts.run_dir_name(cell.mode, cell.volume,
                                                 cell.seed))
    os.makedirs(run_dir, exist_ok=True)
    dump_path = os.path.join(run_dir, VIOLATIONS_FILE)
    if constant.RunMode(cell.mode) == constant.RunMode.OPTIMAL:
      run = simulator.run_optimal(
          self._corridor,
          self._limits,
          flow,
          config=self._config,
          scenario_name=self._scenario.name,
          dump_path=dump_path)
    else:
      run = baseline.run_baseline(
          self._corridor,
          self._limits,
          flow,
          config=self._config,
          scenario_name=self._scenario.name,
          dump_path=dump_path)
    artifacts.write_run(run_dir, run)
    return dict(run.summary(), run_dir=run_dir)


@gin.configurable(module='sweep')
def run_sweep(pool: worker.WorkerPool,
              cells: Sequence[SweepCell],
              buffer: Optional[int] = None) -> List[Dict[str, Any]]:
  """Dispatches `cells` over `pool`.

  Args:
    pool: hosts of `SweepWorker`s.
    cells: the sweep.
    buffer: cells kept in flight per worker; defaults to the pool's
      concurrency.

  Returns:
    The summaries, in the order of `cells`.

  Raises:
    SweepFailedError: after every cell finished, if any of them raised.
  """
  start = time.time()
  workers = pool.get_currently_active()
  work = [lambda w, c=c: w.run_cell(c) for c in cells]
  futures = buffered_scheduler.schedule(
      work, workers, buffer or pool.get_worker_concurrency())
  errors = worker.wait_for(futures)
  failures = [(c, e) for c, e in zip(cells, errors) if e is not None]
  for cell, error in failures:
    logging.error('%s volume=%g seed=%d failed: %r', cell.mode, cell.volume,
                  cell.seed, error)
  logging.info('sweep of %d cells on %d workers took %.1f s', len(cells),
               len(workers), time.time() - start)
  if failures:
    raise SweepFailedError(failures)
  return [f.result() for f in futures]
