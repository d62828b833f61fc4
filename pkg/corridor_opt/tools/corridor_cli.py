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
r"""Command line for corridor sweeps, solver verification and report export.

Usage:

  python3 -m corridor_opt.tools.corridor_cli run \
    --scenario=scenario1 --mode=both --seeds=1..5 \
    --output_dir=/tmp/corridor_opt \
    --gin_files=corridor_opt/gin_configs/default.gin

  python3 -m corridor_opt.tools.corridor_cli verify --perturbation=0.01

  python3 -m corridor_opt.tools.corridor_cli export \
    --output_dir=/tmp/corridor_opt

Failures are reported as one JSON line on stderr; configuration errors exit
with status 2, run failures with status 1.
"""

import dataclasses
import hashlib
import json
import os
import sys
from typing import List, Optional, Sequence, Tuple

from absl import app
from absl import flags
from absl import logging
import gin

from corridor_opt import constant
from corridor_opt.analysis import report
from corridor_opt.distributed import worker
from corridor_opt.distributed.local import local_worker_manager
from corridor_opt.planning import scenario
from corridor_opt.planning import verification
from corridor_opt.tools import sweep

COMMANDS = ('run', 'verify', 'export')
MANIFEST_FILE = 'manifest.json'
VERIFY_FILE = 'verify.json'

EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2

_MODES = ('optimal', 'baseline', 'both')

flags.DEFINE_string(
    'scenario', 'scenario1',
    'Scenario JSON file, or the name of a bundled scenario.')
flags.DEFINE_enum('mode', 'both', _MODES, 'Which controller(s) to run.')
flags.DEFINE_list(
    'volumes', None,
    'Volumes in veh/h per lane per entry. Defaults to the scenario flows.')
flags.DEFINE_string('seeds', '1..5',
                    'Seeds as an inclusive range "a..b" or a comma list.')
flags.DEFINE_string(
    'output_dir', os.getenv(constant.OUTPUT_DIR_ENV,
                            constant.DEFAULT_OUTPUT_DIR),
    'Directory for run artifacts and report tables.')
flags.DEFINE_integer(
    'workers', None,
    'Worker processes; `None` for one per CPU, 0 to run in this process.')
flags.DEFINE_bool('idle_time', None,
                  'Overrides the idle-time toggle of the lane chooser.')
flags.DEFINE_float('epsilon', None,
                   'Overrides the tracking error margin of the scenario.')
flags.DEFINE_float('playback_step', None, 'Overrides the playback step (s).')
flags.DEFINE_bool('export_trajectories', None,
                  'Overrides whether trajectories CSVs are written.')
flags.DEFINE_float(
    'perturbation', 0.0,
    'verify: relative corruption applied to every solved trajectory.')
flags.DEFINE_list('checks', None,
                  'verify: subset of checks to run. Defaults to all.')
flags.DEFINE_multi_string('gin_files', [],
                          'List of paths to gin configuration files.')
flags.DEFINE_multi_string(
    'gin_bindings', [],
    'Gin bindings to override the values set in the config files.')

FLAGS = flags.FLAGS


class ConfigError(ValueError):
  pass


def parse_seeds(text: str) -> List[int]:
  """'1..5' -> [1, 2, 3, 4, 5]; '3,1' -> [3, 1]."""
  try:
    if '..' in text:
      first, last = (int(part) for part in text.split('..'))
      seeds = list(range(first, last + 1))
    else:
      seeds = [int(part) for part in text.split(',') if part.strip()]
  except ValueError as e:
    raise ConfigError(f'bad seeds {text!r}') from e
  if not seeds:
    raise ConfigError(f'no seeds in {text!r}')
  if len(set(seeds)) != len(seeds):
    raise ConfigError(f'repeated seeds in {text!r}')
  return seeds


def resolve_scenario(name_or_path: str) -> str:
  if os.path.isfile(name_or_path):
    return name_or_path
  bundled = os.path.join(constant.SCENARIO_DIR, f'{name_or_path}.json')
  if os.path.isfile(bundled):
    return bundled
  raise ConfigError(f'no scenario file {name_or_path}')


@dataclasses.dataclass(frozen=True)
class RunConfig:
  scenario_path: str
  modes: Tuple[str, ...]
  volumes: Tuple[float, ...]
  seeds: Tuple[int, ...]
  output_dir: str
  options: sweep.SweepOptions = sweep.SweepOptions()
  workers: Optional[int] = None

  def __post_init__(self):
    if not self.volumes or any(not v > 0 for v in self.volumes):
      raise ConfigError(f'volumes must be positive: {self.volumes}')
    if self.workers is not None and self.workers < 0:
      raise ConfigError(f'workers must be >= 0, got {self.workers}')

  @classmethod
  def from_flags(cls) -> 'RunConfig':
    scenario_path = resolve_scenario(FLAGS.scenario)
    loaded = scenario.load_scenario(scenario_path)
    if FLAGS.volumes is None:
      volumes = loaded.flows_veh_per_h
    else:
      try:
        volumes = tuple(float(v) for v in FLAGS.volumes)
      except ValueError as e:
        raise ConfigError(f'bad volumes {FLAGS.volumes}') from e
    modes = (('baseline', 'optimal') if FLAGS.mode == 'both' else
             (FLAGS.mode,))
    return cls(
        scenario_path=scenario_path,
        modes=modes,
        volumes=volumes,
        seeds=tuple(parse_seeds(FLAGS.seeds)),
        output_dir=FLAGS.output_dir,
        options=sweep.SweepOptions(
            use_idle_time=FLAGS.idle_time,
            epsilon=FLAGS.epsilon,
            playback_step=FLAGS.playback_step,
            export_trajectories=FLAGS.export_trajectories),
        workers=FLAGS.workers)


def config_hash(config: RunConfig, gin_config: str) -> str:
  payload = json.dumps({'run': dataclasses.asdict(config), 'gin': gin_config},
                       sort_keys=True)
  return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def _worker_pool(config: RunConfig, gin_config: str):
  kwargs = dict(
      scenario_path=config.scenario_path,
      output_dir=config.output_dir,
      options=config.options)
  if config.workers == 0:
    return worker.InlineWorkerPool(sweep.SweepWorker, **kwargs)
  return local_worker_manager.LocalWorkerPoolManager(
      sweep.SweepWorker, config.workers, gin_config=gin_config, **kwargs)


def run(config: RunConfig, gin_config: str = '') -> report.SweepReport:
  """Runs the sweep, writes tables and the manifest, returns the report."""
  os.makedirs(config.output_dir, exist_ok=True)
  cells = sweep.make_cells(config.modes, config.volumes, config.seeds)
  with _worker_pool(config, gin_config) as pool:
    summaries = sweep.run_sweep(pool, cells)
  records = [report.RunRecord.load(s['run_dir']) for s in summaries]
  sweep_report = report.aggregate(records)
  sweep_report.write(config.output_dir)
  manifest = {
      'version': constant.VERSION,
      'scenario': config.scenario_path,
      'corridor_fingerprint': sweep_report.fingerprint,
      'modes': list(config.modes),
      'volumes': list(config.volumes),
      'seeds': list(config.seeds),
      'runs': [os.path.basename(s['run_dir']) for s in summaries],
      'config_hash': config_hash(config, gin_config),
      'gin_config': gin_config,
  }
  with open(
      os.path.join(config.output_dir, MANIFEST_FILE), 'w',
      encoding='utf-8') as f:
    json.dump(manifest, f, indent=2, sort_keys=True)
  return sweep_report


def verify(perturbation: float,
           names: Optional[Sequence[str]] = None,
           output_dir: Optional[str] = None
          ) -> List[verification.CheckResult]:
  results = verification.run_checks(perturbation, names)
  for r in results:
    logging.info('%s: %d/%d failed, worst %.3g (tolerance %.3g)', r.name,
                 r.failures, r.instances, r.worst, r.tolerance)
  if output_dir:
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, VERIFY_FILE), 'w',
              encoding='utf-8') as f:
      json.dump({'perturbation': perturbation, 'checks': results},
                f,
                indent=2,
                cls=constant.DataClassJSONEncoder)
  return results


def export(output_dir: str) -> report.SweepReport:
  if not os.path.isdir(output_dir):
    raise ConfigError(f'no output directory {output_dir}')
  sweep_report = report.aggregate(report.load_runs(output_dir))
  sweep_report.write(output_dir)
  return sweep_report


def error_record(error: BaseException) -> str:
  kind = type(error).__name__
  if isinstance(error, sweep.SweepFailedError):
    kind = type(error.failures[0][1]).__name__
  return json.dumps({'error': kind, 'message': str(error)})


def _fail(error: BaseException, status: int) -> int:
  logging.error('%s', error)
  print(error_record(error), file=sys.stderr)
  return status


def _format_checks(results: Sequence[verification.CheckResult]) -> str:
  lines = []
  for r in results:
    status = 'PASS' if r.passed else 'FAIL'
    lines.append(f'{status} {r.name}: {r.failures}/{r.instances} failed, '
                 f'worst {r.worst:.3g} (tolerance {r.tolerance:.3g})')
  return '\n'.join(lines)


def main(argv: Sequence[str]) -> int:
  if len(argv) != 2 or argv[1] not in COMMANDS:
    return _fail(
        ConfigError(f'expected one command out of {COMMANDS}, got {argv[1:]}'),
        EXIT_CONFIG_ERROR)
  command = argv[1]
  # Bundled configs include each other by package-relative paths.
  gin.add_config_file_search_path(os.path.dirname(constant.PACKAGE_DIR))
  try:
    gin.parse_config_files_and_bindings(
        FLAGS.gin_files, bindings=FLAGS.gin_bindings, skip_unknown=False)
    gin_config = gin.config_str()
    logging.info(gin_config)
    config = RunConfig.from_flags() if command == 'run' else None
  except (ValueError, OSError) as e:
    return _fail(e, EXIT_CONFIG_ERROR)

  if command == 'run':
    try:
      sweep_report = run(config, gin_config)
    except report.ReportError as e:
      return _fail(e, EXIT_CONFIG_ERROR)
    except Exception as e:  # pylint: disable=broad-except
      return _fail(e, EXIT_FAILURE)
    print(report.format_comparison(sweep_report))
    return 0

  if command == 'verify':
    try:
      results = verify(FLAGS.perturbation, FLAGS.checks, FLAGS.output_dir)
    except ValueError as e:
      return _fail(e, EXIT_CONFIG_ERROR)
    print(_format_checks(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
      print(
          json.dumps({
              'error': 'VerificationFailed',
              'message': f'failed checks: {failed}'
          }),
          file=sys.stderr)
      return EXIT_FAILURE
    return 0

  try:
    sweep_report = export(FLAGS.output_dir)
  except (ValueError, OSError) as e:
    return _fail(e, EXIT_CONFIG_ERROR)
  print(report.format_comparison(sweep_report))
  return 0


if __name__ == '__main__':
  app.run(main)
