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
"""Constants shared across the corridor coordination package."""

import dataclasses
import enum
import json
import os

import gin
import numpy as np

VERSION = '0.1.0'

BASE_DIR = 'corridor_opt'
BASE_MODULE_DIR = 'corridor_opt'

# Bundled data locations, resolved relative to the installed package.
PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))
SCENARIO_DIR = os.path.join(PACKAGE_DIR, 'scenarios')
GIN_CONFIG_DIR = os.path.join(PACKAGE_DIR, 'gin_configs')
FUEL_MODEL_PATH = os.path.join(PACKAGE_DIR, 'analysis', 'data',
                               'fuel_model.json')

# Environment variable naming the default output directory of the cli.
OUTPUT_DIR_ENV = 'CORRIDOR_OPT_OUTPUT_DIR'
DEFAULT_OUTPUT_DIR = '/tmp/corridor_opt'

# Tolerance used when comparing positions/times produced by the closed-form
# trajectories against scheduled values.
MONITOR_TOLERANCE = 1e-6


@gin.constants_from_enum
class RunMode(enum.Enum):
  """Which controller drives a simulation run."""
  OPTIMAL = 'optimal'
  BASELINE = 'baseline'


class DataClassJSONEncoder(json.JSONEncoder):

  def default(self, o):
    if dataclasses.is_dataclass(o):
      return dataclasses.asdict(o)
    if isinstance(o, enum.Enum):
      return o.value
    if isinstance(o, np.generic):
      return o.item()
    if isinstance(o, np.ndarray):
      return o.tolist()
    if isinstance(o, (set, frozenset)):
      return sorted(o)
    return super().default(o)
