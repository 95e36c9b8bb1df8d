# coding=utf-8
# Copyright 2019 The Hirescast Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Run configuration shared by every pipeline stage."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import os

import gin

from hirescast import grids
from hirescast import rollout
from hirescast.layers import lora as lora_lib
from hirescast.models import meta_model
from hirescast.models import res as res_lib

VARIABLE_SETS = {
    'toy': grids.VariableSet.toy,
    'canonical': grids.VariableSet.canonical,
}


class ConfigError(ValueError):
  """A run configuration is invalid.

  Attributes:
    problems: every violation found, one string each.
  """

  def __init__(self, problems):
    self.problems = list(problems)
    super(ConfigError, self).__init__(
        'invalid configuration:\n  ' + '\n  '.join(self.problems))


class RunConfig(collections.namedtuple('RunConfig', [
    'work_dir',        # Root of every stage's artifacts.
    'seed',            # Base seed; stages derive their own from it.
    'factor',          # SIME factor k.
    'variables',       # Name in VARIABLE_SETS.
    'model',           # ModelConfig of the meta model.
    'res',             # ResConfig.
    'lora',            # rollout.LoraConfig.
    'eval_start',      # First forecast init time, or None for the eval split.
    'eval_end',        # Last forecast init time, or None.
    'forecast_steps',  # Rollout length T of every forecast.
    'stations_file',   # Observations CSV; None uses the synthetic stations.
])):
  """Everything a stage needs to locate, build and check its inputs."""

  @property
  def hr_grid(self):
    return grids.GridSpec.global_grid(self.model.grid[0] * self.factor,
                                      self.model.grid[1] * self.factor)

  @property
  def lr_grid(self):
    return self.hr_grid.coarsen(self.factor)

  @property
  def variable_set(self):
    return VARIABLE_SETS[self.variables]()

  def stage_dir(self, stage):
    return os.path.join(self.work_dir, stage)

  def validate(self):
    """Returns a list of every violation (empty if valid)."""
    problems = []
    if self.factor < 1 or self.factor % 2 == 0:
      problems.append('SIME factor must be a positive odd integer, got %r' %
                      (self.factor,))
    problems.extend(self.model.validate())
    if self.variables not in VARIABLE_SETS:
      problems.append('unknown variable set %r, expected one of %s' % (
          self.variables, sorted(VARIABLE_SETS)))
    elif len(self.variable_set) != self.model.n_channels:
      problems.append('variable set %s has %d channels, the model %d' % (
          self.variables, len(self.variable_set), self.model.n_channels))
    if self.factor >= 1:
      hr_token_grid = tuple(g * self.factor for g in self.model.token_grid)
      problems.extend(res_lib.validate_res_config(
          self.res, self.model.n_blocks, hr_token_grid))
    if self.res.n_heads < 1 or self.model.d_model % self.res.n_heads:
      problems.append('d_model %d is not divisible by %d RES heads' %
                      (self.model.d_model, self.res.n_heads))
    try:
      lora_lib.check_rank(self.lora.rank, self.model.d_model,
                          self.model.d_model)
    except ValueError as e:
      problems.append(str(e))
    if self.lora.t_max < 1:
      problems.append('LoRA t_max must be positive, got %d' %
                      self.lora.t_max)
    if self.forecast_steps < 1:
      problems.append('forecast_steps must be positive, got %d' %
                      self.forecast_steps)
    times = []
    for name in ('eval_start', 'eval_end'):
      value = getattr(self, name)
      if value is None:
        continue
      try:
        times.append(grids.check_time(value))
      except ValueError as e:
        problems.append('%s: %s' % (name, e))
    if len(times) == 2 and times[1] < times[0]:
      problems.append('eval_end %s precedes eval_start %s' %
                      (self.eval_end, self.eval_start))
    parent = os.path.dirname(os.path.abspath(self.work_dir))
    if not os.path.isdir(parent):
      problems.append('parent of work_dir %s does not exist' % self.work_dir)
    if self.stations_file is not None and not os.path.isfile(
        self.stations_file):
      problems.append('stations_file %s does not exist' % self.stations_file)
    return problems

  def check(self):
    problems = self.validate()
    if problems:
      raise ConfigError(problems)
    return self


@gin.configurable
def run_config(work_dir='hirescast_run',
               seed=0,
               factor=3,
               variables='toy',
               eval_start=None,
               eval_end=None,
               forecast_steps=40,
               stations_file=None):
  """Builds the RunConfig of the gin-configured model, RES and LoRA."""
  return RunConfig(os.path.expanduser(work_dir), seed, factor, variables,
                   meta_model.model_config(), res_lib.res_config(),
                   rollout.lora_config(), eval_start, eval_end,
                   forecast_steps, stations_file)
