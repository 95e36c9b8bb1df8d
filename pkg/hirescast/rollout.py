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

"""Autoregressive forecasts and per-step LoRA fine-tuning."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import os

from absl import logging
import gin
import numpy as onp

from hirescast import backend
from hirescast import grids
from hirescast import history as hirescast_history
from hirescast import inputs as inputs_lib
from hirescast import learning_rate as lr
from hirescast import optimizers as hirescast_opt
from hirescast import sime
from hirescast import state_io
from hirescast import trainer_lib
from hirescast.layers import base
from hirescast.layers import lora as lora_lib
from hirescast.layers import metrics
from hirescast.models import meta_model
from hirescast.models import res as res_lib


LoraConfig = collections.namedtuple('LoraConfig', [
    'rank',     # r.
    'alpha',    # Scale numerator; None means alpha = r.
    't_max',    # Number of per-step adapters.
    'targets',  # Suffixes of the adapted kernel paths.
    'stddev',   # Initial standard deviation of A.
])


@gin.configurable
def lora_config(rank=4, alpha=None, t_max=8, targets=('query/w', 'value/w'),
                stddev=0.02):
  return LoraConfig(rank, alpha, t_max, tuple(targets), stddev)


def new_lora_set(meta_params, config):
  return lora_lib.LoraSet.for_params(meta_params, suffixes=config.targets,
                                     rank=config.rank, alpha=config.alpha,
                                     t_max=config.t_max)


class RolloutPlan(collections.namedtuple(
    'RolloutPlan', ['initial_state', 'n_steps', 'cadence'])):
  """A forecast of n_steps 6-hour steps from one WeatherState.

  Attributes:
    initial_state: WeatherState in physical units.
    n_steps: T >= 1; step t has a lead time of 6t hours.
    cadence: every cadence-th step is emitted (the last step always is).
  """

  def __new__(cls, initial_state, n_steps, cadence=1):
    if n_steps < 1:
      raise ValueError('a rollout needs at least one step, got %d' % n_steps)
    if cadence < 1:
      raise ValueError('output cadence must be positive, got %d' % cadence)
    return super(RolloutPlan, cls).__new__(cls, initial_state, n_steps,
                                           cadence)

  def emits(self, step):
    return step % self.cadence == 0 or step == self.n_steps


ForecastStep = collections.namedtuple('ForecastStep', [
    'step',        # t.
    'lead_hours',  # 6t.
    'state',       # WeatherState valid at init + 6t hours.
])


def lead_hours(step):
  return int(step * grids.STEP.total_seconds() // 3600)


class Forecaster(object):
  """Meta model with optional SIME, RES modules and per-step adapters."""

  def __init__(self, model, meta_params, factor=1, res=None, res_params=None,
               lora=None, max_batch=None, interpolate=False):
    """Creates a forecaster.

    Args:
      model: MetaModel.
      meta_params: meta-model parameters.
      factor: SIME factor k; inputs live on the model grid times k.
      res: optional ResStack.
      res_params: parameters of `res`.
      lora: optional LoraSet whose adapters are merged per step.
      max_batch: largest SIME batch per model call.
      interpolate: forecast the centre sub-field only and repeat it over each
        k x k block instead of running SIME; `res` is ignored.
    """
    sime.check_factor(factor, (1, 1) + tuple(
        g * factor for g in model.config.grid))
    self.model = model
    self.meta_params = meta_params
    self.factor = factor
    self.res = res
    self.res_params = res_params
    self.lora = lora
    self.interpolate = interpolate
    self._max_batch = max_batch

  @property
  def grid_shape(self):
    return tuple(g * self.factor for g in self.model.config.grid)

  def step_params(self, step):
    if self.lora is None:
      return self.meta_params
    return self.lora.params_for_step(self.meta_params, step)

  def step(self, x, step, params=None):
    """One 6-hour step of (B, C, H, W) normalized fields.

    Args:
      x: fields on `grid_shape`.
      step: rollout step t of the output, selecting the adapter.
      params: meta parameters to use instead of `step_params(step)`.

    Returns:
      Tensor (B, C, H, W).
    """
    if tuple(onp.shape(backend.values(x))[-2:]) != self.grid_shape:
      raise backend.ShapeError('forecast inputs on %s, expected %s' % (
          onp.shape(backend.values(x))[-2:], self.grid_shape))
    if params is None:
      params = self.step_params(step)
    if self.interpolate:
      return sime.interpolation_forward(self.model, params, x, self.factor)
    if self.factor == 1 and self.res is None:
      return self.model(x, params)
    return sime.sime_forward(self.model, params, x, self.factor, res=self.res,
                             res_params=self.res_params,
                             max_batch=self._max_batch)

  def run(self, x, n_steps, first_step=1):
    """Yields (t, fields) for t = first_step .. first_step + n_steps - 1."""
    x = backend.values(x)
    for t in range(first_step, first_step + n_steps):
      x = backend.values(self.step(x, t))
      if not onp.all(onp.isfinite(x)):
        logging.error('Non-finite forecast at step %d', t)
        raise trainer_lib.NumericalError(
            t, 'forecast at lead %dh is not finite' % lead_hours(t))
      yield t, x

  @classmethod
  def load(cls, model_cfg, meta_path, factor=1, res_cfg=None, res_path=None,
           lora_cfg=None, lora_path=None, max_batch=None):
    """Builds a forecaster from separate stage checkpoints."""
    model = meta_model.MetaModel(model_cfg)
    meta_params = trainer_lib.load_params(meta_path, 'meta')
    res, res_params = None, None
    if res_path is not None:
      res = res_lib.ResStack(res_cfg or res_lib.res_config(),
                             model_cfg.d_model)
      res_params = trainer_lib.load_params(res_path, 'res')
    lora = None
    if lora_path is not None:
      lora = new_lora_set(meta_params, lora_cfg or lora_config())
      lora.load_flat(state_io.read_params(lora_path))
    return cls(model, meta_params, factor, res, res_params, lora, max_batch)


def rollout(plan, forecaster, normalizer=None):
  """Runs plan.n_steps steps from plan.initial_state.

  Args:
    plan: RolloutPlan.
    forecaster: Forecaster.
    normalizer: inputs.Normalizer applied to the initial state and undone on
      every output; None if the state is already in model units.

  Returns:
    list of ForecastStep at the plan's cadence.
  """
  state = plan.initial_state
  x = state.values
  if normalizer is not None:
    x = normalizer.normalize_array(x)
  outputs = []
  for t, y in forecaster.run(x[None], plan.n_steps):
    if not plan.emits(t):
      continue
    values = y[0] if normalizer is None else normalizer.denormalize_array(
        y[0])
    outputs.append(ForecastStep(t, lead_hours(t), grids.WeatherState(
        state.grid, state.variables, values,
        state.valid_time + t * grids.STEP)))
  logging.info('Rolled out %d steps from %s', plan.n_steps,
               grids.format_time(state.valid_time))
  return outputs


def persistence_steps(plan):
  """Baseline that repeats the initial state at every lead time."""
  state = plan.initial_state
  return [ForecastStep(t, lead_hours(t), state._replace(
      valid_time=state.valid_time + t * grids.STEP))
          for t in range(1, plan.n_steps + 1) if plan.emits(t)]


def climatology_steps(plan, clim):
  """Baseline that forecasts the day-of-year climatology."""
  state = plan.initial_state
  if not clim.grid.same_as(state.grid):
    raise ValueError('climatology grid %s does not match the state grid %s' %
                     (clim.grid.shape, state.grid.shape))
  steps = []
  for t in range(1, plan.n_steps + 1):
    if plan.emits(t):
      valid_time = state.valid_time + t * grids.STEP
      steps.append(ForecastStep(t, lead_hours(t), grids.WeatherState(
          state.grid, state.variables, clim.for_time(valid_time),
          valid_time)))
  return steps


def _roll(forecaster, x, n_steps):
  """Values after n_steps detached steps using the current adapters."""
  for _, x in forecaster.run(x, n_steps):
    pass
  return x


def _flat_adapter(adapter):
  return collections.OrderedDict(
      ('%s/%s' % (path, name), factors[name])
      for path, factors in adapter.items() for name in ('A', 'B'))


def _nested_adapter(flat, targets):
  return collections.OrderedDict(
      (path, collections.OrderedDict(
          [('A', flat[path + '/A']), ('B', flat[path + '/B'])]))
      for path in targets)


def step_loss(forecaster, trajectories, step, adapter, weights,
              batch_size=8):
  """Example-weighted loss of step t over every window of the trajectories.

  The first step - 1 steps use the forecaster's adapters; step t uses
  `adapter` (None for the frozen model).
  """
  params = forecaster.lora.merge(forecaster.meta_params, adapter)
  batches = []
  for window in inputs_lib.window_batches(trajectories, step + 1,
                                          batch_size):
    batches.append((_roll(forecaster, window[:, 0], step - 1),
                    window[:, step]))

  def loss_fn(_, x, y):
    return metrics.LatitudeWeightedMSE(forecaster.step(x, step, params), y,
                                       weights)
  return trainer_lib.evaluate_loss(loss_fn, None, batches)


@gin.configurable(denylist=['forecaster', 'trajectories',
                             'eval_trajectories', 'output_dir'])
def lora_finetune(forecaster,
                  trajectories,
                  eval_trajectories,
                  output_dir=None,
                  config=None,
                  optimizer=hirescast_opt.AdamW,
                  learning_rate=1e-3,
                  steps_per_stage=50,
                  batch_size=2,
                  select_by_validation=True,
                  random_seed=2):
  """Tunes one adapter per rollout step, steps in order.

  Stage t rolls the frozen model (with the adapters of steps < t, detached)
  to step t - 1, then trains only A^t and B^t on the step-t target.

  Args:
    forecaster: Forecaster with trained meta (and RES) parameters; its
      `lora` is replaced by the tuned LoraSet.
    trajectories: normalized (T, C, H, W) training runs, T >= t_max + 1.
    eval_trajectories: normalized runs for step-wise validation.
    output_dir: directory for lora.ckpt and loss.csv, or None.
    config: LoraConfig; the gin-configured `lora_config()` if None.
    optimizer: optimizer class.
    learning_rate: constant learning rate of every stage.
    steps_per_stage: optimizer steps per adapter.
    batch_size: training batch size.
    select_by_validation: keep a tuned adapter only if its step-t validation
      loss is not worse than the frozen model's.
    random_seed: seed of adapter initialization and batch order.

  Returns:
    (LoraSet, History)
  """
  config = config or lora_config()
  length = max(len(t) for t in trajectories)
  if length < config.t_max + 1:
    raise ValueError('LoRA tuning of %d steps needs runs of %d states, the '
                     'longest has %d' % (config.t_max, config.t_max + 1,
                                         length))
  lora = new_lora_set(forecaster.meta_params, config)
  forecaster.lora = lora
  frozen = (trainer_lib.params_checksum(forecaster.meta_params),
            trainer_lib.params_checksum(forecaster.res_params or {}))
  weights = trainer_lib.latitude_weights(forecaster.grid_shape)
  schedule = lr.MultifactorSchedule(factors='constant',
                                    constant=learning_rate)
  history = hirescast_history.History()
  rngs = backend.random.split(backend.random.get_prng(random_seed),
                              2 * config.t_max)
  for t in range(1, config.t_max + 1):
    adapter = lora.new_adapter(rngs[2 * t - 2], stddev=config.stddev)
    assert not any(onp.any(f['B']) for f in adapter.values()), (
        'adapter %d does not start from a zero update' % t)
    flat = _flat_adapter(adapter)
    opt = optimizer(learning_rate=learning_rate)
    slots, opt_params = opt.tree_init(flat)
    stream = inputs_lib.window_stream(trajectories, t + 1, batch_size,
                                      rngs[2 * t - 1])
    for i in range(steps_per_stage):
      window = next(stream)
      x = _roll(forecaster, window[:, 0], t - 1)
      leaves = collections.OrderedDict(
          (name, backend.Tensor(value, requires_grad=True))
          for name, value in flat.items())
      with backend.Tape() as tape:
        params = lora.merge(forecaster.meta_params,
                            _nested_adapter(leaves, lora.targets))
        loss = metrics.LatitudeWeightedMSE(forecaster.step(x, t, params),
                                           window[:, t], weights)
      value = loss.item()
      if not onp.isfinite(value):
        raise trainer_lib.NumericalError(i, 'LoRA step %d loss is %r' %
                                         (t, value))
      tape.backward(loss)
      grads = collections.OrderedDict(
          (name, leaf.grad if leaf.grad is not None
           else onp.zeros(leaf.shape, onp.float32))
          for name, leaf in leaves.items())
      opt_params.update(schedule(i))
      tree, slots = opt.tree_update(i, grads, flat, slots, opt_params)
      flat = base.flatten_params(tree)
      history.append('train', 'step_%d/loss' % t, i + 1, value)
    tuned = _nested_adapter(flat, lora.targets)
    frozen_loss = step_loss(forecaster, eval_trajectories, t, None, weights)
    tuned_loss = step_loss(forecaster, eval_trajectories, t, tuned, weights)
    trainer_lib.log_metrics({'step_%d/frozen' % t: frozen_loss,
                             'step_%d/tuned' % t: tuned_loss}, 'eval', t,
                            history)
    if select_by_validation and tuned_loss > frozen_loss:
      trainer_lib.step_log(t, 'Keeping the zero adapter for step %d' % t)
      tuned = adapter
    lora.set_adapter(t, tuned)
  assert frozen == (trainer_lib.params_checksum(forecaster.meta_params),
                    trainer_lib.params_checksum(forecaster.res_params or {})), (
                        'frozen parameters changed during LoRA tuning')
  if output_dir is not None:
    if not os.path.isdir(output_dir):
      os.makedirs(output_dir)
    state_io.write_params(lora.to_flat(), os.path.join(output_dir,
                                                       'lora.ckpt'))
    history.write_csv(os.path.join(output_dir, 'loss.csv'))
    trainer_lib.save_gin(output_dir)
  return lora, history
