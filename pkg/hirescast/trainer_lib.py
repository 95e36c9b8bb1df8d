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

"""Hirescast main training functions: pretraining and DCTL."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import hashlib
import itertools
import os
import sys
import time

from absl import logging
import gin
import numpy as onp

from hirescast import backend
from hirescast import grids
from hirescast import history as hirescast_history
from hirescast import learning_rate as lr
from hirescast import optimizers as hirescast_opt
from hirescast import sime
from hirescast import state_io
from hirescast.layers import base
from hirescast.layers import metrics
from hirescast.models import meta_model
from hirescast.models import res as res_lib


def log(s, stdout=True):
  logging.info(s)
  if stdout:
    print(s)
    sys.stdout.flush()


def step_log(step, s):
  log('Step % 6d: %s' % (step, s))


class NumericalError(FloatingPointError):
  """A loss or a state stopped being finite.

  Attributes:
    step: training or rollout step at which it was detected.
    diagnostics: human-readable details.
  """

  def __init__(self, step, diagnostics):
    self.step = step
    self.diagnostics = diagnostics
    super(NumericalError, self).__init__('non-finite values at step %d: %s' %
                                         (step, diagnostics))


TrainerState = collections.namedtuple('_TrainerState', [
    'step',     # Current training step number.
    'params',   # Full parameter tree, trainable and frozen parts.
    'history',  # hirescast.history.History.
])


def params_checksum(tree):
  """SHA-256 over parameter names, shapes and float32 bytes, in path order."""
  digest = hashlib.sha256()
  for path, value in base.flatten_params(tree).items():
    value = onp.ascontiguousarray(backend.values(value), dtype='<f4')
    digest.update(path.encode('utf-8'))
    digest.update(str(value.shape).encode('ascii'))
    digest.update(value.tobytes())
  return digest.hexdigest()


def save_params(tree, path):
  """Writes a parameter tree as a flat parameter container."""
  flat = collections.OrderedDict(
      (name, backend.values(value))
      for name, value in base.flatten_params(tree).items())
  state_io.write_params(flat, path)


def load_params(path, prefix=None):
  """Reads a parameter container, optionally only the subtree `prefix`."""
  tree = base.unflatten_params(state_io.read_params(path))
  if prefix is None:
    return tree
  if prefix not in tree:
    raise KeyError('%s holds no parameters under %r' % (path, prefix))
  return tree[prefix]


def save_gin(output_dir):
  config_path = os.path.join(output_dir, 'config.gin')
  with open(config_path, 'w') as f:
    f.write(gin.operative_config_str())


def log_metrics(metrics_dict, log_prefix, step, history=None):
  """Log metrics to absl logging and history."""
  rjust_len = max([0] + [len(name) for name in metrics_dict])
  for name, value in metrics_dict.items():
    step_log(step, '%s %s | % .8f' % (
        log_prefix.ljust(5), name.rjust(rjust_len), value))
    if history:
      history.append(log_prefix, name, step, value)


def evaluate_loss(loss_fn, params, batches):
  """Example-weighted mean of loss_fn over (x, y) batches, in float64."""
  total, count = 0.0, 0
  for x, y in batches:
    total += float(loss_fn(params, x, y).item()) * len(x)
    count += len(x)
  if not count:
    raise ValueError('no evaluation batches')
  return total / count


def epochs(total_steps, steps_to_skip, epoch_steps):
  """Generates the number of steps in each epoch before reaching total_steps.

  Args:
    total_steps: int, total number of steps.
    steps_to_skip: int, number of steps to skip because of a restart.
    epoch_steps: iterable of int, numbers of steps in each epoch.

  Yields:
    epoch_steps: int, number of steps in this epoch
  """
  steps_to_go = total_steps - steps_to_skip
  epoch_steps = iter(epoch_steps)

  # Remove the desired number of steps from the stream.
  for steps_this_epoch in epoch_steps:
    if steps_this_epoch > steps_to_skip:
      # Put back the number of steps left in the unfinished epoch.
      epoch_steps = itertools.chain(
          [steps_this_epoch - steps_to_skip], epoch_steps)
    if steps_this_epoch >= steps_to_skip:
      break
    steps_to_skip -= steps_this_epoch

  # Yield the remaining steps per epoch up to total_steps.
  for steps_this_epoch in epoch_steps:
    steps_this_epoch = min(steps_this_epoch, steps_to_go)
    yield steps_this_epoch
    steps_to_go -= steps_this_epoch
    if steps_to_go == 0:
      break


def _repeat_stream(stream):
  """Repeat a stream indefinitely."""
  while True:
    for example in stream():
      yield example


class Trainer(object):
  """Hirescast trainer.

  Trains the parameters under the `trainable` path prefixes of a parameter
  tree and leaves every other parameter bit-for-bit unchanged.
  """

  def __init__(self, loss_fn, params, trainable, optimizer, lr_schedule,
               inputs, max_grad_norm=None, history=None, first_step=0):
    """Creates a trainer.

    Args:
      loss_fn: function (params, x, y) -> scalar Tensor.
      params: full parameter tree.
      trainable: list of '/'-separated path prefixes to train.
      optimizer: an instance of hirescast.optimizers.base.Optimizer.
      lr_schedule: history -> (step -> {'learning_rate': lr}).
      inputs: hirescast.inputs.Inputs.
      max_grad_norm: clip gradients to this global norm; None disables.
      history: History to continue, or None for a new one.
      first_step: step number of the first update, so a trainer continuing
        `history` logs after the steps already in it. Optimizer slots and
        the schedule still count from zero.
    """
    self._loss_fn = loss_fn
    self._params = params
    self._trainable = tuple(trainable)
    flat = base.flatten_params(params)
    trained = [p for p in flat if self._is_trainable(p)]
    if not trained:
      raise ValueError('no parameters under %s' % (self._trainable,))
    self._optimizer = optimizer
    self._slots, self._opt_params = optimizer.tree_init(
        base.unflatten_params(collections.OrderedDict(
            (p, flat[p]) for p in trained)))
    self._history = history or hirescast_history.History()
    self._lr_fn = lr_schedule(self._history)
    self._max_grad_norm = max_grad_norm
    self._inputs = inputs
    self._train_stream = inputs.train_stream()
    self._first_step = first_step
    self._step = first_step
    self._frozen_checksum = params_checksum(self.frozen_params)
    self.n_trainable = base.count_params(self.trainable_params)
    self.n_params = base.count_params(params)

  def _is_trainable(self, path):
    return any(path == p or path.startswith(p + '/') for p in self._trainable)

  @property
  def step(self):
    return self._step

  @property
  def params(self):
    return self._params

  @property
  def history(self):
    return self._history

  @property
  def state(self):
    return TrainerState(step=self._step, params=self._params,
                        history=self._history)

  def _subtree(self, trainable):
    return base.unflatten_params(collections.OrderedDict(
        (path, value) for path, value in
        base.flatten_params(self._params).items()
        if self._is_trainable(path) == trainable))

  @property
  def trainable_params(self):
    return self._subtree(True)

  @property
  def frozen_params(self):
    return self._subtree(False)

  def check_frozen(self):
    """Asserts that no frozen parameter moved since construction."""
    checksum = params_checksum(self.frozen_params)
    assert checksum == self._frozen_checksum, (
        'frozen parameters changed during training')

  def print_n_params(self):
    step_log(self._step, 'Trainable parameters: %d of %d (%.2f%%)' % (
        self.n_trainable, self.n_params,
        100.0 * self.n_trainable / self.n_params))

  def _train_step(self, batch):
    """Run one training step; returns the training loss."""
    x, y = batch
    leaves = collections.OrderedDict(
        (path, backend.Tensor(backend.values(value),
                              requires_grad=self._is_trainable(path)))
        for path, value in base.flatten_params(self._params).items())
    with backend.Tape() as tape:
      loss = self._loss_fn(base.unflatten_params(leaves), x, y)
    value = loss.item()
    if not onp.isfinite(value):
      raise NumericalError(self._step, 'training loss is %r' % value)
    tape.backward(loss)
    grads = collections.OrderedDict()
    for path, leaf in leaves.items():
      if not leaf.requires_grad:
        assert leaf.grad is None, 'gradient reached frozen parameter %s' % path
        continue
      grads[path] = (leaf.grad if leaf.grad is not None
                     else onp.zeros(leaf.shape, onp.float32))
    bad = [path for path, g in grads.items() if not onp.all(onp.isfinite(g))]
    if bad:
      raise NumericalError(self._step, 'non-finite gradients for %s' % bad)
    grads = base.unflatten_params(grads)
    if self._max_grad_norm:
      grads = hirescast_opt.clip_grads(grads, self._max_grad_norm)
    opt_params = dict(self._opt_params)
    local_step = self._step - self._first_step
    opt_params.update(self._lr_fn(local_step))
    self._params, self._slots = self._optimizer.tree_update(
        local_step, grads, self._params, self._slots, opt_params)
    self._step += 1
    self._history.append('train', 'step_loss', self._step, value)
    return value

  def train_epoch(self, epoch_steps, eval_steps):
    """Runs the trainer for `epoch_steps` steps, then evaluates."""
    start_time = time.time()
    for _ in range(epoch_steps):
      self._train_step(next(self._train_stream))
    epoch_time = time.time() - start_time
    step_log(self._step, 'Ran %d train steps in %0.2f secs' %
             (epoch_steps, epoch_time))
    self.evaluate(eval_steps)

  def evaluate(self, eval_steps):
    """Evaluate the model and log losses."""
    step_log(self._step, 'Evaluation')
    for mode, stream in (('train', self._inputs.train_eval_stream),
                         ('eval', self._inputs.eval_stream)):
      batches = itertools.islice(stream(), eval_steps or None)
      loss = evaluate_loss(self._loss_fn, self._params, batches)
      if not onp.isfinite(loss):
        raise NumericalError(self._step, '%s loss is %r' % (mode, loss))
      log_metrics({'loss': loss}, mode, self._step, history=self._history)
    step_log(self._step, 'Finished evaluation')

  def train(self, train_steps, eval_steps, eval_frequency):
    """Trains for train_steps steps, evaluating every eval_frequency steps."""
    epoch_steps = [train_steps]
    if eval_frequency:
      epoch_steps = itertools.repeat(eval_frequency)
    if self._step == 0:
      self.print_n_params()
      self.evaluate(eval_steps)
    for steps in epochs(train_steps, self._step - self._first_step,
                        epoch_steps):
      self.train_epoch(steps, eval_steps)
    self.check_frozen()
    step_log(self._step, 'Training done')
    return self.state


def latitude_weights(grid_shape):
  """Training loss weights of the global grid with this (n_lat, n_lon)."""
  grid = grids.GridSpec.global_grid(grid_shape[0], grid_shape[1])
  return grid.latitude_weights().astype(onp.float32)


def meta_loss_fn(model, weights):
  """Latitude-weighted MSE of one 6-hour step on the model grid."""
  def loss_fn(params, x, y):
    return metrics.LatitudeWeightedMSE(model(x, params['meta']), y, weights)
  return loss_fn


def hr_loss_fn(model, res, factor, weights):
  """Latitude-weighted MSE of one SIME + RES step on the fine grid."""
  def loss_fn(params, x, y):
    prediction = sime.sime_forward(model, params['meta'], x, factor, res=res,
                                   res_params=params.get('res'))
    return metrics.LatitudeWeightedMSE(prediction, y, weights)
  return loss_fn


def _check_inputs(inputs, config, factor=1):
  expected = (config.n_channels, config.grid[0] * factor,
              config.grid[1] * factor)
  if tuple(inputs.input_shape) != expected:
    raise backend.ShapeError('inputs of shape %s do not fit the model, '
                             'expected %s' % (tuple(inputs.input_shape),
                                              expected))


@gin.configurable(denylist=['output_dir', 'inputs', 'config'])
def pretrain(output_dir,
             inputs,
             config=None,
             optimizer=hirescast_opt.AdamW,
             lr_schedule=lr.MultifactorSchedule,
             train_steps=500,
             eval_steps=4,
             eval_frequency=100,
             max_grad_norm=None,
             random_seed=0):
  """Pretrains the meta model on 6-hour pairs of the low-resolution split.

  Args:
    output_dir: directory for meta.ckpt, loss.csv and config.gin; None skips
      writing.
    inputs: hirescast.inputs.Inputs over normalized low-resolution data.
    config: ModelConfig; the gin-configured `model_config()` if None.
    optimizer: optimizer class, called with learning_rate=0.0 (the schedule
      sets the rate of every step).
    lr_schedule: learning rate schedule.
    train_steps: number of optimizer steps.
    eval_steps: batches per evaluation; 0 or None evaluates whole streams.
    eval_frequency: steps between evaluations; 0 evaluates only at the end.
    max_grad_norm: optional gradient clipping norm.
    random_seed: seed of the parameter initialization.

  Returns:
    TrainerState with params {'meta': ...}.
  """
  config = config or meta_model.model_config()
  _check_inputs(inputs, config)
  model = meta_model.MetaModel(config)
  params = collections.OrderedDict([
      ('meta', model.new_params(backend.random.get_prng(random_seed)))])
  trainer = Trainer(meta_loss_fn(model, latitude_weights(config.grid)),
                    params, ['meta'], optimizer(learning_rate=0.0),
                    lr_schedule, inputs, max_grad_norm=max_grad_norm)
  step_log(0, 'Pretraining the meta model')
  state = trainer.train(train_steps, eval_steps, eval_frequency)
  if output_dir is not None:
    if not os.path.isdir(output_dir):
      os.makedirs(output_dir)
    save_params(state.params, os.path.join(output_dir, 'meta.ckpt'))
    state.history.write_csv(os.path.join(output_dir, 'loss.csv'))
    save_gin(output_dir)
  return state


@gin.configurable(denylist=['output_dir', 'inputs', 'meta_params', 'config',
                             'res_cfg'])
def dctl_train(output_dir,
               inputs,
               meta_params,
               config=None,
               res_cfg=None,
               factor=3,
               optimizer=hirescast_opt.AdamW,
               lr_schedule=lr.MultifactorSchedule,
               train_steps=300,
               eval_steps=4,
               eval_frequency=100,
               max_grad_norm=None,
               unfreeze_steps=50,
               unfreeze_learning_rate=1e-5,
               random_seed=1):
  """Decompositional and combinational transfer learning.

  Inserts RES modules into the frozen meta model and trains only them on
  6-hour steps of the high-resolution split run through SIME. With
  `res_config.unfreeze_all`, a second stage then trains every parameter at
  `unfreeze_learning_rate`.

  Args:
    output_dir: directory for res.ckpt, loss.csv, validation.csv and
      config.gin (and meta.ckpt when meta parameters were unfrozen); None
      skips writing.
    inputs: hirescast.inputs.Inputs over normalized high-resolution data.
    meta_params: pretrained meta-model parameters.
    config: ModelConfig; the gin-configured `model_config()` if None.
    res_cfg: ResConfig; the gin-configured `res_config()` if None.
    factor: SIME factor k.
    optimizer: optimizer class.
    lr_schedule: learning rate schedule of the RES-only stage.
    train_steps: optimizer steps of the RES-only stage.
    eval_steps: batches per evaluation.
    eval_frequency: steps between evaluations.
    max_grad_norm: optional gradient clipping norm.
    unfreeze_steps: steps of the optional unfreeze-all stage.
    unfreeze_learning_rate: constant learning rate of that stage.
    random_seed: seed of the RES initialization.

  Returns:
    TrainerState with params {'meta': ..., 'res': ...}. The history holds the
    high-resolution validation loss of the frozen SIME model ('validation',
    'before') and after training ('validation', 'after').
  """
  config = config or meta_model.model_config()
  res_cfg = res_cfg or res_lib.res_config()
  _check_inputs(inputs, config, factor)
  hr_token_grid = (config.token_grid[0] * factor,
                   config.token_grid[1] * factor)
  problems = res_lib.validate_res_config(res_cfg, config.n_blocks,
                                         hr_token_grid)
  if problems:
    raise ValueError('invalid RES config: %s' % '; '.join(problems))
  model = meta_model.MetaModel(config)
  stack = res_lib.ResStack(res_cfg, config.d_model)
  params = collections.OrderedDict([
      ('meta', meta_params),
      ('res', stack.new_params(backend.random.get_prng(random_seed))),
  ])
  weights = latitude_weights((config.grid[0] * factor,
                              config.grid[1] * factor))
  loss_fn = hr_loss_fn(model, stack, factor, weights)

  def validation_loss(p):
    return evaluate_loss(loss_fn, p, inputs.eval_stream())

  history = hirescast_history.History()
  before = validation_loss(params)
  log_metrics({'before': before}, 'validation', 0, history)
  trainer = Trainer(loss_fn, params, ['res'], optimizer(learning_rate=0.0),
                    lr_schedule, inputs, max_grad_norm=max_grad_norm,
                    history=history)
  step_log(0, 'DCTL: training %d RES modules' % len(stack.positions))
  state = trainer.train(train_steps, eval_steps, eval_frequency)
  if res_cfg.unfreeze_all and unfreeze_steps:
    step_log(state.step, 'DCTL: unfreezing every parameter')
    constant = lr.MultifactorSchedule(factors='constant',
                                      constant=unfreeze_learning_rate)
    trainer = Trainer(loss_fn, state.params, ['meta', 'res'],
                      optimizer(learning_rate=0.0), lambda _: constant,
                      inputs, max_grad_norm=max_grad_norm, history=history,
                      first_step=state.step)
    state = trainer.train(unfreeze_steps, eval_steps, eval_frequency)
  after = validation_loss(state.params)
  log_metrics({'after': after}, 'validation', state.step, history)
  if output_dir is not None:
    if not os.path.isdir(output_dir):
      os.makedirs(output_dir)
    save_params(collections.OrderedDict([('res', state.params['res'])]),
                os.path.join(output_dir, 'res.ckpt'))
    if res_cfg.unfreeze_all and unfreeze_steps:
      save_params(collections.OrderedDict([('meta', state.params['meta'])]),
                  os.path.join(output_dir, 'meta.ckpt'))
    history.write_csv(os.path.join(output_dir, 'loss.csv'))
    validation = hirescast_history.History()
    validation.append('validation', 'before', 0, before)
    validation.append('validation', 'after', state.step, after)
    validation.write_csv(os.path.join(output_dir, 'validation.csv'))
    save_gin(output_dir)
  return state
