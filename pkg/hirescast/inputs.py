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

"""Hirescast input pipeline: normalization and batch streams."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from absl import logging
import gin
import numpy as onp

from hirescast import backend
from hirescast import state_io

# Inputs is a named tuple holding input streams and shapes for a training run.
# Each named stream in the tuple is a function that returns a generator
# of (input_batch, target_batch) tuples of normalized float32 arrays.
#
# * train_stream: random pairs from the training split, endless
#     the shape of examples is [batch_size, C, H, W]
# * train_eval_stream: the first pairs of the training split, one pass
# * eval_stream: every pair of the evaluation split, one pass
# * input_shape: the shape of inputs (C, H, W), without batch size
# * target_shape: the shape of targets, without batch size

Inputs = collections.namedtuple(
    '_Inputs',
    ['train_stream', 'train_eval_stream', 'eval_stream',
     'input_shape', 'target_shape']
)

_MIN_STD = 1e-12


class Normalizer(object):
  """Per-channel (x - mean) / std with float64 statistics."""

  def __init__(self, mean, std):
    mean = onp.asarray(mean, dtype=onp.float64)
    std = onp.asarray(std, dtype=onp.float64)
    if mean.shape != std.shape or mean.ndim != 1:
      raise ValueError('mean %s and std %s must be equal-length vectors' %
                       (mean.shape, std.shape))
    small = [i for i, s in enumerate(std) if not s >= _MIN_STD]
    if small:
      raise ValueError('channels %s have standard deviation below %g' %
                       (small, _MIN_STD))
    self.mean = mean
    self.std = std

  @classmethod
  def from_states(cls, states):
    """Two-pass mean and population standard deviation over all cells."""
    states = list(states)
    if not states:
      raise ValueError('cannot compute statistics of no states')
    total = onp.zeros(states[0].values.shape[0], onp.float64)
    count = 0
    for state in states:
      total += state.values.sum(axis=(1, 2), dtype=onp.float64)
      count += state.values[0].size
    mean = total / count
    squares = onp.zeros_like(total)
    for state in states:
      centred = state.values.astype(onp.float64) - mean[:, None, None]
      squares += (centred ** 2).sum(axis=(1, 2))
    return cls(mean, onp.sqrt(squares / count))

  @classmethod
  def from_manifest(cls, manifest):
    logging.info('Computing normalization statistics over %d %s states',
                 len(manifest), manifest.split)
    return cls.from_states(manifest.load(i) for i in range(len(manifest)))

  def __len__(self):
    return len(self.mean)

  def _stats(self, values):
    channels = values.shape[-3]
    if channels != len(self.mean):
      raise backend.DimensionError('normalize', values.shape,
                                   self.mean.shape,
                                   'channel counts differ')
    return self.mean[:, None, None], self.std[:, None, None]

  def normalize_array(self, values):
    mean, std = self._stats(values)
    return ((onp.asarray(values, onp.float64) - mean) / std).astype(
        onp.float32)

  def denormalize_array(self, values):
    mean, std = self._stats(values)
    return (onp.asarray(values, onp.float64) * std + mean).astype(onp.float32)

  def normalize(self, state):
    if state.normalization is not None:
      raise ValueError('state at %s is already normalized' %
                       state.valid_time)
    return state.with_values(self.normalize_array(state.values),
                             normalization=self)

  def denormalize(self, state):
    if state.normalization is None:
      raise ValueError('state at %s is not normalized' % state.valid_time)
    return state.with_values(self.denormalize_array(state.values))

  def to_flat(self):
    return collections.OrderedDict([('stats/mean', self.mean),
                                    ('stats/std', self.std)])

  def save(self, path):
    state_io.write_params(self.to_flat(), path)

  @classmethod
  def load(cls, path):
    flat = state_io.read_params(path)
    return cls(flat['stats/mean'], flat['stats/std'])


def load_trajectories(manifest, normalizer):
  """Normalized arrays (T, C, H, W), one per 6-hourly run of the manifest."""
  index = {t: i for i, t in enumerate(manifest.times)}
  trajectories = []
  for run in manifest.trajectories():
    states = [manifest.load(index[t]) for t, _ in run]
    trajectories.append(onp.stack([normalizer.normalize_array(s.values)
                                   for s in states]))
  return trajectories


def windows(trajectories, length):
  """(trajectory, start) of every window of `length` consecutive states."""
  return [(i, t) for i, trajectory in enumerate(trajectories)
          for t in range(len(trajectory) - length + 1)]


def window_stream(trajectories, length, batch_size, prng):
  """Endless random batches of windows, shape (B, length, C, H, W)."""
  candidates = windows(trajectories, length)
  if not candidates:
    raise ValueError('no trajectory holds %d consecutive states' % length)
  rng = backend.random.generator(prng)
  while True:
    picks = rng.integers(0, len(candidates), size=batch_size)
    yield onp.stack([trajectories[candidates[p][0]][
        candidates[p][1]:candidates[p][1] + length] for p in picks])


def window_batches(trajectories, length, batch_size, limit=None):
  """All windows in order, batched; the last batch may be smaller."""
  candidates = windows(trajectories, length)[:limit]
  for start in range(0, len(candidates), batch_size):
    chunk = candidates[start:start + batch_size]
    yield onp.stack([trajectories[i][t:t + length] for i, t in chunk])


def _as_pairs(stream):
  for batch in stream:
    yield batch[:, 0], batch[:, 1]


@gin.configurable(denylist=['train_trajectories', 'eval_trajectories'])
def inputs(train_trajectories, eval_trajectories, batch_size=4,
           eval_batch_size=8, train_eval_pairs=32, seed=0):
  """Single-step (X^t, X^{t+6h}) streams over normalized trajectories.

  Args:
    train_trajectories: list of (T, C, H, W) normalized arrays.
    eval_trajectories: list of (T, C, H, W) normalized arrays.
    batch_size: training batch size.
    eval_batch_size: evaluation batch size.
    train_eval_pairs: number of training pairs in train_eval_stream.
    seed: seed of the training batch order.

  Returns:
    hirescast.inputs.Inputs
  """
  shape = tuple(train_trajectories[0].shape[1:])
  prng = backend.random.get_prng(seed)

  def train_stream():
    return _as_pairs(window_stream(train_trajectories, 2, batch_size, prng))

  def train_eval_stream():
    return _as_pairs(window_batches(train_trajectories, 2, eval_batch_size,
                                    limit=train_eval_pairs))

  def eval_stream():
    return _as_pairs(window_batches(eval_trajectories, 2, eval_batch_size))

  return Inputs(train_stream=train_stream,
                train_eval_stream=train_eval_stream,
                eval_stream=eval_stream,
                input_shape=shape,
                target_shape=shape)
