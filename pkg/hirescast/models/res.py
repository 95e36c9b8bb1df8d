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

"""Regional enhanced simulation (RES) modules.

A SIME-decomposed batch holds, for each high-resolution sample, k * k
low-resolution sub-fields whose tokens never see each other. A RES module
puts the tokens back on the high-resolution token grid, attends within
windows there, and restores the decomposed layout, so tokens of different
sub-fields that are spatial neighbours exchange information.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

import gin

from hirescast import backend
from hirescast.layers import attention
from hirescast.layers import base


ResConfig = collections.namedtuple('ResConfig', [
    'positions',     # Blocks (1-based) after which a module runs.
    'window',        # WindowShape on the high-resolution token grid.
    'n_heads',
    'unfreeze_all',  # Whether DCTL ends with a stage training everything.
])


@gin.configurable
def res_config(positions=(3, 6), window=(6, 6), n_heads=4,
               unfreeze_all=False):
  return ResConfig(tuple(positions), attention.WindowShape(*window), n_heads,
                   unfreeze_all)


def validate_res_config(config, n_blocks, hr_token_grid):
  """Returns every problem of a ResConfig for a model (empty if valid)."""
  problems = []
  positions = list(config.positions)
  if positions != sorted(set(positions)):
    problems.append('RES positions %s are not strictly increasing' %
                    (positions,))
  if positions and not 1 <= positions[0] <= positions[-1] <= n_blocks:
    problems.append('RES positions %s outside [1, %d]' % (positions,
                                                          n_blocks))
  if not attention.WindowShape(*config.window).tiles(hr_token_grid):
    problems.append('RES window %s does not tile the high-resolution token '
                    'grid %s' % (tuple(config.window), tuple(hr_token_grid)))
  return problems


def _check_decomposed(seq):
  k = seq.sime_factor
  if k is None:
    raise backend.ShapeError('RES modules need a SIME-decomposed batch')
  if seq.batch_size % (k * k):
    raise backend.ShapeError('batch of %d sub-fields is not a multiple of '
                             '%d' % (seq.batch_size, k * k))
  return k


def res_rearrange(seq):
  """Places decomposed tokens on the high-resolution token grid.

  Token i, j of sub-field b = r * k + c of a sample moves to high-resolution
  token k * i + r, k * j + c.

  Args:
    seq: TokenSequence (n * k * k, h * w, D) with sime_factor k.

  Returns:
    TokenSequence (n, k * h * k * w, D) on grid (k * h, k * w), sime_factor
    None.
  """
  k = _check_decomposed(seq)
  h, w = seq.grid
  n, d = seq.batch_size // (k * k), seq.d_model
  x = backend.reshape(seq.values, (n, k, k, h, w, d))
  x = backend.permute(x, (0, 3, 1, 4, 2, 5))
  x = backend.reshape(x, (n, k * h * k * w, d))
  return attention.TokenSequence(x, (k * h, k * w))


def res_restore(seq, factor):
  """Inverse of `res_rearrange`."""
  k = factor
  hk, wk = seq.grid
  h, w = hk // k, wk // k
  n, d = seq.batch_size, seq.d_model
  x = backend.reshape(seq.values, (n, h, k, w, k, d))
  x = backend.permute(x, (0, 2, 4, 1, 3, 5))
  x = backend.reshape(x, (n * k * k, h * w, d))
  return attention.TokenSequence(x, (h, w), k)


class ResModule(base.Layer):
  """Windowed attention over rearranged tokens; the identity at init."""

  def __init__(self, d_model, n_heads, window, name=None):
    super(ResModule, self).__init__(name=name)
    self._window = attention.WindowShape(*window)
    self._attention = attention.WindowAttention(d_model, n_heads,
                                                zero_output=True)

  def forward(self, seq, params):
    k = _check_decomposed(seq)
    grid = res_rearrange(seq)
    grid = self._attention(grid, params, window=self._window)
    return res_restore(grid, k)

  def new_params(self, rng):
    return self._attention.new_params(rng)


class ResStack(object):
  """The RES modules of one model, keyed by the block they follow."""

  def __init__(self, config, d_model):
    self._config = config
    self._modules = collections.OrderedDict(
        (p, ResModule(d_model, config.n_heads, config.window,
                      name='res_%d' % p))
        for p in config.positions)

  @property
  def config(self):
    return self._config

  @property
  def positions(self):
    return list(self._modules)

  def after_block(self, block, seq, params):
    module = self._modules.get(block)
    if module is None:
      return seq
    return module(seq, params[str(block)])

  def new_params(self, rng):
    rngs = backend.random.split(rng, max(len(self._modules), 1))
    return collections.OrderedDict(
        (str(p), module.new_params(key))
        for key, (p, module) in zip(rngs, self._modules.items()))
