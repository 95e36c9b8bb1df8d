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

"""Windowed-attention forecast model on the low-resolution grid."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

import gin

from hirescast import backend
from hirescast.layers import attention
from hirescast.layers import base
from hirescast.layers import convolution
from hirescast.layers import initializers as init
from hirescast.layers import normalization


class ModelConfig(collections.namedtuple('ModelConfig', [
    'n_channels',  # C, channels per state.
    'grid',        # (H, W) of the training grid.
    'patch',       # P, patch size of the embedding and the head.
    'd_model',     # D, token depth.
    'n_blocks',    # M, transformer blocks.
    'period',      # F, every F-th block attends globally.
    'n_heads',
    'd_ff',        # hidden size of the feed-forward networks.
    'windows',     # WindowShapes cycled through by the local blocks.
])):
  """Hyperparameters of the meta model."""

  @property
  def token_grid(self):
    return (self.grid[0] // self.patch, self.grid[1] // self.patch)

  @property
  def n_tokens(self):
    h, w = self.token_grid
    return h * w

  def validate(self):
    """Returns a list of every inconsistency (empty if valid)."""
    problems = []
    if self.grid[0] % self.patch or self.grid[1] % self.patch:
      problems.append('grid %s is not divisible by patch %d' %
                      (tuple(self.grid), self.patch))
    if self.period < 1 or self.n_blocks % self.period:
      problems.append('n_blocks %d is not divisible by period %d' %
                      (self.n_blocks, self.period))
    if self.d_model % self.n_heads:
      problems.append('d_model %d is not divisible by n_heads %d' %
                      (self.d_model, self.n_heads))
    if self.period > 1 and not self.windows:
      problems.append('local blocks need at least one window shape')
    for window in self.windows:
      if not attention.WindowShape(*window).tiles(self.token_grid):
        problems.append('window %s does not tile token grid %s' %
                        (tuple(window), self.token_grid))
    return problems


@gin.configurable
def model_config(n_channels=8, grid=(16, 32), patch=4, d_model=32,
                 n_blocks=6, period=3, n_heads=4, d_ff=None,
                 windows=((2, 2), (2, 4), (4, 2))):
  """Builds a ModelConfig; defaults are the toy configuration.

  Args:
    n_channels: channels per state.
    grid: (H, W) of the low-resolution grid.
    patch: patch size P.
    d_model: token depth D.
    n_blocks: number of blocks M.
    period: F; blocks F, 2F, ... attend globally.
    n_heads: attention heads.
    d_ff: feed-forward hidden size, 4 * d_model if None.
    windows: local window shapes (rows, cols) in the order the local blocks
      use them; conventionally square, zonal (cols > rows), meridional.

  Returns:
    A ModelConfig.
  """
  return ModelConfig(n_channels, tuple(grid), patch, d_model, n_blocks,
                     period, n_heads, d_ff or 4 * d_model,
                     tuple(attention.WindowShape(*w) for w in windows))


def window_schedule(config):
  """Per block, its WindowShape, or None for a global block."""
  schedule = []
  n_local = 0
  for m in range(1, config.n_blocks + 1):
    if m % config.period == 0:
      schedule.append(None)
    else:
      schedule.append(attention.WindowShape(
          *config.windows[n_local % len(config.windows)]))
      n_local += 1
  return schedule


class MetaModel(base.Layer):
  """Patch embedding, windowed transformer blocks and a deconvolution head.

  The model predicts the 6-hour increment: forward(x) = x + head(blocks(x)).
  The head is zero-initialized, so a fresh model forecasts persistence.
  Optional RES modules (see `hirescast.models.res`) run after the blocks
  they are attached to.
  """

  def __init__(self, config, name=None):
    super(MetaModel, self).__init__(name=name)
    problems = config.validate()
    if problems:
      raise ValueError('invalid model config: %s' % '; '.join(problems))
    self._config = config
    self._schedule = window_schedule(config)
    self._embed = convolution.PatchEmbedding(config.n_channels,
                                             config.d_model, config.patch)
    self._blocks = [attention.AttentionBlock(config.d_model, config.n_heads,
                                             config.d_ff,
                                             name='block_%d' % m)
                    for m in range(config.n_blocks)]
    self._head_norm = normalization.LayerNorm(config.d_model)
    self._head = convolution.PatchRecovery(config.d_model, config.n_channels,
                                           config.patch)

  @property
  def config(self):
    return self._config

  @property
  def schedule(self):
    return list(self._schedule)

  def embed(self, x, params, sime_factor=None):
    """Embeds (B, C, H, W) fields into a TokenSequence with positions."""
    x = backend.as_tensor(x)
    if tuple(x.shape[-2:]) != tuple(self._config.grid):
      raise backend.ShapeError('input grid %s does not match the model grid '
                               '%s' % (x.shape[-2:], self._config.grid))
    tokens = self._embed(x, params['embed'])
    tokens = backend.add(tokens, params['position'])
    return attention.TokenSequence(tokens, self._config.token_grid,
                                   sime_factor)

  def blocks(self, seq, params, res=None, res_params=None):
    """Runs every block, then any RES module attached after it."""
    for m, (block, window) in enumerate(zip(self._blocks, self._schedule)):
      seq = block(seq, params['blocks'][str(m)], window=window)
      if res is not None:
        seq = res.after_block(m + 1, seq, res_params)
    return seq

  def head(self, seq, params):
    normed = self._head_norm(seq.values, params['head_norm'])
    return self._head(normed, params['head'], grid=seq.grid)

  def forward(self, x, params, res=None, res_params=None, sime_factor=None):
    """One 6-hour step.

    Args:
      x: (B, C, H, W) normalized states on the model grid.
      params: meta-model parameter tree.
      res: optional ResStack.
      res_params: parameters of `res`.
      sime_factor: k when x is a SIME-decomposed batch (needed by RES).

    Returns:
      Tensor (B, C, H, W), x plus the predicted increment.
    """
    x = backend.as_tensor(x)
    seq = self.embed(x, params, sime_factor)
    seq = self.blocks(seq, params, res, res_params)
    return backend.add(x, self.head(seq, params))

  def new_params(self, rng):
    rngs = backend.random.split(rng, self._config.n_blocks + 3)
    blocks = collections.OrderedDict(
        (str(m), block.new_params(rngs[m]))
        for m, block in enumerate(self._blocks))
    position = init.RandomNormalInitializer(0.02)(
        (self._config.n_tokens, self._config.d_model), rngs[-3])
    return collections.OrderedDict([
        ('embed', self._embed.new_params(rngs[-2])),
        ('position', position),
        ('blocks', blocks),
        ('head_norm', self._head_norm.new_params(rngs[-1])),
        ('head', self._head.new_params(rngs[-1])),
    ])
