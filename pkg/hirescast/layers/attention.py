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

"""Windowed multi-head self-attention on 2-d token grids.

Tokens live on an (h, w) grid stored row-major as a (B, h * w, D) tensor.
Local attention partitions the grid into non-overlapping (r, c) windows and
attends within each window; global attention is the same computation with a
single window covering the whole grid.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import contextlib

import numpy as onp

from hirescast import backend
from hirescast.layers import base
from hirescast.layers import core
from hirescast.layers import initializers as init
from hirescast.layers import normalization


class TokenSequence(collections.namedtuple(
    'TokenSequence', ['values', 'grid', 'sime_factor'])):
  """Tokens on a 2-d grid.

  Attributes:
    values: Tensor (B, h * w, D), row-major over the grid.
    grid: (h, w) token-grid dimensions.
    sime_factor: None for plain low-resolution input, otherwise the factor k
      of the self-ensemble decomposition the batch came from (the batch then
      holds k * k consecutive sub-fields per high-resolution sample).
  """

  def __new__(cls, values, grid, sime_factor=None):
    values = backend.as_tensor(values)
    grid = tuple(int(g) for g in grid)
    if values.ndim != 3 or values.shape[1] != grid[0] * grid[1]:
      raise backend.ShapeError('token values %s do not match grid %s' %
                               (values.shape, grid))
    return super(TokenSequence, cls).__new__(cls, values, grid, sime_factor)

  @property
  def batch_size(self):
    return self.values.shape[0]

  @property
  def d_model(self):
    return self.values.shape[2]

  def with_values(self, values):
    return self._replace(values=backend.as_tensor(values))


class WindowShape(collections.namedtuple('WindowShape', ['rows', 'cols'])):
  """Attention window size in tokens (rows along latitude)."""

  @property
  def kind(self):
    if self.rows == self.cols:
      return 'square'
    return 'zonal' if self.cols > self.rows else 'meridional'

  def tiles(self, grid):
    return grid[0] % self.rows == 0 and grid[1] % self.cols == 0


Windows = collections.namedtuple(
    'Windows', ['values', 'grid', 'shape', 'batch_size', 'sime_factor'])


def window_partition(seq, shape):
  """Splits a token sequence into windows.

  Args:
    seq: TokenSequence with values (B, h * w, D).
    shape: WindowShape (r, c) tiling the grid.

  Returns:
    Windows whose values are (B * (h // r) * (w // c), r * c, D), windows of
    one batch element contiguous and in row-major order.

  Raises:
    ShapeError: if the window does not tile the grid.
  """
  shape = WindowShape(*shape)
  h, w = seq.grid
  if not shape.tiles(seq.grid):
    raise backend.ShapeError('window %s does not tile token grid %s' %
                             (tuple(shape), seq.grid))
  b, d = seq.batch_size, seq.d_model
  r, c = shape
  x = backend.reshape(seq.values, (b, h // r, r, w // c, c, d))
  x = backend.permute(x, (0, 1, 3, 2, 4, 5))
  x = backend.reshape(x, (b * (h // r) * (w // c), r * c, d))
  return Windows(x, seq.grid, shape, b, seq.sime_factor)


def window_reverse(windows):
  """Inverse of `window_partition`."""
  h, w = windows.grid
  r, c = windows.shape
  b = windows.batch_size
  d = windows.values.shape[-1]
  x = backend.reshape(windows.values, (b, h // r, w // c, r, c, d))
  x = backend.permute(x, (0, 1, 3, 2, 4, 5))
  x = backend.reshape(x, (b, h * w, d))
  return TokenSequence(x, windows.grid, windows.sime_factor)


class ScoreRecorder(object):
  """Collects the shapes of attention score matrices computed while active."""

  def __init__(self):
    self.shapes = []

  def record(self, shape):
    self.shapes.append(tuple(shape))

  @property
  def entries(self):
    """Total score entries per head: sum of n_windows * T * T."""
    return sum(s[0] * s[-2] * s[-1] for s in self.shapes)

  def matrix_sizes(self):
    return sorted(set((s[-2], s[-1]) for s in self.shapes))


_recorders = []


@contextlib.contextmanager
def record_scores():
  """Records every attention score matrix shape computed in this context."""
  recorder = ScoreRecorder()
  _recorders.append(recorder)
  try:
    yield recorder
  finally:
    _recorders.remove(recorder)


class MultiHeadAttention(base.Layer):
  """Multi-head scaled dot-product self-attention on (B', T, D) inputs."""

  def __init__(self, d_model, n_heads, zero_output=False, name=None):
    super(MultiHeadAttention, self).__init__(name=name)
    if d_model % n_heads:
      raise ValueError('d_model %d is not divisible by n_heads %d' %
                       (d_model, n_heads))
    self._d_model = d_model
    self._n_heads = n_heads
    output_init = (init.ZerosInitializer() if zero_output
                   else init.GlorotUniformInitializer())
    self._query = core.Dense(d_model, d_model)
    self._key = core.Dense(d_model, d_model)
    self._value = core.Dense(d_model, d_model)
    self._output = core.Dense(d_model, d_model,
                              kernel_initializer=output_init)

  def _split_heads(self, x):
    b, t, _ = x.shape
    x = backend.reshape(x, (b, t, self._n_heads, self._d_model // self._n_heads))
    return backend.permute(x, (0, 2, 1, 3))

  def _join_heads(self, x):
    b, _, t, _ = x.shape
    return backend.reshape(backend.permute(x, (0, 2, 1, 3)),
                           (b, t, self._d_model))

  def forward(self, x, params):
    q = self._split_heads(self._query(x, params['query']))
    k = self._split_heads(self._key(x, params['key']))
    v = self._split_heads(self._value(x, params['value']))
    depth = self._d_model // self._n_heads
    dots = backend.scale(backend.matmul(q, backend.swap_last(k)),
                         1.0 / onp.sqrt(depth))
    for recorder in _recorders:
      recorder.record(dots.shape)
    out = backend.matmul(backend.softmax(dots, axis=-1), v)
    return self._output(self._join_heads(out), params['output'])

  def new_params(self, rng):
    rngs = backend.random.split(rng, 4)
    return collections.OrderedDict([
        ('query', self._query.new_params(rngs[0])),
        ('key', self._key.new_params(rngs[1])),
        ('value', self._value.new_params(rngs[2])),
        ('output', self._output.new_params(rngs[3])),
    ])


class WindowAttention(base.Layer):
  """Pre-norm residual attention restricted to windows of a token grid.

  With `window=None` the window is the full grid (global attention).
  """

  def __init__(self, d_model, n_heads, zero_output=False, name=None):
    super(WindowAttention, self).__init__(name=name)
    self._norm = normalization.LayerNorm(d_model)
    self._attention = MultiHeadAttention(d_model, n_heads,
                                         zero_output=zero_output)

  def forward(self, seq, params, window=None):
    window = seq.grid if window is None else window
    normed = seq.with_values(self._norm(seq.values, params['norm']))
    windows = window_partition(normed, window)
    attended = windows._replace(
        values=self._attention(windows.values, params['attention']))
    update = window_reverse(attended).values
    return seq.with_values(backend.add(seq.values, update))

  def new_params(self, rng):
    return collections.OrderedDict([
        ('norm', self._norm.new_params(rng)),
        ('attention', self._attention.new_params(rng)),
    ])


class AttentionBlock(base.Layer):
  """Transformer block: windowed attention then a feed-forward network."""

  def __init__(self, d_model, n_heads, d_ff, name=None):
    super(AttentionBlock, self).__init__(name=name)
    self._attention = WindowAttention(d_model, n_heads)
    self._ffn_norm = normalization.LayerNorm(d_model)
    self._ffn = core.FeedForward(d_model, d_ff)

  def forward(self, seq, params, window=None):
    seq = self._attention(seq, params['attn'], window=window)
    h = self._ffn(self._ffn_norm(seq.values, params['ffn_norm']),
                  params['ffn'])
    return seq.with_values(backend.add(seq.values, h))

  def new_params(self, rng):
    rng1, rng2 = backend.random.split(rng, 2)
    return collections.OrderedDict([
        ('attn', self._attention.new_params(rng1)),
        ('ffn_norm', self._ffn_norm.new_params(rng2)),
        ('ffn', self._ffn.new_params(rng2)),
    ])
