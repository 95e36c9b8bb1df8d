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

"""Spatial identical mapping: running a low-resolution model on a finer grid.

A field on a grid k times finer than the model grid (k odd) is split into
k * k sub-fields by taking every k-th cell from each offset of a k x k block.
Each sub-field has exactly the model grid's spacing, so the pretrained model
runs on all of them as one batch, and the forecasts are put back in place.

Sub-field b = r * k + c holds high-resolution cell (k * i + r, k * j + c) at
its position (i, j).
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from absl import logging
import numpy as onp

from hirescast import backend
from hirescast import grids
from hirescast import synthetic
from hirescast.layers import attention


class SimeLayout(collections.namedtuple(
    'SimeLayout', ['factor', 'hr_grid', 'lr_grid'])):
  """Index map between a high-resolution grid and its k * k sub-fields."""

  @classmethod
  def for_grid(cls, hr_grid, factor):
    check_factor(factor, hr_grid.shape)
    return cls(factor, hr_grid, hr_grid.coarsen(factor))

  @property
  def batch_size(self):
    return self.factor * self.factor

  def offset(self, b):
    """(row, col) offset of sub-field b inside each k x k block."""
    return divmod(b, self.factor)

  def hr_index(self, b, i, j):
    r, c = self.offset(b)
    return self.factor * i + r, self.factor * j + c

  def subgrid(self, b):
    r, c = self.offset(b)
    return self.hr_grid.subgrid(self.factor, r, c)


def check_factor(factor, shape):
  if factor < 1 or factor % 2 == 0:
    raise ValueError('SIME factor must be a positive odd integer, got %d' %
                     factor)
  if shape[-2] % factor or shape[-1] % factor:
    raise ValueError('SIME factor %d does not divide grid %s' %
                     (factor, tuple(shape[-2:])))


def decompose_array(x, factor):
  """(n, C, kH, kW) -> (n * k * k, C, H, W); sub-fields of a sample adjacent.

  Works on numpy arrays and on backend Tensors (differentiably).
  """
  check_factor(factor, x.shape)
  k = factor
  n, c, hk, wk = x.shape
  h, w = hk // k, wk // k
  y = backend.reshape(x, (n, c, h, k, w, k))
  y = backend.permute(y, (0, 3, 5, 1, 2, 4))
  return backend.reshape(y, (n * k * k, c, h, w))


def recompose_array(x, factor):
  """Inverse of `decompose_array`."""
  k = factor
  b, c, h, w = x.shape
  if b % (k * k):
    raise backend.ShapeError('batch of %d sub-fields is not a multiple of %d'
                             % (b, k * k))
  n = b // (k * k)
  y = backend.reshape(x, (n, k, k, c, h, w))
  y = backend.permute(y, (0, 3, 4, 1, 5, 2))
  return backend.reshape(y, (n, c, h * k, w * k))


def decompose(state, factor):
  """Splits a high-resolution WeatherState into k * k sub-field states.

  Args:
    state: WeatherState on a grid divisible by the odd factor.
    factor: k.

  Returns:
    (list of k * k WeatherStates, SimeLayout). Each sub-field state carries
    the grid of its own cell centres.
  """
  layout = SimeLayout.for_grid(state.grid, factor)
  values = backend.values(decompose_array(state.values[None], factor))
  batch = [grids.WeatherState(layout.subgrid(b), state.variables, values[b],
                              state.valid_time, state.normalization)
           for b in range(layout.batch_size)]
  return batch, layout


def recompose(batch, layout):
  """Reassembles the high-resolution WeatherState from its sub-fields."""
  if len(batch) != layout.batch_size:
    raise ValueError('layout with factor %d needs %d sub-fields, got %d' %
                     (layout.factor, layout.batch_size, len(batch)))
  for b, state in enumerate(batch):
    if state.values.shape[-2:] != layout.lr_grid.shape:
      raise ValueError('sub-field %d has shape %s, layout expects %s' %
                       (b, state.values.shape[-2:], layout.lr_grid.shape))
    if state.valid_time != batch[0].valid_time:
      raise ValueError('sub-fields have different valid times')
  values = onp.stack([s.values for s in batch])
  hr = backend.values(recompose_array(values, layout.factor))[0]
  first = batch[0]
  return grids.WeatherState(layout.hr_grid, first.variables, hr,
                            first.valid_time, first.normalization)


SimeCost = collections.namedtuple('SimeCost', [
    'sime_entries',   # score entries per head for the k * k sub-field batch
    'naive_entries',  # the same blocks run densely on the fine token grid
])


def attention_cost(n_tokens, factor):
  """Score entries of one global attention block, SIME versus fine grid.

  The k * k sub-fields each compute an N x N score matrix; global attention
  over the fine token grid would compute one (k * k * N)^2 matrix.

  Args:
    n_tokens: N, tokens per low-resolution field.
    factor: SIME factor k.

  Returns:
    SimeCost.
  """
  b = factor * factor
  return SimeCost(b * n_tokens ** 2, (b * n_tokens) ** 2)


def _forward_batch(model, params, x, factor, res, res_params):
  return model(x, params, res=res, res_params=res_params,
               sime_factor=factor)


def sime_forward(model, params, x_hr, factor, res=None, res_params=None,
                 max_batch=None):
  """One 6-hour step on the fine grid through the low-resolution model.

  Args:
    model: MetaModel.
    params: meta-model parameters.
    x_hr: (n, C, kH, kW) normalized fine-grid fields.
    factor: odd k.
    res: optional ResStack.
    res_params: parameters of `res`.
    max_batch: largest number of sub-fields per model call; None runs all at
      once. With RES modules, chunks hold whole samples. Chunking is for
      inference; gradients do not flow across chunks.

  Returns:
    Tensor (n, C, kH, kW).
  """
  k = factor
  x = decompose_array(backend.as_tensor(x_hr), k)
  total = x.shape[0]
  if max_batch is None or max_batch >= total:
    y = _forward_batch(model, params, x, k, res, res_params)
    return recompose_array(y, k)
  step = max(max_batch // (k * k), 1) * (k * k)
  chunks = []
  data = x.data
  for start in range(0, total, step):
    chunk = _forward_batch(model, params, data[start:start + step], k, res,
                           res_params)
    chunks.append(backend.values(chunk))
  logging.debug('SIME forward in %d chunks of %d sub-fields', len(chunks),
                step)
  return recompose_array(onp.concatenate(chunks), k)


def measure_attention(model, params, x_hr, factor, res=None,
                      res_params=None):
  """Runs `sime_forward` and returns (output, ScoreRecorder)."""
  with attention.record_scores() as recorder:
    y = sime_forward(model, params, x_hr, factor, res, res_params)
  return y, recorder


def interpolation_forward(model, params, x_hr, factor):
  """Baseline: forecast the centre sub-field and repeat it over each block."""
  check_factor(factor, onp.shape(x_hr))
  centre = synthetic.subsample_centers(backend.values(x_hr), factor)
  y = backend.values(model(centre, params))
  return backend.as_tensor(synthetic.upsample_nearest(y, factor))
