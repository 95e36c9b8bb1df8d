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

"""Patch embedding and recovery layers."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from hirescast import backend
from hirescast.layers import base
from hirescast.layers import initializers as init


class PatchEmbedding(base.Layer):
  """Maps (B, C, H, W) fields to (B, (H/P) * (W/P), D) tokens."""

  def __init__(self, n_channels, d_model, patch,
               kernel_initializer=init.GlorotUniformInitializer(out_dim=0,
                                                                in_dim=1),
               name=None):
    super(PatchEmbedding, self).__init__(name=name)
    self._n_channels = n_channels
    self._d_model = d_model
    self._patch = patch
    self._kernel_initializer = kernel_initializer

  def forward(self, x, params):
    x = backend.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != self._n_channels:
      raise backend.ShapeError('expected (B, %d, H, W) input, got %s' %
                               (self._n_channels, x.shape))
    out = backend.conv2d(x, params['kernel'])
    b, d, h, w = out.shape
    tokens = backend.reshape(backend.permute(out, (0, 2, 3, 1)), (b, h * w, d))
    return backend.add(tokens, params['bias'])

  def new_params(self, rng):
    shape = (self._d_model, self._n_channels, self._patch, self._patch)
    return collections.OrderedDict([
        ('kernel', self._kernel_initializer(shape, rng)),
        ('bias', init.ZerosInitializer()((self._d_model,), rng)),
    ])


class PatchRecovery(base.Layer):
  """Maps (B, h * w, D) tokens back to (B, C, h * P, w * P) fields.

  The kernel is zero-initialized, so a fresh head predicts a zero increment.
  """

  def __init__(self, d_model, n_channels, patch,
               kernel_initializer=init.ZerosInitializer(), name=None):
    super(PatchRecovery, self).__init__(name=name)
    self._d_model = d_model
    self._n_channels = n_channels
    self._patch = patch
    self._kernel_initializer = kernel_initializer

  def forward(self, tokens, params, grid=None):
    tokens = backend.as_tensor(tokens)
    b, n, d = tokens.shape
    h, w = grid
    if n != h * w:
      raise backend.ShapeError('%d tokens do not fill grid %s' % (n, grid))
    x = backend.permute(backend.reshape(tokens, (b, h, w, d)), (0, 3, 1, 2))
    out = backend.deconv2d(x, params['kernel'])
    bias = backend.reshape(params['bias'], (self._n_channels, 1, 1))
    return backend.add(out, bias)

  def new_params(self, rng):
    shape = (self._d_model, self._n_channels, self._patch, self._patch)
    return collections.OrderedDict([
        ('kernel', self._kernel_initializer(shape, rng)),
        ('bias', init.ZerosInitializer()((self._n_channels,), rng)),
    ])
