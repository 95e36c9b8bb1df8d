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

"""Hirescast layers library."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from hirescast import backend
from hirescast.layers import base
from hirescast.layers import initializers as init


class Dense(base.Layer):
  """A dense (a.k.a. fully-connected, affine) layer acting on the last axis.

  The kernel is stored as (n_in, n_units) so that y = x @ w + b.
  """

  def __init__(self,
               n_in,
               n_units,
               kernel_initializer=init.GlorotUniformInitializer(),
               bias_initializer=init.ZerosInitializer(),
               name=None):
    super(Dense, self).__init__(name=name)
    self._n_in = n_in
    self._n_units = n_units
    self._kernel_initializer = kernel_initializer
    self._bias_initializer = bias_initializer

  def forward(self, x, params):
    w, b = params['w'], params['b']
    return backend.add(backend.matmul(x, w), b)

  def new_params(self, rng):
    rng1, rng2 = backend.random.split(rng, 2)
    return collections.OrderedDict([
        ('w', self._kernel_initializer((self._n_in, self._n_units), rng1)),
        ('b', self._bias_initializer((self._n_units,), rng2)),
    ])


class Gelu(base.Layer):
  """Exact (erf-based) Gaussian error linear unit."""

  def forward(self, x, params):
    del params
    return backend.gelu(x)


class FeedForward(base.Layer):
  """Position-wise feed-forward network D -> d_ff -> D with GELU."""

  def __init__(self, d_model, d_ff, name=None):
    super(FeedForward, self).__init__(name=name)
    self._hidden = Dense(d_model, d_ff)
    self._gelu = Gelu()
    self._output = Dense(d_ff, d_model)

  def forward(self, x, params):
    h = self._hidden(x, params['hidden'])
    return self._output(self._gelu(h, ()), params['output'])

  def new_params(self, rng):
    rng1, rng2 = backend.random.split(rng, 2)
    return collections.OrderedDict([
        ('hidden', self._hidden.new_params(rng1)),
        ('output', self._output.new_params(rng2)),
    ])
