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

"""Hirescast normalization layers."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

import numpy as onp

from hirescast import backend
from hirescast.layers import base


class LayerNorm(base.Layer):
  """Layer normalization over the feature (last) axis."""

  def __init__(self, d_model, epsilon=1e-5, name=None):
    super(LayerNorm, self).__init__(name=name)
    self._d_model = d_model
    self._epsilon = epsilon

  def forward(self, x, params):
    return backend.layer_norm(x, params['gain'], params['offset'],
                              epsilon=self._epsilon)

  def new_params(self, rng):
    del rng
    return collections.OrderedDict([
        ('gain', onp.ones((self._d_model,), dtype=onp.float32)),
        ('offset', onp.zeros((self._d_model,), dtype=onp.float32)),
    ])
