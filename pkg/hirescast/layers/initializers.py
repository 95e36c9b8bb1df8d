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

"""Hirescast initializers."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import numpy as onp
from hirescast import backend


def _GetFans(shape, out_dim=-1, in_dim=-2):
  """Get the fan-in and fan-out sizes for the given shape and dims."""
  if len(shape) < 2:
    size = shape[0] if shape else 1
    return size, size
  if out_dim < 0:
    out_dim += len(shape)
  if in_dim < 0:
    in_dim += len(shape)
  receptive_field = int(onp.prod(onp.delete(shape, [in_dim, out_dim])))
  return shape[in_dim] * receptive_field, shape[out_dim] * receptive_field


def ZerosInitializer():
  """An initializer function for all-zero coefficients."""

  def Init(shape, rng):
    del rng
    return onp.zeros(shape, dtype=onp.float32)

  return Init


def RandomNormalInitializer(stddev=1e-2):
  """An initializer function for random normal coefficients."""

  def Init(shape, rng):
    return backend.random.normal(rng, shape, stddev=stddev)

  return Init


def GlorotUniformInitializer(out_dim=-1, in_dim=-2, scale=1.):
  """An initializer function for random uniform Glorot-scaled coefficients."""
  if scale <= 0.:
    raise ValueError('scale must be positive float, {} given'.format(scale))

  def Init(shape, rng):
    fan_in, fan_out = _GetFans(shape, out_dim, in_dim)
    lim = onp.sqrt(3. * scale / ((fan_in + fan_out) / 2.))
    return backend.random.uniform(rng, shape, -lim, lim)

  return Init
