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

"""Training losses."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import numpy as onp

from hirescast import backend


def LatitudeWeightedMSE(predictions, targets, weights):
  """Mean over (B, C, H, W) of w(lat) * (prediction - target)^2.

  Args:
    predictions: Tensor (B, C, H, W).
    targets: array or Tensor of the same shape.
    weights: (H,) latitude weights with mean 1.

  Returns:
    Scalar Tensor.
  """
  predictions = backend.as_tensor(predictions)
  targets = backend.as_tensor(targets)
  if predictions.shape != targets.shape:
    raise backend.DimensionError('LatitudeWeightedMSE', predictions.shape,
                                 targets.shape)
  weights = onp.asarray(weights, dtype=onp.float32)
  if weights.shape != (predictions.shape[-2],):
    raise backend.DimensionError('LatitudeWeightedMSE', predictions.shape,
                                 weights.shape, 'one weight per latitude row')
  sq = backend.square(backend.subtract(predictions, targets))
  return backend.mean(backend.multiply(sq, weights.reshape((-1, 1))))
