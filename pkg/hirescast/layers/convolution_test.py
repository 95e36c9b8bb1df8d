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

"""Tests for patch embedding and recovery layers."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest
import numpy as onp

from hirescast import backend
from hirescast.layers import convolution


class PatchLayersTest(absltest.TestCase):

  def test_embedding_shapes(self):
    layer = convolution.PatchEmbedding(3, 16, 4)
    params = layer.new_params(backend.random.get_prng(0))
    self.assertEqual(params['kernel'].shape, (16, 3, 4, 4))
    tokens = layer(onp.ones((2, 3, 8, 16), onp.float32), params)
    self.assertEqual(tokens.shape, (2, 2 * 4, 16))

  def test_embedding_token_order_is_row_major(self):
    layer = convolution.PatchEmbedding(1, 1, 2)
    params = {'kernel': onp.full((1, 1, 2, 2), 0.25, onp.float32),
              'bias': onp.zeros((1,), onp.float32)}
    x = onp.zeros((1, 1, 4, 6), onp.float32)
    x[0, 0, 2:4, 4:6] = 1.0  # patch at token row 1, column 2
    tokens = layer(x, params).data[0, :, 0]
    onp.testing.assert_array_equal(tokens, [0, 0, 0, 0, 0, 1])

  def test_embedding_rejects_wrong_channels(self):
    layer = convolution.PatchEmbedding(3, 8, 2)
    params = layer.new_params(backend.random.get_prng(0))
    with self.assertRaises(backend.ShapeError):
      layer(onp.ones((1, 2, 4, 4), onp.float32), params)

  def test_fresh_recovery_predicts_zero(self):
    layer = convolution.PatchRecovery(16, 3, 4)
    params = layer.new_params(backend.random.get_prng(0))
    tokens = onp.random.RandomState(0).randn(2, 8, 16).astype(onp.float32)
    out = layer(tokens, params, grid=(2, 4))
    self.assertEqual(out.shape, (2, 3, 8, 16))
    self.assertEqual(onp.count_nonzero(out.data), 0)

  def test_recovery_bias_per_channel(self):
    layer = convolution.PatchRecovery(4, 2, 2)
    params = layer.new_params(backend.random.get_prng(0))
    params['bias'] = onp.array([1.0, -2.0], onp.float32)
    out = layer(onp.ones((1, 4, 4), onp.float32), params, grid=(2, 2)).data
    onp.testing.assert_array_equal(out[0, 0], onp.ones((4, 4)))
    onp.testing.assert_array_equal(out[0, 1], -2.0 * onp.ones((4, 4)))


if __name__ == '__main__':
  absltest.main()
