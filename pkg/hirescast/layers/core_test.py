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

"""Tests for core layers."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest
import numpy as onp

from hirescast import backend
from hirescast.layers import core
from hirescast.layers import initializers
from hirescast.layers import normalization


class CoreLayerTest(absltest.TestCase):

  def test_dense(self):
    layer = core.Dense(3, 2)
    params = layer.new_params(backend.random.get_prng(0))
    self.assertEqual(params['w'].shape, (3, 2))
    onp.testing.assert_array_equal(params['b'], onp.zeros((2,)))
    x = onp.arange(12, dtype=onp.float32).reshape((2, 2, 3))
    y = layer(x, params)
    self.assertEqual(y.shape, (2, 2, 2))
    onp.testing.assert_allclose(y.data, x @ params['w'], rtol=1e-5,
                                atol=1e-5)

  def test_gelu_values(self):
    y = core.Gelu()(onp.array([0.0, 1.0, -1.0], onp.float32), ())
    onp.testing.assert_allclose(y.data, [0.0, 0.8413447, -0.1586553],
                                rtol=1e-6, atol=1e-7)

  def test_feed_forward_shapes(self):
    layer = core.FeedForward(8, 32)
    params = layer.new_params(backend.random.get_prng(1))
    self.assertEqual(params['hidden']['w'].shape, (8, 32))
    self.assertEqual(params['output']['w'].shape, (32, 8))
    y = layer(onp.ones((2, 5, 8), onp.float32), params)
    self.assertEqual(y.shape, (2, 5, 8))

  def test_layer_norm(self):
    layer = normalization.LayerNorm(4)
    params = layer.new_params(None)
    x = onp.array([[1., 2., 3., 4.], [2., 2., 2., 6.]], onp.float32)
    y = layer(x, params).data
    onp.testing.assert_allclose(y.mean(axis=-1), [0., 0.], atol=1e-6)
    onp.testing.assert_allclose(y.std(axis=-1), [1., 1.], atol=1e-4)

  def test_glorot_uniform_bounds(self):
    values = initializers.GlorotUniformInitializer()(
        (30, 50), backend.random.get_prng(3))
    self.assertLessEqual(onp.abs(values).max(), onp.sqrt(6. / 80.))
    self.assertEqual(values.dtype, onp.float32)


if __name__ == '__main__':
  absltest.main()
