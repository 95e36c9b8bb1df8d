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

"""Tests for hirescast.models.meta_model."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest
import numpy as onp

from hirescast import backend
from hirescast import backend_test
from hirescast.layers import attention
from hirescast.layers import base
from hirescast.layers import metrics
from hirescast.models import meta_model


def _small_config():
  return meta_model.model_config(n_channels=2, grid=(8, 16), patch=4,
                                 d_model=8, n_blocks=3, period=3, n_heads=2,
                                 windows=((2, 2),))


def _fields(n, config, seed=0):
  rng = onp.random.RandomState(seed)
  return rng.randn(n, config.n_channels, *config.grid).astype(onp.float32)


class ModelConfigTest(absltest.TestCase):

  def test_toy_defaults(self):
    config = meta_model.model_config()
    self.assertEqual(config.token_grid, (4, 8))
    self.assertEqual(config.n_tokens, 32)
    self.assertEqual(config.d_ff, 128)
    self.assertEqual(config.validate(), [])

  def test_schedule(self):
    schedule = meta_model.window_schedule(meta_model.model_config())
    kinds = [w.kind if w is not None else 'global' for w in schedule]
    self.assertEqual(kinds, ['square', 'zonal', 'global', 'meridional',
                             'square', 'global'])

  def test_every_problem_is_reported(self):
    config = meta_model.model_config(grid=(18, 32), n_blocks=5, d_model=30,
                                     windows=((3, 3),))
    problems = config.validate()
    self.assertLen(problems, 4)
    with self.assertRaisesRegex(ValueError, 'not divisible by period'):
      meta_model.MetaModel(config)


class MetaModelTest(absltest.TestCase):

  def setUp(self):
    super(MetaModelTest, self).setUp()
    self.model = meta_model.MetaModel(meta_model.model_config())
    self.params = self.model.new_params(backend.random.get_prng(0))

  def test_parameter_count(self):
    self.assertEqual(base.count_params(self.params), 85544)

  def test_fresh_model_is_persistence(self):
    x = _fields(2, self.model.config)
    y = self.model(x, self.params)
    self.assertEqual(y.shape, (2, 8, 16, 32))
    onp.testing.assert_array_equal(y.data, x)

  def test_embedding_of_zero_state(self):
    seq = self.model.embed(onp.zeros((1, 8, 16, 32), onp.float32),
                           self.params)
    self.assertEqual(seq.values.shape, (1, 32, 32))
    self.assertEqual(seq.grid, (4, 8))
    onp.testing.assert_allclose(seq.values.data[0],
                                self.params['position'] +
                                self.params['embed']['bias'], atol=1e-7)

  def test_channel_permutation_with_permuted_kernel(self):
    x = _fields(1, self.model.config, seed=1)
    order = [3, 0, 7, 1, 6, 2, 5, 4]
    params = base.replace_path(self.params, 'embed/kernel',
                               self.params['embed']['kernel'][:, order])
    a = self.model.embed(x, self.params).values.data
    b = self.model.embed(x[:, order], params).values.data
    onp.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)
    c = self.model.embed(x[:, order], self.params).values.data
    self.assertFalse(onp.allclose(a, c))

  def test_wrong_grid(self):
    with self.assertRaises(backend.ShapeError):
      self.model(onp.zeros((1, 8, 48, 96), onp.float32), self.params)

  def test_attention_matrix_sizes(self):
    with attention.record_scores() as recorder:
      self.model(_fields(1, self.model.config), self.params)
    self.assertEqual([s[-2:] for s in recorder.shapes],
                     [(4, 4), (8, 8), (32, 32), (8, 8), (4, 4), (32, 32)])
    self.assertEqual([s[0] for s in recorder.shapes], [8, 4, 1, 4, 8, 1])


class GradientTest(absltest.TestCase):

  def test_parameter_gradients(self):
    config = _small_config()
    model = meta_model.MetaModel(config)
    params = model.new_params(backend.random.get_prng(2))
    params['head']['kernel'] = backend.random.normal(
        backend.random.get_prng(3), params['head']['kernel'].shape, 0.1)
    x = _fields(2, config, seed=4)
    target = _fields(2, config, seed=5)
    weights = onp.ones((8,), onp.float32)
    path = 'blocks/0/ffn/hidden/w'
    value = base.get_path(params, path)

    def loss_fn(leaf):
      tree = base.replace_path(params, path, leaf)
      return metrics.LatitudeWeightedMSE(model(x, tree), target, weights)

    leaf = backend.Tensor(value, requires_grad=True)
    with backend.Tape() as tape:
      loss = loss_fn(leaf)
    tape.backward(loss)
    positions = [0, 7, 19, 42, 77, 101, 150, 200, 233, 255]
    numeric = backend.finite_difference(lambda v: loss_fn(v).item(), value,
                                        positions)
    backend_test.assert_grads_close(self, leaf.grad.ravel()[positions],
                                    numeric)


if __name__ == '__main__':
  absltest.main()
