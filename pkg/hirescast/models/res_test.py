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

"""Tests for hirescast.models.res."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest
import numpy as onp

from hirescast import backend
from hirescast import sime
from hirescast.layers import attention
from hirescast.models import meta_model
from hirescast.models import res


def _decomposed(n=1, k=3, grid=(2, 4), d_model=8, seed=0):
  rng = onp.random.RandomState(seed)
  values = rng.randn(n * k * k, grid[0] * grid[1], d_model).astype(
      onp.float32)
  return attention.TokenSequence(values, grid, k)


def _trained_module(d_model=8, window=(3, 3), seed=1):
  module = res.ResModule(d_model, 2, window)
  params = module.new_params(backend.random.get_prng(seed))
  params['attention']['output']['w'] = backend.random.normal(
      backend.random.get_prng(seed + 1), (d_model, d_model), 0.3)
  return module, params


class RearrangeTest(absltest.TestCase):

  def test_factor_one_is_plain_reshape(self):
    seq = _decomposed(n=2, k=1)
    grid = res.res_rearrange(seq)
    self.assertEqual(grid.grid, (2, 4))
    self.assertIsNone(grid.sime_factor)
    onp.testing.assert_array_equal(grid.values.data, seq.values.data)

  def test_index_table(self):
    h, w, k = 4, 8, 3
    ids = onp.array([[1000 * b + w * i + j for i in range(h) for j in range(w)]
                     for b in range(k * k)], onp.float32)[..., None]
    grid = res.res_rearrange(attention.TokenSequence(ids, (h, w), k))
    self.assertEqual(grid.grid, (12, 24))
    table = grid.values.data[0, :, 0].reshape((12, 24))
    for p in range(12):
      for q in range(24):
        b = 3 * (p % 3) + q % 3
        self.assertEqual(table[p, q], 1000 * b + w * (p // 3) + q // 3)

  def test_restore_inverts_rearrange(self):
    seq = _decomposed(n=2, k=3, grid=(4, 8))
    restored = res.res_restore(res.res_rearrange(seq), 3)
    self.assertEqual(restored.grid, (4, 8))
    self.assertEqual(restored.sime_factor, 3)
    onp.testing.assert_array_equal(restored.values.data, seq.values.data)

  def test_needs_decomposed_batch(self):
    plain = attention.TokenSequence(onp.ones((9, 8, 8), onp.float32), (2, 4))
    with self.assertRaises(backend.ShapeError):
      res.res_rearrange(plain)
    odd = attention.TokenSequence(onp.ones((8, 8, 8), onp.float32), (2, 4), 3)
    with self.assertRaises(backend.ShapeError):
      res.res_rearrange(odd)


class ResModuleTest(absltest.TestCase):

  def test_fresh_module_is_identity(self):
    module = res.ResModule(8, 2, (3, 3))
    params = module.new_params(backend.random.get_prng(0))
    seq = _decomposed(n=2)
    out = module(seq, params)
    self.assertEqual(out.sime_factor, 3)
    onp.testing.assert_array_equal(out.values.data, seq.values.data)

  def test_full_window_equals_dense_attention(self):
    module, params = _trained_module(window=(6, 12))
    seq = _decomposed()
    out = module(seq, params)
    tokens = res.res_rearrange(seq).values.data[0].astype(onp.float64)
    p = backend.nested_map(lambda v: onp.asarray(v, onp.float64), params)
    centred = tokens - tokens.mean(axis=-1, keepdims=True)
    normed = centred / onp.sqrt((centred ** 2).mean(axis=-1, keepdims=True) +
                                1e-5)
    normed = normed * p['norm']['gain'] + p['norm']['offset']
    mha = p['attention']
    heads = []
    for h in range(2):
      cols = slice(4 * h, 4 * h + 4)
      q = (normed @ mha['query']['w'] + mha['query']['b'])[:, cols]
      k = (normed @ mha['key']['w'] + mha['key']['b'])[:, cols]
      v = (normed @ mha['value']['w'] + mha['value']['b'])[:, cols]
      scores = q @ k.T / 2.0
      weights = onp.exp(scores - scores.max(axis=-1, keepdims=True))
      weights /= weights.sum(axis=-1, keepdims=True)
      heads.append(weights @ v)
    dense = tokens + (onp.concatenate(heads, axis=-1) @ mha['output']['w'] +
                      mha['output']['b'])
    expected = res.res_restore(attention.TokenSequence(
        dense[None].astype(onp.float32), (6, 12)), 3)
    onp.testing.assert_allclose(out.values.data, expected.values.data,
                                rtol=1e-5, atol=1e-5)

  def test_neighbouring_subfields_exchange_information(self):
    module, params = _trained_module()
    seq = _decomposed()
    changed = seq.values.numpy()
    changed[0, 0] += 5.0  # sub-field 0, token (0, 0)
    out = module(seq, params).values.data
    out_changed = module(seq.with_values(changed), params).values.data
    # The 3 x 3 window around it holds token (0, 0) of every sub-field.
    for b in range(1, 9):
      self.assertFalse(onp.allclose(out[b, 0], out_changed[b, 0]))
      onp.testing.assert_allclose(out[b, 1:], out_changed[b, 1:], rtol=1e-6,
                                  atol=1e-6)

  def test_samples_stay_separate(self):
    module, params = _trained_module()
    seq = _decomposed(n=2)
    both = module(seq, params).values.data
    second = module(attention.TokenSequence(seq.values.data[9:], (2, 4), 3),
                    params).values.data
    onp.testing.assert_allclose(both[9:], second, rtol=1e-5, atol=1e-5)

  def test_window_must_tile(self):
    module = res.ResModule(8, 2, (4, 4))
    params = module.new_params(backend.random.get_prng(0))
    with self.assertRaises(backend.ShapeError):
      module(_decomposed(), params)


class ResConfigTest(absltest.TestCase):

  def test_defaults_fit_toy_grid(self):
    config = res.res_config()
    self.assertEqual(config.positions, (3, 6))
    self.assertEqual(res.validate_res_config(config, 6, (12, 24)), [])

  def test_problems(self):
    config = res.res_config(positions=(3, 3), window=(5, 5))
    problems = res.validate_res_config(config, 6, (12, 24))
    self.assertLen(problems, 2)
    self.assertIn('strictly increasing', problems[0])
    self.assertIn('does not tile', problems[1])
    config = res.res_config(positions=(0, 3))
    self.assertLen(res.validate_res_config(config, 6, (12, 24)), 1)


class ResStackTest(absltest.TestCase):

  def setUp(self):
    super(ResStackTest, self).setUp()
    self.model = meta_model.MetaModel(meta_model.model_config())
    self.params = self.model.new_params(backend.random.get_prng(0))
    self.params['head']['kernel'] = backend.random.normal(
        backend.random.get_prng(1), self.params['head']['kernel'].shape, 0.05)
    self.stack = res.ResStack(res.res_config(), 32)
    self.x = onp.random.RandomState(2).randn(1, 8, 48, 96).astype(onp.float32)

  def test_parameters(self):
    res_params = self.stack.new_params(backend.random.get_prng(3))
    self.assertEqual(list(res_params), ['3', '6'])
    self.assertEqual(self.stack.positions, [3, 6])

  def test_fresh_stack_leaves_forecast_unchanged(self):
    res_params = self.stack.new_params(backend.random.get_prng(3))
    plain = sime.sime_forward(self.model, self.params, self.x, 3)
    with_res = sime.sime_forward(self.model, self.params, self.x, 3,
                                 res=self.stack, res_params=res_params)
    onp.testing.assert_array_equal(with_res.data, plain.data)

  def test_trained_stack_changes_forecast(self):
    res_params = self.stack.new_params(backend.random.get_prng(3))
    res_params['3']['attention']['output']['w'] = backend.random.normal(
        backend.random.get_prng(4), (32, 32), 0.2)
    plain = sime.sime_forward(self.model, self.params, self.x, 3)
    with_res = sime.sime_forward(self.model, self.params, self.x, 3,
                                 res=self.stack, res_params=res_params)
    self.assertFalse(onp.allclose(with_res.data, plain.data))

  def test_res_needs_sime_batch(self):
    res_params = self.stack.new_params(backend.random.get_prng(3))
    x = self.x[:, :, 1::3, 1::3]
    with self.assertRaises(backend.ShapeError):
      self.model(x, self.params, res=self.stack, res_params=res_params)


if __name__ == '__main__':
  absltest.main()
