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

"""Tests for hirescast.layers.lora."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from absl.testing import absltest
import numpy as onp

from hirescast import backend
from hirescast.layers import base
from hirescast.layers import lora


def _params():
  rng = onp.random.RandomState(0)
  return collections.OrderedDict([
      ('attn', collections.OrderedDict([
          ('query', {'w': rng.randn(16, 16).astype(onp.float32),
                     'b': onp.zeros((16,), onp.float32)}),
          ('key', {'w': rng.randn(16, 16).astype(onp.float32),
                   'b': onp.zeros((16,), onp.float32)}),
          ('value', {'w': rng.randn(16, 16).astype(onp.float32),
                     'b': onp.zeros((16,), onp.float32)}),
      ])),
  ])


class ApplyLoraTest(absltest.TestCase):

  def setUp(self):
    super(ApplyLoraTest, self).setUp()
    rng = onp.random.RandomState(1)
    self.w0 = rng.randn(12, 16).astype(onp.float32)
    self.a = rng.randn(2, 16).astype(onp.float32)
    self.b = rng.randn(12, 2).astype(onp.float32)
    self.x = rng.randn(5, 16).astype(onp.float32)

  def test_zero_b_is_exactly_the_frozen_layer(self):
    out = lora.apply_lora(self.w0, self.a, onp.zeros_like(self.b), 2.0, 2,
                          self.x, merged=True)
    base_out = backend.matmul(self.x, self.w0.T)
    onp.testing.assert_array_equal(out.data, base_out.data)

  def test_merged_and_unmerged_agree(self):
    merged = lora.apply_lora(self.w0, self.a, self.b, 4.0, 2, self.x,
                             merged=True).data
    unmerged = lora.apply_lora(self.w0, self.a, self.b, 4.0, 2, self.x,
                               merged=False).data
    onp.testing.assert_allclose(merged, unmerged, rtol=1e-5, atol=1e-5)
    expected = self.x @ (self.w0 + 2.0 * self.b @ self.a).T
    onp.testing.assert_allclose(merged, expected, rtol=1e-4, atol=1e-4)

  def test_vector_input(self):
    out = lora.apply_lora(self.w0, self.a, self.b, 2.0, 2, self.x[0])
    self.assertEqual(out.shape, (12,))

  def test_rank_bound(self):
    with self.assertRaises(ValueError):
      lora.apply_lora(self.w0, onp.ones((4, 16)), onp.ones((12, 4)), 4.0, 4,
                      self.x)


class LoraSetTest(absltest.TestCase):

  def test_targets_query_and_value(self):
    lora_set = lora.LoraSet.for_params(_params(), rank=4, t_max=3)
    self.assertEqual(list(lora_set.targets),
                     ['attn/query/w', 'attn/value/w'])
    self.assertEqual(lora_set.beta, 1.0)

  def test_fresh_adapter_merges_to_identity(self):
    params = _params()
    lora_set = lora.LoraSet.for_params(params, rank=4, t_max=3)
    adapter = lora_set.new_adapter(backend.random.get_prng(0))
    self.assertEqual(adapter['attn/query/w']['A'].shape, (4, 16))
    self.assertEqual(onp.count_nonzero(adapter['attn/query/w']['B']), 0)
    merged = lora_set.merge(params, adapter)
    for path in lora_set.targets:
      onp.testing.assert_array_equal(backend.values(base.get_path(merged,
                                                                  path)),
                                     base.get_path(params, path))
    self.assertIs(merged['attn']['key'], params['attn']['key'])

  def test_steps_beyond_t_max_reuse_last_adapter(self):
    lora_set = lora.LoraSet.for_params(_params(), rank=2, t_max=2)
    first = lora_set.new_adapter(backend.random.get_prng(1))
    last = lora_set.new_adapter(backend.random.get_prng(2))
    lora_set.set_adapter(1, first)
    lora_set.set_adapter(2, last)
    self.assertEqual(lora_set.adapter_index(7), 2)
    onp.testing.assert_array_equal(
        lora_set.adapter(7)['attn/value/w']['A'], last['attn/value/w']['A'])
    with self.assertRaises(ValueError):
      lora_set.adapter(0)

  def test_untrained_steps_run_frozen_model(self):
    params = _params()
    lora_set = lora.LoraSet.for_params(params, rank=2, t_max=4)
    self.assertIs(lora_set.params_for_step(params, 3), params)

  def test_flat_entries_restore(self):
    lora_set = lora.LoraSet.for_params(_params(), rank=2, t_max=2)
    lora_set.set_adapter(2, lora_set.new_adapter(backend.random.get_prng(4)))
    flat = lora_set.to_flat()
    self.assertIn('lora/2/attn/query/w/A', flat)
    restored = lora.LoraSet.for_params(_params(), rank=2, t_max=2)
    restored.load_flat(flat)
    self.assertEqual(restored.trained_steps, [2])
    onp.testing.assert_array_equal(restored.adapter(2)['attn/query/w']['A'],
                                   flat['lora/2/attn/query/w/A'])

  def test_gradient_reaches_b_through_merge(self):
    params = _params()
    lora_set = lora.LoraSet.for_params(params, rank=2, t_max=1)
    adapter = backend.nested_map(
        lambda v: backend.Tensor(v, requires_grad=True),
        lora_set.new_adapter(backend.random.get_prng(0)))
    x = onp.random.RandomState(3).randn(4, 16).astype(onp.float32)
    with backend.Tape() as tape:
      merged = lora_set.merge(params, adapter)
      out = backend.matmul(x, base.get_path(merged, 'attn/query/w'))
      loss = backend.sum_(backend.square(out))
    tape.backward(loss)
    self.assertGreater(onp.abs(adapter['attn/query/w']['B'].grad).max(), 0.0)
    # With B = 0 the gradient with respect to A vanishes.
    self.assertEqual(onp.abs(adapter['attn/query/w']['A'].grad).max(), 0.0)


if __name__ == '__main__':
  absltest.main()
