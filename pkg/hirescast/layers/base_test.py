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

"""Tests for hirescast.layers.base."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from absl.testing import absltest
import numpy as onp

from hirescast import backend
from hirescast.layers import base


class _Broken(base.Layer):

  def forward(self, x, params):
    raise TypeError('broken on purpose')


class _BadShape(base.Layer):

  def forward(self, x, params):
    return backend.reshape(x, (7,))


class BaseLayerTest(absltest.TestCase):

  def test_unexpected_errors_become_layer_errors(self):
    layer = _Broken(name='broken_layer')
    with self.assertRaises(base.LayerError) as ctx:
      layer(onp.ones((2, 3)), {})
    message = str(ctx.exception)
    self.assertIn('broken_layer', message)
    self.assertIn('(2, 3)', message)
    self.assertIn('base_test.py', message)

  def test_shape_errors_pass_through(self):
    with self.assertRaises(backend.ShapeError):
      _BadShape()(onp.ones((2, 3)), {})

  def test_default_params_are_empty(self):
    self.assertEqual(dict(_Broken().new_params(None)), {})


class ParamTreeTest(absltest.TestCase):

  def _tree(self):
    return collections.OrderedDict([
        ('embed', collections.OrderedDict([('kernel', onp.ones((2, 3))),
                                           ('bias', onp.zeros((2,)))])),
        ('head', onp.full((4,), 2.0)),
    ])

  def test_flatten_keeps_order_and_paths(self):
    flat = base.flatten_params(self._tree())
    self.assertEqual(list(flat), ['embed/kernel', 'embed/bias', 'head'])
    rebuilt = base.unflatten_params(flat)
    self.assertEqual(list(rebuilt), ['embed', 'head'])
    onp.testing.assert_array_equal(rebuilt['embed']['kernel'],
                                   onp.ones((2, 3)))

  def test_replace_path_does_not_mutate(self):
    tree = self._tree()
    new_tree = base.replace_path(tree, 'embed/bias', onp.ones((2,)))
    onp.testing.assert_array_equal(tree['embed']['bias'], onp.zeros((2,)))
    onp.testing.assert_array_equal(base.get_path(new_tree, 'embed/bias'),
                                   onp.ones((2,)))
    self.assertIs(new_tree['head'], tree['head'])

  def test_count_params(self):
    self.assertEqual(base.count_params(self._tree()), 6 + 2 + 4)


if __name__ == '__main__':
  absltest.main()
