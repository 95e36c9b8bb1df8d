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

"""Tests for hirescast.inputs."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os

from absl.testing import absltest
import numpy as onp

from hirescast import backend
from hirescast import grids
from hirescast import inputs
from hirescast import state_io
from hirescast import synthetic

_LR = grids.GridSpec.global_grid(16)


def _trajectory(n_steps=6, seed=0):
  hr, lr = synthetic.generate_synthetic(seed, _LR.refine(3), 3, n_steps,
                                        grids.VariableSet.toy())
  return hr, lr


class NormalizerTest(absltest.TestCase):

  def test_statistics_match_brute_force(self):
    _, lr = _trajectory()
    normalizer = inputs.Normalizer.from_states(lr)
    stacked = onp.stack([s.values for s in lr]).astype(onp.float64)
    mean = stacked.mean(axis=(0, 2, 3))
    std = onp.sqrt(((stacked - mean[None, :, None, None]) ** 2).mean(
        axis=(0, 2, 3)))
    onp.testing.assert_allclose(normalizer.mean, mean, rtol=1e-10)
    onp.testing.assert_allclose(normalizer.std, std, rtol=1e-10)

  def test_roundtrip(self):
    _, lr = _trajectory()
    normalizer = inputs.Normalizer.from_states(lr)
    normalized = normalizer.normalize(lr[2])
    self.assertIs(normalized.normalization, normalizer)
    self.assertLess(abs(float(normalized.values.mean())), 1.0)
    restored = normalizer.denormalize(normalized)
    onp.testing.assert_allclose(restored.values, lr[2].values, rtol=1e-6,
                                atol=1e-5)
    with self.assertRaises(ValueError):
      normalizer.normalize(normalized)

  def test_constant_channel_with_matching_mean(self):
    normalizer = inputs.Normalizer([3.0, -1.0], [2.0, 0.5])
    values = onp.stack([onp.full((2, 4), 3.0), onp.full((2, 4), -1.0)])
    self.assertEqual(onp.abs(normalizer.normalize_array(values)).max(), 0.0)

  def test_degenerate_std(self):
    with self.assertRaisesRegex(ValueError, r'\[1\]'):
      inputs.Normalizer([0.0, 0.0], [1.0, 1e-13])

  def test_channel_mismatch(self):
    normalizer = inputs.Normalizer([0.0], [1.0])
    with self.assertRaises(backend.DimensionError):
      normalizer.normalize_array(onp.zeros((2, 4, 8)))

  def test_saved_statistics(self):
    _, lr = _trajectory()
    normalizer = inputs.Normalizer.from_states(lr)
    path = os.path.join(self.create_tempdir().full_path, 'stats.ckpt')
    normalizer.save(path)
    loaded = inputs.Normalizer.load(path)
    onp.testing.assert_allclose(loaded.mean, normalizer.mean, rtol=1e-6)
    onp.testing.assert_allclose(loaded.std, normalizer.std, rtol=1e-6)


class StreamsTest(absltest.TestCase):

  def _trajectories(self):
    root = self.create_tempdir().full_path
    _, lr = _trajectory(n_steps=5)
    entries = []
    for i, state in enumerate(lr):
      if i == 3:
        continue  # a gap splits the manifest into two runs
      path = os.path.join(root, '%d.ghr' % i)
      state_io.write_state(state, path)
      entries.append((state.valid_time, path))
    manifest = state_io.DatasetManifest('train-LR', entries, _LR,
                                        grids.VariableSet.toy())
    normalizer = inputs.Normalizer.from_manifest(manifest)
    return inputs.load_trajectories(manifest, normalizer), normalizer, lr

  def test_trajectories_split_on_gaps(self):
    trajectories, normalizer, lr = self._trajectories()
    self.assertEqual([len(t) for t in trajectories], [3, 1])
    onp.testing.assert_array_equal(trajectories[0][1],
                                   normalizer.normalize_array(lr[1].values))
    self.assertEqual(inputs.windows(trajectories, 2), [(0, 0), (0, 1)])

  def test_pairs_are_consecutive(self):
    trajectories, _, _ = self._trajectories()
    stream = inputs.inputs(trajectories, trajectories, batch_size=3, seed=1)
    self.assertEqual(stream.input_shape, (8, 16, 32))
    x, y = next(stream.train_stream())
    self.assertEqual(x.shape, (3, 8, 16, 32))
    for xi, yi in zip(x, y):
      matches = [t for t in range(2)
                 if onp.array_equal(trajectories[0][t], xi)]
      self.assertLen(matches, 1)
      onp.testing.assert_array_equal(yi, trajectories[0][matches[0] + 1])
    eval_pairs = list(stream.eval_stream())
    self.assertLen(eval_pairs, 1)
    self.assertEqual(eval_pairs[0][0].shape, (2, 8, 16, 32))

  def test_same_seed_same_batches(self):
    trajectories, _, _ = self._trajectories()
    first = next(inputs.window_stream(trajectories, 2, 4,
                                      backend.random.get_prng(3)))
    second = next(inputs.window_stream(trajectories, 2, 4,
                                       backend.random.get_prng(3)))
    onp.testing.assert_array_equal(first, second)
    with self.assertRaises(ValueError):
      next(inputs.window_stream(trajectories, 5, 1,
                                backend.random.get_prng(3)))


if __name__ == '__main__':
  absltest.main()
