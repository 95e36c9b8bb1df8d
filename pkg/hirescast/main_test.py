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

"""Tests for the exit codes of hirescast.main."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os

from absl.testing import absltest
import gin
import numpy as onp

from hirescast import main
from hirescast import state_io

_TINY = [
    'model_config.grid=(8, 16)',
    'model_config.d_model=8',
    'model_config.n_blocks=3',
    'model_config.period=3',
    'model_config.n_heads=2',
    'model_config.windows=((2, 2),)',
    'res_config.positions=(1, 3)',
    'res_config.window=(3, 3)',
    'res_config.n_heads=2',
    'lora_config.rank=2',
    'lora_config.t_max=2',
    'gen_data.train_lr_days=3',
    'gen_data.train_hr_days=1',
    'gen_data.eval_days=1',
    'gen_data.n_stations=2',
    'pretrain.train_steps=2',
    'pretrain.eval_frequency=0',
    'pretrain.eval_steps=1',
]


class MainTest(absltest.TestCase):

  def setUp(self):
    super(MainTest, self).setUp()
    gin.clear_config()
    self.work_dir = os.path.join(self.create_tempdir().full_path, 'run')
    self.work_dir_binding = "run_config.work_dir='%s'" % self.work_dir

  def tearDown(self):
    gin.clear_config()
    super(MainTest, self).tearDown()

  def test_unknown_stage(self):
    self.assertEqual(main.run(['main']), main.EXIT_CONFIG)
    self.assertEqual(main.run(['main', 'train']), main.EXIT_CONFIG)

  def test_malformed_override(self):
    self.assertEqual(main.run(['main', 'pretrain', 'factor']),
                     main.EXIT_CONFIG)

  def test_invalid_config(self):
    code = main.run(['main', 'gen-data', self.work_dir_binding,
                     'run_config.factor=2'])
    self.assertEqual(code, main.EXIT_CONFIG)
    self.assertFalse(os.path.exists(self.work_dir))

  def test_unknown_binding(self):
    code = main.run(['main', 'gen-data', 'run_config.no_such_key=1'])
    self.assertEqual(code, main.EXIT_CONFIG)

  def test_missing_prerequisite(self):
    code = main.run(['main', 'dctl', self.work_dir_binding])
    self.assertEqual(code, main.EXIT_MISSING_PREREQUISITE)

  def test_non_finite_data(self):
    bindings = [self.work_dir_binding] + _TINY
    self.assertEqual(main.run(['main', 'gen-data'] + bindings), main.EXIT_OK)
    gin.clear_config()
    manifest = state_io.read_manifest(
        os.path.join(self.work_dir, 'data', 'train-LR.manifest'))
    for path in manifest.paths:
      state = state_io.read_state(path)
      values = onp.array(state.values)
      values[0, 0, 0] = onp.nan
      state_io.write_state(state.with_values(values), path)
    self.assertEqual(main.run(['main', 'pretrain'] + bindings),
                     main.EXIT_NUMERICAL)
    self.assertFalse(os.path.exists(
        os.path.join(self.work_dir, 'pretrain', 'meta.ckpt')))


if __name__ == '__main__':
  absltest.main()
