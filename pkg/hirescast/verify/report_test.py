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

"""Tests for hirescast.verify.report."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os

from absl.testing import absltest
import numpy as onp

from hirescast import grids
from hirescast.verify import metrics
from hirescast.verify import report


def _report(series, offset=0.0):
  scores = []
  for variable in ('z500', 't2m'):
    for lead in (6, 12, 18):
      scores.append(metrics.Score(variable, lead, 'rmse',
                                  0.1 * lead + offset + 1.0 / 3, 5))
      scores.append(metrics.Score(variable, lead, 'acc', 1.0 - 0.01 * lead,
                                  5))
  return metrics.ScoreReport(series, scores)


class EmitReportTest(absltest.TestCase):

  def test_empty_input_writes_nothing(self):
    output_dir = os.path.join(self.create_tempdir().full_path, 'report')
    with self.assertRaisesRegex(ValueError, 'no scores'):
      report.emit_report([], output_dir)
    with self.assertRaisesRegex(ValueError, 'no scores'):
      report.emit_report([metrics.ScoreReport('model')], output_dir)
    self.assertFalse(os.path.exists(output_dir))

  def test_files_and_series_ids(self):
    output_dir = self.create_tempdir().full_path
    reports = [_report('model'), _report('persistence', 0.5)]
    paths = report.emit_report(reports, output_dir)
    names = sorted(os.path.basename(p) for p in paths)
    self.assertEqual(names, ['acc.svg', 'model_scores.csv',
                             'persistence_scores.csv', 'rmse.svg'])
    with open(os.path.join(output_dir, 'rmse.svg')) as f:
      svg = f.read()
    self.assertEqual(svg.count('id="series-'), 4)
    for series in ('model', 'persistence'):
      for variable in ('z500', 't2m'):
        self.assertIn('id="%s"' % (report.SERIES_ID % (series, variable)),
                      svg)

  def test_scores_roundtrip(self):
    output_dir = self.create_tempdir().full_path
    original = _report('model')
    report.emit_report([original], output_dir, metric_names=('rmse',))
    loaded = report.read_scores(os.path.join(output_dir, 'model_scores.csv'))
    self.assertEqual(loaded.series, 'model')
    self.assertEqual(loaded.scores, original.scores)

  def test_charts_are_reproducible(self):
    first = report.metric_chart([_report('model')], 'rmse')
    second = report.metric_chart([_report('model')], 'rmse')
    self.assertEqual(first, second)

  def test_bad_columns(self):
    path = os.path.join(self.create_tempdir().full_path, 'x_scores.csv')
    with open(path, 'w') as f:
      f.write('variable,lead,value\nz500,6,1.0\n')
    with self.assertRaises(ValueError):
      report.read_scores(path)


class HeatmapTest(absltest.TestCase):

  def test_heatmap(self):
    grid = grids.GridSpec.global_grid(8)
    variables = grids.VariableSet.toy()
    state = grids.WeatherState(
        grid, variables, onp.random.RandomState(0).randn(8, 8, 16),
        '2020-01-02T06:00Z')
    path = os.path.join(self.create_tempdir().full_path, 'heatmap_t2m.svg')
    self.assertEqual(report.heatmap_svg(state, 't2m', path), path)
    with open(path) as f:
      svg = f.read()
    self.assertTrue(svg.lstrip().startswith('<?xml'))
    self.assertIn('</svg>', svg)


if __name__ == '__main__':
  absltest.main()
