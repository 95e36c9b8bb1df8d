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

"""CSV tables and SVG charts of verification results."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import io
import os
import warnings

from absl import logging
import matplotlib as mpl
# Necessary to prevent attempted Tk import:
with warnings.catch_warnings():
  warnings.simplefilter('ignore')
  mpl.use('Agg')
# pylint: disable=g-import-not-at-top
import matplotlib.pyplot as plt
import numpy as onp
import pandas as pd

from hirescast import grids
from hirescast.verify import metrics

SERIES_ID = 'series-%s-%s'
_RC = {'svg.hashsalt': 'hirescast', 'svg.fonttype': 'none'}
_FLOAT_FORMAT = '%.17g'


def _atomic_write(path, text):
  tmp = path + '.tmp'
  with open(tmp, 'w') as f:
    f.write(text)
  os.replace(tmp, path)


def _svg(fig):
  buf = io.StringIO()
  fig.savefig(buf, format='svg', metadata={'Date': None})
  plt.close(fig)
  return buf.getvalue()


def scores_csv(report):
  return report.to_frame().to_csv(index=False, float_format=_FLOAT_FORMAT)


def read_scores(path, series=None):
  frame = pd.read_csv(path, float_precision='round_trip')
  if tuple(frame.columns) != metrics.COLUMNS:
    raise ValueError('%s: columns %s, expected %s' % (
        path, ','.join(frame.columns), ','.join(metrics.COLUMNS)))
  if series is None:
    series = os.path.basename(path).split('_scores')[0]
  return metrics.ScoreReport.from_frame(series, frame)


def metric_chart(reports, metric):
  """SVG text of one metric against lead time, a panel per variable.

  Each series is drawn as one line per panel, with the SVG id
  'series-<series>-<variable>'.
  """
  variables = []
  for report in reports:
    variables.extend(v for v in report.variables if v not in variables)
  with mpl.rc_context(_RC):
    fig, axes = plt.subplots(1, len(variables),
                             figsize=(3.2 * len(variables), 3.0),
                             squeeze=False)
    for ax, variable in zip(axes[0], variables):
      for report in reports:
        curve = report.curve(variable, metric)
        if not curve:
          continue
        leads, values = zip(*curve)
        line, = ax.plot(leads, values, label=report.series)
        line.set_gid(SERIES_ID % (report.series, variable))
      ax.set_title(variable)
      ax.set_xlabel('lead time (h)')
    axes[0][0].set_ylabel(metric)
    axes[0][-1].legend(fontsize='small')
    fig.tight_layout()
    return _svg(fig)


def emit_report(reports, output_dir, metric_names=metrics.METRICS):
  """Writes <series>_scores.csv per report and <metric>.svg per metric.

  Every file is rendered before the first one is written.

  Args:
    reports: list of ScoreReport, one per forecast series.
    output_dir: target directory.
    metric_names: metrics to chart.

  Returns:
    list of written paths.

  Raises:
    ValueError: no report, or no scores of the requested metrics.
  """
  reports = [r for r in reports if len(r)]
  present = [m for m in metric_names
             if any(m in r.metrics for r in reports)]
  if not present:
    raise ValueError('no scores to report')
  files = [('%s_scores.csv' % r.series, scores_csv(r)) for r in reports]
  files += [('%s.svg' % m, metric_chart(reports, m)) for m in present]
  if not os.path.isdir(output_dir):
    os.makedirs(output_dir)
  paths = []
  for name, text in files:
    path = os.path.join(output_dir, name)
    _atomic_write(path, text)
    paths.append(path)
  logging.info('Wrote %d report files to %s', len(paths), output_dir)
  return paths


def write_table(frame, path):
  """Writes any result DataFrame as CSV with round-trip floats."""
  _atomic_write(path, frame.to_csv(index=False, float_format=_FLOAT_FORMAT))


def heatmap_svg(state, channel, path):
  """Renders one channel of a WeatherState as an SVG heatmap."""
  values = state.channel(channel)
  grid = state.grid
  half = grid.resolution / 2
  extent = (grid.lon0 - half, grid.lon0 - half + grid.n_lon * grid.resolution,
            grid.lats[-1] - half, grid.lat0 + half)
  with mpl.rc_context(_RC):
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    image = ax.imshow(onp.asarray(values), extent=extent, origin='upper',
                      aspect='auto', cmap='viridis')
    fig.colorbar(image, ax=ax, label=channel)
    ax.set_title('%s valid %s' % (channel,
                                  grids.format_time(state.valid_time)))
    ax.set_xlabel('longitude')
    ax.set_ylabel('latitude')
    _atomic_write(path, _svg(fig))
  return path
