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

"""Hirescast history."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import os

from absl import logging
import pandas as pd


class History(object):
  """History of metrics.

  History contains the metrics recorded during training and evaluation.
  Save data with history.append and get a sequence of data by calling
  history.get.

  For example:
  history.append('train', 'loss', 1, 0.04)
  history.append('train', 'loss', 1000, 0.31)
  history.get('train', 'loss')
  # returns [(1, 0.04), (1000, 0.31)]
  """

  def __init__(self):
    # Structure is
    # values = {
    #   'mode1': {
    #     'metric1': [val1, val2],
    #     ...
    #   },
    #   'mode2': ...
    # }
    self._values = {}

  def append(self, mode, metric, step, value):
    """Append (step, value) pair to history for the given mode and metric."""
    if mode not in self._values:
      self._values[mode] = collections.defaultdict(list)
    self._values[mode][metric].append((step, value))

  def get(self, mode, metric):
    """Get the history for the given metric and mode."""
    if mode not in self._values:
      logging.info('Metric %s not found for mode %s', metric, mode)
      return []
    return list(self._values[mode][metric])

  def last(self, mode, metric):
    """The most recent value of a metric, or None."""
    values = self.get(mode, metric)
    return values[-1][1] if values else None

  @property
  def modes(self):
    """Current tracked modes."""
    return sorted(list(self._values.keys()))

  def metrics_for_mode(self, mode):
    """Metrics available for a given mode."""
    if mode not in self._values:
      logging.info('Mode %s not found', mode)
      return []
    return sorted(list(self._values[mode].keys()))

  def to_frame(self):
    """All values as a DataFrame with columns mode, metric, step, value."""
    rows = [(mode, metric, step, float(value))
            for mode in self.modes
            for metric in self.metrics_for_mode(mode)
            for step, value in self._values[mode][metric]]
    return pd.DataFrame(rows, columns=['mode', 'metric', 'step', 'value'])

  def write_csv(self, path):
    """Writes `to_frame()` to path, replacing the file atomically."""
    tmp = path + '.tmp'
    self.to_frame().to_csv(tmp, index=False, float_format='%.17g')
    os.replace(tmp, path)

  @classmethod
  def read_csv(cls, path):
    history = cls()
    frame = pd.read_csv(path, float_precision='round_trip')
    for row in frame.itertuples(index=False):
      history.append(row.mode, row.metric, int(row.step), float(row.value))
    return history

  def __str__(self):
    return str(self._values)
