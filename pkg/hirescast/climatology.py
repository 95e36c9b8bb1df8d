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

"""Day-of-year climatology.

Days are numbered 1..366 on the leap-year calendar: day 60 is 29 February and
1 March is day 61 in every year. A day-60 slot without data is filled with
the average of days 59 and 61; any other empty day is an error.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from absl import logging
import numpy as onp

from hirescast import grids
from hirescast import state_io

N_DAYS = 366
LEAP_DAY = 60

# Cumulative days before each month on the leap-year calendar.
_MONTH_START = onp.cumsum([0, 31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30])


def day_of_year(valid_time):
  """Day number 1..366 of a time, with 1 March always day 61."""
  valid_time = grids.to_utc(valid_time)
  return int(_MONTH_START[valid_time.month - 1]) + valid_time.day


class Climatology(collections.namedtuple(
    'Climatology', ['grid', 'variables', 'means', 'counts', 'period'])):
  """Mean state per day of year.

  Attributes:
    grid: GridSpec.
    variables: VariableSet.
    means: float32 array (366, C, H, W); index d - 1 holds day d.
    counts: int array (366,), number of states averaged into each day; 0
      marks a filled leap day.
    period: (first, last) valid time strings of the source data.
  """

  def for_time(self, valid_time):
    """The (C, H, W) mean field of the day containing valid_time."""
    return self.means[day_of_year(valid_time) - 1]

  def state(self, valid_time):
    """The climatological WeatherState valid at valid_time."""
    return grids.WeatherState(self.grid, self.variables,
                              self.for_time(valid_time), valid_time)

  def anomaly(self, state):
    """state minus climatology, float64 (C, H, W)."""
    return (state.values.astype(onp.float64) -
            self.for_time(state.valid_time).astype(onp.float64))

  def to_flat(self):
    return collections.OrderedDict([
        ('climatology/means', self.means),
        ('climatology/counts', self.counts.astype(onp.float32)),
    ])

  def save(self, path):
    state_io.write_params(self.to_flat(), path)

  @classmethod
  def load(cls, path, grid, variables):
    flat = state_io.read_params(path)
    means = flat['climatology/means']
    expected = (N_DAYS, len(variables)) + grid.shape
    if means.shape != expected:
      raise ValueError('%s: climatology shape %s does not match %s' %
                       (path, means.shape, expected))
    counts = flat['climatology/counts'].astype(onp.int64)
    return cls(grid, variables, means, counts, None)


def accumulate(states):
  """Averages an iterable of WeatherStates per day of year.

  Sums run in float64 in iteration order.

  Args:
    states: iterable of WeatherState on one grid with one variable set.

  Returns:
    A Climatology.

  Raises:
    ValueError: no states, inconsistent grids, or days without data.
  """
  sums = None
  counts = onp.zeros((N_DAYS,), onp.int64)
  grid = variables = None
  first = last = None
  for state in states:
    if sums is None:
      grid, variables = state.grid, state.variables
      sums = onp.zeros((N_DAYS, len(variables)) + grid.shape, onp.float64)
      first = state.valid_time
    else:
      state_io.check_compatible(state, grid, variables,
                                grids.format_time(state.valid_time))
    day = day_of_year(state.valid_time)
    sums[day - 1] += state.values
    counts[day - 1] += 1
    last = state.valid_time
  if sums is None:
    raise ValueError('cannot build a climatology from no data')
  missing = [d for d in range(1, N_DAYS + 1)
             if counts[d - 1] == 0 and d != LEAP_DAY]
  if missing:
    raise ValueError('climatology has no data for days of year %s' % missing)
  means = sums / onp.maximum(counts, 1)[:, None, None, None]
  if counts[LEAP_DAY - 1] == 0:
    means[LEAP_DAY - 1] = 0.5 * (means[LEAP_DAY - 2] + means[LEAP_DAY])
    logging.info('Filled day %d of the climatology from its neighbours',
                 LEAP_DAY)
  period = (grids.format_time(first), grids.format_time(last))
  return Climatology(grid, variables, means.astype(onp.float32), counts,
                     period)


def build_climatology(manifest):
  """Builds the day-of-year climatology of every state in a manifest."""
  if not len(manifest):
    raise ValueError('manifest of split %s is empty' % manifest.split)
  logging.info('Building climatology from %d %s states', len(manifest),
               manifest.split)
  return accumulate(manifest.load(i) for i in range(len(manifest)))
