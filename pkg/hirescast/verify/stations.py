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

"""Verification of gridded forecasts against station observations."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import math

from absl import logging
import numpy as onp
import pandas as pd

from hirescast import grids
from hirescast import stations as stations_lib

INIT_HOURS = (0, 12)
TABLE_COLUMNS = ('variable', 'month', 'lead_days', 'rmse', 'n_stations')

StationMatch = collections.namedtuple('StationMatch', [
    'record',    # StationRecord.
    'cell',      # (row, col) of the nearest cell centre.
    'forecast',  # Forecast value at that cell.
    'error',     # forecast - observation.
])

StationEval = collections.namedtuple('StationEval', [
    'table',            # DataFrame with TABLE_COLUMNS.
    'matches',          # Per (variable, month, lead_hours): [StationMatch].
    'init_times',       # Init times that were used, all at 00Z or 12Z.
    'n_skipped_inits',  # Init times at other hours.
    'n_outside',        # Stations outside the forecast grid.
])

StationTrajectory = collections.namedtuple('StationTrajectory', [
    'frame',  # DataFrame valid_time, forecast, observed.
    'mae',    # Mean absolute forecast - observation.
])


class _CellCache(object):
  """Nearest cells of station positions on one grid."""

  def __init__(self, grid):
    self.grid = grid
    self._cells = {}

  def __call__(self, lat, lon):
    key = (lat, lon)
    if key not in self._cells:
      if self.grid.contains(lat, lon):
        self._cells[key] = self.grid.nearest_cell(lat, lon)
      else:
        self._cells[key] = None
    return self._cells[key]


def _index(records):
  by_time = collections.defaultdict(list)
  for record in records:
    by_time[grids.to_utc(record.valid_time)].append(record)
  return by_time


def station_eval(forecasts, records, variables=stations_lib.VARIABLES):
  """RMSE of nearest-cell forecasts against station observations.

  Only forecasts initialized at 00Z and 12Z are used. Wind speed is taken
  from the forecast u10 and v10 before comparison.

  Args:
    forecasts: iterable of (init_time, [rollout.ForecastStep]) in physical
      units.
    records: StationRecords.
    variables: station variables to verify.

  Returns:
    StationEval. The table holds one row per (variable, month of the valid
    time, lead in days) with the unweighted RMSE over every matched station
    observation and the number of distinct stations behind it.
  """
  by_time = _index(r for r in records if r.variable in variables)
  matches = collections.OrderedDict()
  init_times = []
  n_skipped = 0
  outside = set()
  cells = None
  for init_time, steps in forecasts:
    init_time = grids.to_utc(init_time)
    if init_time.hour not in INIT_HOURS:
      n_skipped += 1
      continue
    init_times.append(init_time)
    for step in steps:
      state = step.state
      if cells is None or not cells.grid.same_as(state.grid):
        cells = _CellCache(state.grid)
      for record in by_time.get(grids.to_utc(state.valid_time), ()):
        cell = cells(record.lat, record.lon)
        if cell is None:
          outside.add(record.station_id)
          continue
        value = stations_lib.observed_value(state, record.variable, *cell)
        key = (record.variable, state.valid_time.month, step.lead_hours)
        matches.setdefault(key, []).append(
            StationMatch(record, cell, value, value - record.value))
  rows = []
  for (variable, month, lead_hours), group in sorted(matches.items()):
    errors = onp.array([m.error for m in group], onp.float64)
    rows.append((variable, month, lead_hours / 24.0,
                 float(math.sqrt((errors ** 2).mean())),
                 len(set(m.record.station_id for m in group))))
  if n_skipped:
    logging.info('Station evaluation skipped %d init times outside %s UTC',
                 n_skipped, '/'.join('%02dZ' % h for h in INIT_HOURS))
  if outside:
    logging.info('%d stations lie outside the forecast grid', len(outside))
  return StationEval(pd.DataFrame(rows, columns=TABLE_COLUMNS), matches,
                     init_times, n_skipped, len(outside))


def station_trajectory(forecasts, records, station_id, variable, lead_hours):
  """Forecast at one station and lead time next to its observations.

  Args:
    forecasts: iterable of (init_time, [rollout.ForecastStep]).
    records: StationRecords.
    station_id: the station.
    variable: station variable.
    lead_hours: lead time of the forecasts to extract.

  Returns:
    StationTrajectory sorted by valid time.

  Raises:
    ValueError: no observation of the station matches a forecast.
  """
  observed = {grids.to_utc(r.valid_time): r for r in records
              if r.station_id == station_id and r.variable == variable}
  rows = []
  cells = None
  for _, steps in forecasts:
    for step in steps:
      record = observed.get(grids.to_utc(step.state.valid_time))
      if step.lead_hours != lead_hours or record is None:
        continue
      if cells is None or not cells.grid.same_as(step.state.grid):
        cells = _CellCache(step.state.grid)
      cell = cells(record.lat, record.lon)
      if cell is None:
        raise ValueError('station %s lies outside the forecast grid' %
                         station_id)
      rows.append((step.state.valid_time,
                   stations_lib.observed_value(step.state, variable, *cell),
                   record.value))
  if not rows:
    raise ValueError('no %dh forecast matches an observation of %s %s' %
                     (lead_hours, station_id, variable))
  frame = pd.DataFrame(sorted(rows), columns=['valid_time', 'forecast',
                                              'observed'])
  mae = float((frame['forecast'] - frame['observed']).abs().mean())
  return StationTrajectory(frame, mae)
