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

"""Surface station observations: CSV ingestion and synthetic stations."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import math

from absl import logging
import numpy as onp
import pandas as pd

from hirescast import backend
from hirescast import grids

COLUMNS = ('station_id', 'lat', 'lon', 'time_iso8601', 'variable', 'value')
VARIABLES = ('t2m', grids.WIND_SPEED)


class StationRecord(collections.namedtuple(
    'StationRecord',
    ['station_id', 'lat', 'lon', 'valid_time', 'variable', 'value'])):
  """One point observation in SI units; lon is in [0, 360)."""


IngestResult = collections.namedtuple(
    'IngestResult', ['records', 'n_rows', 'n_nonfinite', 'n_malformed'])


def _parse_row(row):
  """Returns a StationRecord, or raises ValueError naming the bad field."""
  station_id = row['station_id'].strip()
  if not station_id:
    raise ValueError('empty station_id')
  lat, lon = float(row['lat']), float(row['lon'])
  if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
    raise ValueError('latitude %r outside [-90, 90]' % row['lat'])
  if not math.isfinite(lon):
    raise ValueError('longitude %r is not finite' % row['lon'])
  if not row['time_iso8601'].strip():
    raise ValueError('empty time')
  time = grids.to_utc(row['time_iso8601'].strip())
  variable = row['variable'].strip()
  if variable not in VARIABLES:
    raise ValueError('unknown variable %r' % variable)
  value = float(row['value'])
  return StationRecord(station_id, lat, float(onp.mod(lon, 360.0)), time,
                       variable, value)


def ingest_stations(csv_path, strict=False):
  """Reads station observations from a CSV file.

  The header must be station_id,lat,lon,time_iso8601,variable,value.

  Args:
    csv_path: path of the CSV file.
    strict: raise on the first malformed row instead of skipping it.

  Returns:
    IngestResult with the parsed records, the number of data rows, and the
    counts of rows dropped for non-finite values and for malformed fields.

  Raises:
    ValueError: the header is wrong, or strict and a row is malformed.
  """
  bad_lines = []

  def skip_bad_line(fields):
    bad_lines.append(fields)
    if strict:
      raise ValueError('%s: row %r has %d fields, expected %d' %
                       (csv_path, fields, len(fields), len(COLUMNS)))
    return None

  frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False,
                      engine='python', on_bad_lines=skip_bad_line)
  if tuple(c.strip() for c in frame.columns) != COLUMNS:
    raise ValueError('%s: header %s, expected %s' %
                     (csv_path, ','.join(frame.columns), ','.join(COLUMNS)))
  frame.columns = list(COLUMNS)
  records = []
  n_nonfinite = 0
  n_malformed = len(bad_lines)
  for position, row in enumerate(frame.to_dict('records')):
    try:
      if any(not isinstance(row[c], str) for c in COLUMNS):
        raise ValueError('missing fields')
      record = _parse_row(row)
    except ValueError as e:
      if strict:
        raise ValueError('%s: data row %d: %s' % (csv_path, position + 1, e))
      n_malformed += 1
      continue
    if not math.isfinite(record.value):
      n_nonfinite += 1
      continue
    records.append(record)
  n_rows = len(frame) + len(bad_lines)
  logging.info('Read %d station records from %s (%d non-finite, %d '
               'malformed rows dropped)', len(records), csv_path, n_nonfinite,
               n_malformed)
  return IngestResult(records, n_rows, n_nonfinite, n_malformed)


def write_stations(records, csv_path):
  frame = pd.DataFrame(
      [(r.station_id, r.lat, r.lon, grids.format_time(r.valid_time),
        r.variable, r.value) for r in records], columns=list(COLUMNS))
  frame.to_csv(csv_path, index=False)


def observed_value(state, variable, row, col):
  """A station variable read from one cell of a state, float64."""
  if variable == 't2m':
    return float(state.values[state.variables.index('t2m'), row, col])
  if variable == grids.WIND_SPEED:
    u = float(state.values[state.variables.index('u10'), row, col])
    v = float(state.values[state.variables.index('v10'), row, col])
    return math.sqrt(u * u + v * v)
  raise ValueError('unknown station variable %r' % variable)


def synthesize_stations(states, n_stations, seed, noise_std=0.0):
  """Places stations at random points and observes a trajectory there.

  Args:
    states: WeatherStates holding t2m, u10 and v10; every state gives one
      observation per station and variable.
    n_stations: number of stations.
    seed: integer seed for positions and noise.
    noise_std: standard deviation of Gaussian observation noise.

  Returns:
    A list of StationRecord ordered by time, then station, then variable.
  """
  prng = backend.random.get_prng(seed)
  rng = backend.random.generator(prng)
  # Uniform on the sphere.
  lats = onp.rad2deg(onp.arcsin(rng.uniform(-1.0, 1.0, n_stations)))
  lons = rng.uniform(0.0, 360.0, n_stations)
  records = []
  for state in states:
    cells = [state.grid.nearest_cell(lat, lon)
             for lat, lon in zip(lats, lons)]
    for i, (row, col) in enumerate(cells):
      for variable in VARIABLES:
        value = observed_value(state, variable, row, col)
        if noise_std:
          value += noise_std * rng.standard_normal()
        records.append(StationRecord('S%03d' % i, float(lats[i]),
                                     float(lons[i]), state.valid_time,
                                     variable, value))
  return records
