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

"""Tests for hirescast.stations."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import math
import os

from absl.testing import absltest
import numpy as onp

from hirescast import grids
from hirescast import stations

_HEADER = 'station_id,lat,lon,time_iso8601,variable,value\n'


class IngestTest(absltest.TestCase):

  def _write(self, text):
    path = os.path.join(self.create_tempdir().full_path, 'obs.csv')
    with open(path, 'w') as f:
      f.write(text)
    return path

  def test_single_row(self):
    path = self._write(_HEADER + 'S1,40.7,286.0,2022-12-23T12:00:00Z,t2m,'
                       '250.1\n')
    result = stations.ingest_stations(path)
    self.assertLen(result.records, 1)
    record = result.records[0]
    self.assertEqual(record.station_id, 'S1')
    self.assertEqual(record.lon, 286.0)
    self.assertEqual(record.value, 250.1)
    self.assertEqual(grids.format_time(record.valid_time),
                     '2022-12-23T12:00:00Z')
    self.assertEqual((result.n_rows, result.n_nonfinite, result.n_malformed),
                     (1, 0, 0))

  def test_longitude_normalized(self):
    path = self._write(_HEADER + 'S1,40.7,-74.0,2022-12-23T12:00:00Z,'
                       'ws10,3.0\n')
    self.assertEqual(stations.ingest_stations(path).records[0].lon, 286.0)

  def test_latitude_out_of_range(self):
    path = self._write(_HEADER + 'S1,95,10,2022-12-23T12:00:00Z,t2m,250\n')
    result = stations.ingest_stations(path)
    self.assertEmpty(result.records)
    self.assertEqual(result.n_malformed, 1)
    with self.assertRaisesRegex(ValueError, 'latitude'):
      stations.ingest_stations(path, strict=True)

  def test_corrupt_rows_counted(self):
    rng = onp.random.RandomState(0)
    lines = []
    for i in range(100):
      lines.append('S%d,%.3f,%.3f,2022-01-01T%02d:00:00Z,t2m,%.2f' % (
          i, rng.uniform(-80, 80), rng.uniform(0, 360), 6 * (i % 4),
          rng.uniform(240, 300)))
    lines[10] = 'S10,12.0,20.0,2022-01-01T00:00:00Z,t2m,abc'
    lines[50] = 'S50,95.0,20.0,2022-01-01T00:00:00Z,t2m,280.0'
    lines[90] = 'S90,12.0,20.0,2022-01-01T00:00:00Z,t2m,nan'
    result = stations.ingest_stations(self._write(_HEADER +
                                                  '\n'.join(lines) + '\n'))
    self.assertLen(result.records, 97)
    self.assertEqual(result.n_rows, 100)
    self.assertEqual(result.n_malformed, 2)
    self.assertEqual(result.n_nonfinite, 1)

  def test_wrong_header(self):
    path = self._write('id,lat,lon,time,variable,value\n')
    with self.assertRaises(ValueError):
      stations.ingest_stations(path)

  def test_written_records_ingest_back(self):
    record = stations.StationRecord('S7', -33.9, 18.4,
                                    grids.to_utc('2022-06-01T12:00:00Z'),
                                    grids.WIND_SPEED, 7.25)
    path = os.path.join(self.create_tempdir().full_path, 'out.csv')
    stations.write_stations([record], path)
    self.assertEqual(stations.ingest_stations(path).records, [record])


class SynthesizeTest(absltest.TestCase):

  def test_observations_come_from_nearest_cell(self):
    grid = grids.GridSpec.global_grid(8)
    variables = grids.VariableSet.toy()
    values = onp.random.RandomState(1).randn(len(variables), 8, 16)
    state = grids.WeatherState(grid, variables, values, '2022-01-01T12:00:00Z')
    records = stations.synthesize_stations([state], 5, seed=2)
    self.assertLen(records, 10)
    for record in records:
      row, col = grid.nearest_cell(record.lat, record.lon)
      if record.variable == 't2m':
        expected = state.channel('t2m')[row, col]
      else:
        expected = math.hypot(state.channel('u10')[row, col],
                              state.channel('v10')[row, col])
      self.assertAlmostEqual(record.value, expected, places=5)
    self.assertEqual(sorted(set(r.variable for r in records)),
                     sorted(stations.VARIABLES))

  def test_wind_speed_name(self):
    grid = grids.GridSpec.global_grid(8)
    variables = grids.VariableSet.toy()
    values = onp.ones((len(variables), 8, 16))
    values[variables.index('u10')] = 3.0
    values[variables.index('v10')] = 4.0
    state = grids.WeatherState(grid, variables, values, '2022-01-01T12:00:00Z')
    self.assertIn(grids.WIND_SPEED, stations.VARIABLES)
    self.assertAlmostEqual(
        stations.observed_value(state, grids.WIND_SPEED, 2, 3), 5.0)
    with self.assertRaisesRegex(ValueError, 'unknown station variable'):
      stations.observed_value(state, 'wind_speed', 2, 3)


if __name__ == '__main__':
  absltest.main()
