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

"""Tests for hirescast.verify.stations."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import math

from absl.testing import absltest
import numpy as onp

from hirescast import grids
from hirescast import rollout
from hirescast import stations as stations_lib
from hirescast.verify import stations

GRID = grids.GridSpec.global_grid(8)


def _forecasts(init_times, n_steps, seed=0, grid=GRID):
  rng = onp.random.RandomState(seed)
  variables = grids.VariableSet.toy()
  forecasts = []
  for init_time in init_times:
    init_time = grids.to_utc(init_time)
    steps = []
    for t in range(1, n_steps + 1):
      state = grids.WeatherState(grid, variables,
                                 rng.randn(len(variables), *grid.shape),
                                 init_time + t * grids.STEP)
      steps.append(rollout.ForecastStep(t, rollout.lead_hours(t), state))
    forecasts.append((init_time, steps))
  return forecasts


def _nearest(grid, lat, lon):
  """Brute-force haversine search over every cell centre."""
  best, best_cell = None, None
  for i, clat in enumerate(grid.lats):
    for j, clon in enumerate(grid.lons):
      p1, p2 = math.radians(lat), math.radians(clat)
      dl = math.radians(clon - lon)
      hav = (math.sin((p2 - p1) / 2) ** 2 +
             math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2)
      d = 2 * math.asin(math.sqrt(min(max(hav, 0.0), 1.0)))
      if best is None or d < best:
        best, best_cell = d, (i, j)
  return best_cell


class StationEvalTest(absltest.TestCase):

  def test_station_at_cell_centre(self):
    forecasts = _forecasts(['2020-01-01T00:00Z'], 2)
    lat, lon = GRID.lats[2], GRID.lons[5]
    records = []
    for _, steps in forecasts:
      for step in steps:
        value = float(step.state.channel('t2m')[2, 5])
        records.append(stations_lib.StationRecord(
            'A', lat, lon, step.state.valid_time, 't2m', value))
    result = stations.station_eval(forecasts, records, ['t2m'])
    self.assertEqual(list(result.table.columns), list(stations.TABLE_COLUMNS))
    self.assertEqual(list(result.table['rmse']), [0.0, 0.0])
    self.assertEqual(list(result.table['lead_days']), [0.25, 0.5])
    self.assertEqual(list(result.table['n_stations']), [1, 1])

    shifted = [r._replace(value=r.value - 1.5) for r in records]
    result = stations.station_eval(forecasts, shifted, ['t2m'])
    for value in result.table['rmse']:
      self.assertAlmostEqual(value, 1.5, delta=1e-12)

  def test_matches_brute_force(self):
    forecasts = _forecasts(['2020-03-31T12:00Z'], 4, seed=1)
    rng = onp.random.RandomState(2)
    lats = rng.uniform(-89.0, 89.0, 20)
    lons = rng.uniform(0.0, 360.0, 20)
    records = []
    expected = {}
    for _, steps in forecasts:
      for step in steps:
        state = step.state
        for i in range(20):
          obs = float(rng.randn())
          records.append(stations_lib.StationRecord(
              'S%d' % i, lats[i], lons[i], state.valid_time, grids.WIND_SPEED,
              obs))
          row, col = _nearest(GRID, lats[i], lons[i])
          u = float(state.channel('u10')[row, col])
          v = float(state.channel('v10')[row, col])
          key = (state.valid_time.month, step.lead_hours / 24.0)
          expected.setdefault(key, []).append(
              (math.sqrt(u * u + v * v) - obs) ** 2)
    result = stations.station_eval(forecasts, records)
    self.assertLen(result.table, 4)
    for row in result.table.itertuples(index=False):
      self.assertEqual(row.variable, grids.WIND_SPEED)
      errors = expected[(row.month, row.lead_days)]
      self.assertAlmostEqual(row.rmse, math.sqrt(sum(errors) / len(errors)),
                             delta=1e-9)
      self.assertEqual(row.n_stations, 20)
    # Steps valid on 1 April are scored under April.
    self.assertEqual(sorted(set(result.table['month'])), [3, 4])

  def test_only_00z_and_12z_inits(self):
    forecasts = _forecasts(['2020-01-01T00:00Z', '2020-01-01T06:00Z',
                            '2020-01-01T12:00Z', '2020-01-01T18:00Z'], 1)
    records = [stations_lib.StationRecord('A', 0.0, 0.0, steps[0].state.
                                          valid_time, 't2m', 0.0)
               for _, steps in forecasts]
    result = stations.station_eval(forecasts, records, ['t2m'])
    self.assertEqual([t.hour for t in result.init_times], [0, 12])
    self.assertEqual(result.n_skipped_inits, 2)
    (_, group), = result.matches.items()
    self.assertLen(group, 2)

  def test_stations_outside_grid(self):
    grid = grids.GridSpec(4, 4, 50.0, 10.0, 1.0)
    forecasts = _forecasts(['2020-01-01T00:00Z'], 1, grid=grid)
    valid_time = forecasts[0][1][0].state.valid_time
    records = [
        stations_lib.StationRecord('in', 49.0, 11.0, valid_time, 't2m', 0.0),
        stations_lib.StationRecord('out', 0.0, 11.0, valid_time, 't2m', 0.0),
    ]
    result = stations.station_eval(forecasts, records, ['t2m'])
    self.assertEqual(result.n_outside, 1)
    self.assertEqual(list(result.table['n_stations']), [1])
    (match,), = result.matches.values()
    self.assertEqual(match.record.station_id, 'in')
    self.assertEqual(match.cell, (1, 1))


class StationTrajectoryTest(absltest.TestCase):

  def test_trajectory(self):
    forecasts = _forecasts(['2020-01-01T00:00Z', '2020-01-01T12:00Z'], 4)
    lat, lon = GRID.lats[3], GRID.lons[0]
    records = []
    for _, steps in forecasts:
      for step in steps:
        records.append(stations_lib.StationRecord(
            'A', lat, lon, step.state.valid_time, 't2m',
            float(step.state.channel('t2m')[3, 0]) + 0.25))
    result = stations.station_trajectory(forecasts, records, 'A', 't2m', 12)
    self.assertLen(result.frame, 2)
    self.assertEqual(list(result.frame['valid_time']),
                     sorted(result.frame['valid_time']))
    self.assertAlmostEqual(result.mae, 0.25, delta=1e-9)

  def test_unknown_station(self):
    forecasts = _forecasts(['2020-01-01T00:00Z'], 1)
    with self.assertRaises(ValueError):
      stations.station_trajectory(forecasts, [], 'A', 't2m', 6)


if __name__ == '__main__':
  absltest.main()
