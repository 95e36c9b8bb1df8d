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

"""Grids, variable sets and atmospheric states.

Grids are regular latitude-longitude grids of cell centres. Row 0 is the
northernmost row; a global grid of n_lat rows has spacing 180 / n_lat and its
first centre half a cell south of the pole, so no centre sits on a pole and
every latitude weight is positive. Sub-sampling every k-th centre with offset
(k - 1) / 2 lands exactly on the centres of the k-times coarser global grid.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import datetime

import numpy as onp
import pandas as pd

STEP = datetime.timedelta(hours=6)
STEP_HOURS = 6

PRESSURE_LEVELS = (50, 100, 150, 200, 250, 300, 400, 500, 600, 700, 850, 925,
                   1000)
TOY_LEVELS = (1000, 850, 500, 250, 50)
UPPER_AIR = ('z', 'q', 'u', 'v', 't')
SURFACE = ('t2m', 'u10', 'v10', 'msl')
# 10 m wind speed, derived from u10 and v10; observed at stations only.
WIND_SPEED = 'ws10'


class GridSpec(collections.namedtuple(
    'GridSpec', ['n_lat', 'n_lon', 'lat0', 'lon0', 'resolution'])):
  """Regular latitude-longitude grid of cell centres.

  Attributes:
    n_lat: number of latitude rows (north to south).
    n_lon: number of longitude columns (eastwards).
    lat0: latitude of row 0 in degrees.
    lon0: longitude of column 0 in degrees.
    resolution: spacing in degrees along both axes.
  """

  @classmethod
  def global_grid(cls, n_lat, n_lon=None):
    n_lon = 2 * n_lat if n_lon is None else n_lon
    resolution = 180.0 / n_lat
    if not onp.isclose(n_lon * resolution, 360.0):
      raise ValueError('global grid %dx%d does not have equal spacing' %
                       (n_lat, n_lon))
    return cls(n_lat, n_lon, 90.0 - resolution / 2, resolution / 2,
               resolution)

  @property
  def shape(self):
    return (self.n_lat, self.n_lon)

  @property
  def lats(self):
    return self.lat0 - self.resolution * onp.arange(self.n_lat)

  @property
  def lons(self):
    return onp.mod(self.lon0 + self.resolution * onp.arange(self.n_lon), 360.0)

  def validate(self):
    """Returns a list of problems with this grid (empty if valid)."""
    problems = []
    if self.n_lat < 1 or self.n_lon < 1:
      problems.append('grid dimensions must be positive: %s' % (self.shape,))
    if not self.resolution > 0:
      problems.append('grid spacing must be positive: %r' % self.resolution)
    elif self.n_lat >= 1:
      south = self.lat0 - self.resolution * (self.n_lat - 1)
      if self.lat0 > 90.0 + 1e-9 or south < -90.0 - 1e-9:
        problems.append('latitudes %g..%g leave [-90, 90]' % (self.lat0,
                                                              south))
      if self.n_lon * self.resolution > 360.0 + 1e-9:
        problems.append('longitudes wrap past 360 degrees')
    return problems

  def latitude_weights(self):
    """cos(lat) normalized to mean 1, float64 with one entry per row."""
    cos = onp.cos(onp.deg2rad(self.lats))
    return cos / cos.mean()

  def subgrid(self, k, row_offset, col_offset):
    """The grid of every k-th centre starting at (row_offset, col_offset)."""
    if self.n_lat % k or self.n_lon % k:
      raise ValueError('factor %d does not divide grid %s' % (k, self.shape))
    return GridSpec(self.n_lat // k, self.n_lon // k,
                    self.lat0 - row_offset * self.resolution,
                    self.lon0 + col_offset * self.resolution,
                    self.resolution * k)

  def coarsen(self, k):
    """The centre sub-grid, which for odd k is the k-times coarser grid."""
    return self.subgrid(k, (k - 1) // 2, (k - 1) // 2)

  def refine(self, k):
    """The k-times finer grid whose centre sub-grid is this grid."""
    offset = (k - 1) // 2
    resolution = self.resolution / k
    return GridSpec(self.n_lat * k, self.n_lon * k,
                    self.lat0 + offset * resolution,
                    self.lon0 - offset * resolution, resolution)

  def nearest_cell(self, lat, lon):
    """(row, col) of the cell centre closest to a point on the sphere.

    Distances are haversine great-circle distances; on ties the cell with
    the lower row-major index wins.

    Args:
      lat: latitude in degrees.
      lon: longitude in degrees, any range.

    Returns:
      (row, col) integers.
    """
    phi = onp.deg2rad(self.lats)[:, None]
    lam = onp.deg2rad(self.lons)[None, :]
    phi0, lam0 = onp.deg2rad(lat), onp.deg2rad(onp.mod(lon, 360.0))
    hav = (onp.sin((phi - phi0) / 2) ** 2 +
           onp.cos(phi) * onp.cos(phi0) * onp.sin((lam - lam0) / 2) ** 2)
    distance = 2 * onp.arcsin(onp.sqrt(onp.clip(hav, 0.0, 1.0)))
    row, col = onp.unravel_index(onp.argmin(distance), distance.shape)
    return int(row), int(col)

  def contains(self, lat, lon):
    """Whether a point lies inside the cells of this grid."""
    half = self.resolution / 2
    north, south = self.lat0 + half, self.lats[-1] - half
    if not south - 1e-9 <= lat <= north + 1e-9:
      return False
    if self.n_lon * self.resolution >= 360.0 - 1e-9:
      return True
    east = onp.mod(lon - (self.lon0 - half), 360.0)
    return east <= self.n_lon * self.resolution + 1e-9

  def same_as(self, other):
    return (self.shape == other.shape and
            onp.allclose([self.lat0, self.lon0, self.resolution],
                         [other.lat0, other.lon0, other.resolution]))


class Variable(collections.namedtuple('Variable', ['name', 'kind', 'level'])):
  """One channel: an upper-air variable on a pressure level, or a surface one.

  Attributes:
    name: variable name, e.g. 'z' or 't2m'.
    kind: 'pressure' or 'surface'.
    level: pressure level in hPa, or None for surface variables.
  """

  @property
  def channel_name(self):
    if self.kind == 'surface':
      return self.name
    return '%s%d' % (self.name, self.level)


class VariableSet(object):
  """Ordered list of channels of a state."""

  def __init__(self, variables):
    self._variables = tuple(Variable(*v) for v in variables)
    names = self.names
    if len(set(names)) != len(names):
      raise ValueError('duplicate channels in %s' % (names,))
    for v in self._variables:
      if v.kind not in ('pressure', 'surface'):
        raise ValueError('unknown variable kind %r' % (v.kind,))
      if (v.kind == 'pressure') != (v.level is not None):
        raise ValueError('%s: pressure variables need a level, surface '
                         'variables none' % v.name)

  @classmethod
  def canonical(cls):
    """5 upper-air variables on 13 levels plus 4 surface variables."""
    variables = [Variable(name, 'pressure', level) for name in UPPER_AIR
                 for level in PRESSURE_LEVELS]
    variables += [Variable(name, 'surface', None) for name in SURFACE]
    return cls(variables)

  @classmethod
  def toy(cls):
    """Geopotential on 5 levels plus t2m, u10 and v10."""
    variables = [Variable('z', 'pressure', level) for level in TOY_LEVELS]
    variables += [Variable(name, 'surface', None)
                  for name in ('t2m', 'u10', 'v10')]
    return cls(variables)

  @property
  def variables(self):
    return self._variables

  @property
  def names(self):
    return [v.channel_name for v in self._variables]

  def index(self, channel_name):
    try:
      return self.names.index(channel_name)
    except ValueError:
      raise KeyError('no channel %r in %s' % (channel_name, self.names))

  def __len__(self):
    return len(self._variables)

  def __iter__(self):
    return iter(self._variables)

  def __getitem__(self, i):
    return self._variables[i]

  def __eq__(self, other):
    return (isinstance(other, VariableSet) and
            self._variables == other.variables)

  def __ne__(self, other):
    return not self == other

  def __hash__(self):
    return hash(self._variables)

  def __repr__(self):
    return 'VariableSet(%s)' % ','.join(self.names)


def to_utc(value):
  """Converts a datetime, pandas timestamp or ISO string to aware UTC."""
  stamp = pd.Timestamp(value)
  if stamp.tzinfo is None:
    stamp = stamp.tz_localize('UTC')
  return stamp.tz_convert('UTC').to_pydatetime()


def format_time(value):
  return to_utc(value).strftime('%Y-%m-%dT%H:%M:%SZ')


def check_time(value):
  """Returns value as aware UTC, requiring a 6-hour boundary."""
  value = to_utc(value)
  if (value.hour % STEP_HOURS or value.minute or value.second or
      value.microsecond):
    raise ValueError('valid time %s is not on a 6-hour boundary' %
                     format_time(value))
  return value


class WeatherState(collections.namedtuple(
    'WeatherState',
    ['grid', 'variables', 'values', 'valid_time', 'normalization'])):
  """Gridded atmosphere at one valid time.

  Attributes:
    grid: GridSpec.
    variables: VariableSet with C channels.
    values: float32 array (C, n_lat, n_lon).
    valid_time: timezone-aware UTC datetime on a 6-hour boundary.
    normalization: None for physical units, else the `inputs.Normalizer`
      whose statistics were applied to the values.
  """

  def __new__(cls, grid, variables, values, valid_time, normalization=None):
    values = onp.asarray(values, dtype=onp.float32)
    expected = (len(variables), grid.n_lat, grid.n_lon)
    if values.shape != expected:
      raise ValueError('state values %s do not match %d channels on grid %s' %
                       (values.shape, len(variables), grid.shape))
    return super(WeatherState, cls).__new__(
        cls, grid, variables, values, check_time(valid_time), normalization)

  def with_values(self, values, normalization=None):
    return WeatherState(self.grid, self.variables, values, self.valid_time,
                        normalization)

  def channel(self, name):
    return self.values[self.variables.index(name)]
