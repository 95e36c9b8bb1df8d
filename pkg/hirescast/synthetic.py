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

"""Synthetic multi-resolution atmosphere.

Every channel is a fixed climate profile plus a seasonal cycle plus a few
travelling large-scale waves shared by all channels, plus a sub-grid pattern
that only the high-resolution grid can see. The sub-grid pattern is built from
carriers that are periodic with the coarsening factor k and vanish at the
centre cell of every k x k block, so the low-resolution field is exactly the
large-scale part. Its phase rotates in time, so predicting it needs
neighbouring high-resolution cells of different sub-grids.

The fields are closed-form functions of time, so any valid time can be
generated directly and the same seed always gives bitwise-identical values.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import datetime

import gin
import numpy as onp

from hirescast import backend
from hirescast import grids

_EPOCH = datetime.datetime(2000, 1, 1, tzinfo=datetime.timezone.utc)
_YEAR_DAYS = 365.2425

# Typical geopotential (m^2 s^-2) of each pressure level (hPa).
_GEOPOTENTIAL = {50: 201000., 100: 160000., 150: 133000., 200: 115000.,
                 250: 101000., 300: 89000., 400: 70000., 500: 55000.,
                 600: 41000., 700: 29000., 850: 14000., 925: 7000.,
                 1000: 1000.}


def physical_scale(variable):
  """(offset, scale) mapping unit-variance fields to physical units."""
  name, level = variable.name, variable.level
  if name == 'z':
    base = _GEOPOTENTIAL.get(level, 1000.0 + 200.0 * (1000 - level))
    return base, 300.0 + 0.004 * base
  if name == 't':
    return 220.0 + 65.0 * level / 1000.0, 6.0
  if name == 'q':
    base = 5e-3 * (level / 1000.0) ** 2
    return base, 0.4 * base
  if name == 'u':
    return 10.0 * (1.0 - level / 1000.0), 8.0
  if name == 'v':
    return 0.0, 6.0
  return {'t2m': (285.0, 10.0), 'u10': (0.0, 4.0), 'v10': (0.0, 4.0),
          'msl': (101325.0, 800.0)}.get(name, (0.0, 1.0))


def subsample_centers(values, k):
  """Takes the centre point of every k x k block of the last two axes."""
  if k % 2 == 0:
    raise ValueError('sub-sampling factor must be odd, got %d' % k)
  o = (k - 1) // 2
  return onp.ascontiguousarray(values[..., o::k, o::k])


def upsample_nearest(values, k):
  """Repeats every cell of the last two axes k times along each axis."""
  return onp.repeat(onp.repeat(values, k, axis=-2), k, axis=-1)


def energy_fraction_above_nyquist(field, k):
  """Share of 2-d spectral energy above the Nyquist of the k-coarser grid.

  Args:
    field: (..., H, W) array; spectra of leading entries are summed.
    k: coarsening factor.

  Returns:
    Energy with |wavenumber| above H / (2k) rows or W / (2k) columns,
    divided by the total energy.
  """
  field = onp.asarray(field, dtype=onp.float64)
  h, w = field.shape[-2:]
  power = onp.abs(onp.fft.fft2(field)) ** 2
  ky = onp.abs(onp.fft.fftfreq(h) * h)[:, None]
  kx = onp.abs(onp.fft.fftfreq(w) * w)[None, :]
  above = (ky > h / (2.0 * k)) | (kx > w / (2.0 * k))
  total = power.sum()
  if total == 0:
    return 0.0
  return float((power * above).sum() / total)


@gin.configurable(denylist=['seed', 'grid', 'factor', 'variables'])
class SyntheticAtmosphere(object):
  """Deterministic high-resolution atmosphere for one seed."""

  def __init__(self, seed, grid, factor, variables, n_modes=6,
               small_scale=0.5, small_scale_period=8.0):
    """Draws the atmosphere's parameters.

    Args:
      seed: integer seed.
      grid: high-resolution GridSpec.
      factor: odd coarsening factor k dividing both grid dimensions.
      variables: VariableSet.
      n_modes: number of travelling large-scale waves.
      small_scale: amplitude of the sub-grid pattern (unit-variance units).
      small_scale_period: steps for one rotation of the sub-grid phase.
    """
    if factor < 1 or factor % 2 == 0:
      raise ValueError('factor must be a positive odd integer, got %d' %
                       factor)
    if grid.n_lat % factor or grid.n_lon % factor:
      raise ValueError('factor %d does not divide grid %s' % (factor,
                                                              grid.shape))
    self._grid = grid
    self._factor = factor
    self._variables = variables
    self._small_period = small_scale_period
    rng = backend.random.generator(backend.random.get_prng(seed))
    n_channels = len(variables)
    # Waves: zonal wavenumber, meridional half-waves, amplitude, phase and
    # phase speed in radians per 6-hour step.
    self._zonal = rng.integers(1, 5, size=n_modes)
    self._meridional = rng.integers(1, 4, size=n_modes)
    self._amplitude = rng.uniform(0.5, 1.0, size=n_modes) / onp.sqrt(n_modes)
    self._phase = rng.uniform(0.0, 2 * onp.pi, size=n_modes)
    self._speed = (rng.uniform(0.1, 0.3, size=n_modes) *
                   rng.choice([-1.0, 1.0], size=n_modes))
    self._mix = rng.standard_normal((n_channels, n_modes))
    self._profile = rng.uniform(0.5, 1.5, size=n_channels)
    self._seasonal = 0.3 * rng.standard_normal(n_channels)
    self._small = small_scale * rng.uniform(0.5, 1.0, size=n_channels) * (
        rng.choice([-1.0, 1.0], size=n_channels))
    names = [v.name for v in variables]
    for i, name in enumerate(names):
      if name == 't2m':
        self._seasonal[i] = -1.0
    scales = [physical_scale(v) for v in variables]
    self._offset = onp.array([s[0] for s in scales])[:, None, None]
    self._scale = onp.array([s[1] for s in scales])[:, None, None]

    lats = grid.lats
    self._y = ((90.0 - lats) / 180.0)[:, None]
    self._sin_lat = onp.sin(onp.deg2rad(lats))[:, None]
    self._lon = onp.deg2rad(grid.lons)[None, :]
    centre = (factor - 1) / 2.0
    rows = onp.arange(grid.n_lat) % factor - centre
    cols = onp.arange(grid.n_lon) % factor - centre
    self._carrier_rows = onp.sin(2 * onp.pi * rows / factor)[:, None]
    self._carrier_cols = onp.sin(2 * onp.pi * cols / factor)[None, :]

  @property
  def grid(self):
    return self._grid

  @property
  def factor(self):
    return self._factor

  @property
  def variables(self):
    return self._variables

  def _modes(self, steps):
    waves = []
    for m in range(len(self._zonal)):
      meridional = onp.sin(self._meridional[m] * onp.pi * self._y)
      zonal = onp.cos(self._zonal[m] * self._lon - self._speed[m] * steps +
                      self._phase[m])
      waves.append(meridional * zonal)
    return onp.stack(waves)

  def large_scale(self, valid_time):
    """The resolved part, in unit-variance units, (C, H, W) float64."""
    valid_time = grids.check_time(valid_time)
    steps = (valid_time - _EPOCH).total_seconds() / (6 * 3600.0)
    days = (valid_time - _EPOCH).total_seconds() / 86400.0
    modes = self._modes(steps)
    waves = onp.tensordot(self._mix * self._amplitude, modes, axes=1)
    profile = self._profile[:, None, None] * -onp.cos(2 * onp.pi * self._y)
    season = (self._seasonal[:, None, None] * self._sin_lat *
              onp.cos(2 * onp.pi * days / _YEAR_DAYS))
    return profile + season + waves, modes, steps

  def small_scale(self, modes, steps):
    """The sub-grid part, (C, H, W) float64; zero when the factor is 1."""
    envelope = 1.0 + 0.5 * onp.tanh(2.0 * modes[0])
    phase = 2 * onp.pi * steps / self._small_period + 0.5 * modes[1]
    pattern = envelope * (onp.cos(phase) * self._carrier_rows +
                          onp.sin(phase) * self._carrier_cols)
    return self._small[:, None, None] * pattern[None]

  def state(self, valid_time):
    """High-resolution WeatherState in physical units."""
    large, modes, steps = self.large_scale(valid_time)
    field = large + self.small_scale(modes, steps)
    values = (self._offset + self._scale * field).astype(onp.float32)
    return grids.WeatherState(self._grid, self._variables, values, valid_time)

  def low_resolution(self, state):
    """The k-stride centre sub-sample of a high-resolution state."""
    return grids.WeatherState(self._grid.coarsen(self._factor),
                              state.variables,
                              subsample_centers(state.values, self._factor),
                              state.valid_time)

  def trajectory(self, start_time, n_steps):
    """HR and LR states at start_time + 6h * s for s in range(n_steps)."""
    start_time = grids.check_time(start_time)
    hr = [self.state(start_time + s * grids.STEP) for s in range(n_steps)]
    return hr, [self.low_resolution(s) for s in hr]


def generate_synthetic(seed, grid_hr, k, n_steps, variables,
                       start_time=datetime.datetime(2016, 1, 1)):
  """Generates paired high- and low-resolution trajectories.

  Args:
    seed: integer seed; equal seeds give bitwise-identical trajectories.
    grid_hr: high-resolution GridSpec.
    k: odd coarsening factor.
    n_steps: number of 6-hourly states.
    variables: VariableSet.
    start_time: valid time of the first state.

  Returns:
    (hr_trajectory, lr_trajectory), two lists of WeatherState.
  """
  if n_steps < 1:
    raise ValueError('n_steps must be positive, got %d' % n_steps)
  atmosphere = SyntheticAtmosphere(seed, grid_hr, k, variables)
  return atmosphere.trajectory(start_time, n_steps)
