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

"""Latitude-weighted verification scores.

Every score takes fields shaped (T, n_lat, n_lon), one entry per init time,
and per-latitude weights; it reduces each init time spatially and then
averages over init times. All arithmetic runs in float64.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

from absl import logging
import numpy as onp
import pandas as pd

from hirescast import backend

METRICS = ('rmse', 'acc', 'bias', 'activity')
COLUMNS = ('variable', 'lead_hours', 'metric', 'value', 'count')


def latitude_weights(grid):
  """n_lat * cos(lat) / sum(cos(lat)), one weight per row of the grid."""
  cos = onp.cos(onp.deg2rad(onp.asarray(grid.lats, onp.float64)))
  return grid.n_lat * cos / cos.sum()


def _fields(name, weights, *arrays):
  arrays = [onp.asarray(a, onp.float64) for a in arrays]
  shape = arrays[0].shape
  for a in arrays[1:]:
    if a.shape != shape:
      raise backend.DimensionError(name, shape, a.shape)
  if len(shape) != 3:
    raise backend.ShapeError('%s expects (T, n_lat, n_lon) fields, got %s' %
                             (name, shape))
  if not shape[0]:
    raise ValueError('%s needs at least one init time' % name)
  weights = onp.asarray(weights, onp.float64)
  if weights.shape != (shape[1],):
    raise backend.DimensionError(name, shape, weights.shape,
                                 'one weight per latitude row')
  return arrays, weights[:, None]


def _spatial_mean(values, weights):
  return (weights * values).mean(axis=(-2, -1))


def rmse(forecasts, targets, weights):
  """Time mean of the weighted spatial root-mean-square error."""
  (f, o), w = _fields('rmse', weights, forecasts, targets)
  return float(onp.sqrt(_spatial_mean((o - f) ** 2, w)).mean())


def acc_per_time(forecasts, targets, climatology, weights):
  """Weighted anomaly correlation per init time; NaN where undefined."""
  climatology = onp.broadcast_to(climatology, onp.shape(forecasts))
  (f, o, c), w = _fields('acc', weights, forecasts, targets, climatology)
  fa, oa = f - c, o - c
  numerator = (w * fa * oa).sum(axis=(-2, -1))
  denominator = onp.sqrt((w * fa ** 2).sum(axis=(-2, -1)) *
                         (w * oa ** 2).sum(axis=(-2, -1)))
  values = onp.full(numerator.shape, onp.nan)
  valid = denominator > 0
  values[valid] = numerator[valid] / denominator[valid]
  return values


def acc(forecasts, targets, climatology, weights):
  """Time mean of the weighted anomaly correlation.

  Init times where either anomaly has zero variance are skipped.

  Args:
    forecasts: (T, n_lat, n_lon) forecasts.
    targets: (T, n_lat, n_lon) verifying fields.
    climatology: climatology at the valid times, (T, n_lat, n_lon) or
      (n_lat, n_lon).
    weights: (n_lat,) latitude weights.

  Returns:
    float in [-1, 1].

  Raises:
    ValueError: no init time has a defined correlation.
  """
  values = acc_per_time(forecasts, targets, climatology, weights)
  valid = ~onp.isnan(values)
  if not valid.any():
    raise ValueError('every init time has a zero anomaly variance')
  if not valid.all():
    logging.info('ACC skipped %d of %d init times with zero anomaly '
                 'variance', int((~valid).sum()), len(values))
  return float(values[valid].mean())


def bias(forecasts, targets, weights):
  """Time mean of the weighted spatial mean of target - forecast, signed."""
  (f, o), w = _fields('bias', weights, forecasts, targets)
  return float(_spatial_mean(o - f, w).mean())


def activity(forecasts, climatology, weights, targets=None, mode='anomaly'):
  """Time mean of the weighted spatial standard deviation of an anomaly.

  Args:
    forecasts: (T, n_lat, n_lon) forecasts.
    climatology: climatology at the valid times.
    weights: (n_lat,) latitude weights.
    targets: verifying fields, needed by mode 'error'.
    mode: 'anomaly' measures forecast - climatology; 'error' measures
      target - forecast.

  Returns:
    float >= 0.
  """
  if mode == 'anomaly':
    climatology = onp.broadcast_to(climatology, onp.shape(forecasts))
    (f, c), w = _fields('activity', weights, forecasts, climatology)
    anomaly = f - c
  elif mode == 'error':
    if targets is None:
      raise ValueError('activity mode "error" needs targets')
    (f, o), w = _fields('activity', weights, forecasts, targets)
    anomaly = o - f
  else:
    raise ValueError('unknown activity mode %r' % mode)
  centred = anomaly - _spatial_mean(anomaly, w)[:, None, None]
  return float(onp.sqrt(_spatial_mean(centred ** 2, w)).mean())


Score = collections.namedtuple('Score', COLUMNS)


class ScoreReport(object):
  """Scores of one forecast series per (variable, lead time, metric)."""

  def __init__(self, series, scores=(), grid=None, period=None):
    self.series = series
    self.scores = list(scores)
    self.grid = grid
    self.period = period

  def __len__(self):
    return len(self.scores)

  @property
  def metrics(self):
    return sorted(set(s.metric for s in self.scores))

  @property
  def variables(self):
    seen = collections.OrderedDict((s.variable, None) for s in self.scores)
    return list(seen)

  def curve(self, variable, metric):
    """[(lead_hours, value)] sorted by lead time."""
    return sorted((s.lead_hours, s.value) for s in self.scores
                  if s.variable == variable and s.metric == metric)

  def value(self, variable, lead_hours, metric):
    for s in self.scores:
      if (s.variable, s.lead_hours, s.metric) == (variable, lead_hours,
                                                   metric):
        return s.value
    raise KeyError((variable, lead_hours, metric))

  def to_frame(self):
    return pd.DataFrame([tuple(s) for s in self.scores], columns=COLUMNS)

  @classmethod
  def from_frame(cls, series, frame):
    scores = [Score(str(r.variable), int(r.lead_hours), str(r.metric),
                    float(r.value), int(r.count))
              for r in frame.itertuples(index=False)]
    return cls(series, scores)


def _channel_fields(states, channel):
  return onp.stack([s.values[s.variables.index(channel)] for s in states])


def score_forecasts(series, forecasts, analyses, climatology, channels=None,
                    activity_mode='anomaly'):
  """Scores rollouts against analyses.

  Args:
    series: name of the forecast series.
    forecasts: iterable of (init_time, [rollout.ForecastStep]).
    analyses: dict from valid time to the verifying WeatherState.
    climatology: climatology.Climatology on the forecast grid.
    channels: channel names to score; all channels if None.
    activity_mode: see `activity`.

  Returns:
    ScoreReport. Forecasts without a verifying analysis are left out; the
    count column holds the number of init times behind each score.
  """
  by_lead = collections.OrderedDict()
  grid = None
  for _, steps in forecasts:
    for step in steps:
      truth = analyses.get(step.state.valid_time)
      if truth is None:
        continue
      if grid is None:
        grid = step.state.grid
      for state in (step.state, truth):
        if not state.grid.same_as(grid):
          raise ValueError('%s: grids %s and %s differ' % (
              series, state.grid.shape, grid.shape))
      by_lead.setdefault(step.lead_hours, []).append((step.state, truth))
  if grid is None:
    raise ValueError('%s: no forecast has a verifying analysis' % series)
  if not climatology.grid.same_as(grid):
    raise ValueError('climatology grid %s does not match the forecast grid '
                     '%s' % (climatology.grid.shape, grid.shape))
  weights = latitude_weights(grid)
  scores = []
  valid_times = set()
  for lead in sorted(by_lead):
    pairs = by_lead[lead]
    predicted = [p for p, _ in pairs]
    verifying = [t for _, t in pairs]
    times = [t.valid_time for t in verifying]
    valid_times.update(times)
    clim_states = [climatology.state(t) for t in times]
    names = channels or predicted[0].variables.names
    for channel in names:
      f = _channel_fields(predicted, channel)
      o = _channel_fields(verifying, channel)
      c = _channel_fields(clim_states, channel)
      n = len(pairs)
      per_time = acc_per_time(f, o, c, weights)
      n_acc = int((~onp.isnan(per_time)).sum())
      scores.append(Score(channel, lead, 'rmse', rmse(f, o, weights), n))
      if n_acc:
        scores.append(Score(channel, lead, 'acc',
                            float(onp.nanmean(per_time)), n_acc))
      scores.append(Score(channel, lead, 'bias', bias(f, o, weights), n))
      scores.append(Score(channel, lead, 'activity',
                          activity(f, c, weights, o, activity_mode), n))
  logging.info('Scored %s over %d lead times', series, len(by_lead))
  return ScoreReport(series, scores, grid,
                     (min(valid_times), max(valid_times)))


def scorecard(model, baseline):
  """Share of (variable, lead) targets where model beats baseline.

  Lower RMSE and higher ACC count as better.

  Args:
    model: ScoreReport.
    baseline: ScoreReport.

  Returns:
    pandas DataFrame with columns metric, n_targets, n_better, fraction and
    a final row 'all' over both metrics.
  """
  better = {'rmse': lambda m, b: m < b, 'acc': lambda m, b: m > b}
  reference = {(s.variable, s.lead_hours, s.metric): s.value
               for s in baseline.scores}
  rows = []
  totals = [0, 0]
  for metric in ('rmse', 'acc'):
    n_targets = n_better = 0
    for s in model.scores:
      key = (s.variable, s.lead_hours, s.metric)
      if s.metric != metric or key not in reference:
        continue
      n_targets += 1
      n_better += int(better[metric](s.value, reference[key]))
    rows.append((metric, n_targets, n_better,
                 n_better / n_targets if n_targets else float('nan')))
    totals[0] += n_targets
    totals[1] += n_better
  rows.append(('all', totals[0], totals[1],
               totals[1] / totals[0] if totals[0] else float('nan')))
  return pd.DataFrame(rows, columns=['metric', 'n_targets', 'n_better',
                                     'fraction'])
