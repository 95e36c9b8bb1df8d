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

"""Pipeline stages from synthetic data to verification reports.

Every stage reads its predecessors' artifacts under `RunConfig.work_dir` and
writes its own into one sub-directory:

    data/        <split>/<YYYYMMDDHH>.ghr, <split>.manifest, stats.ckpt,
                 climatology.ckpt, stations.csv
    pretrain/    meta.ckpt, loss.csv
    dctl/        res.ckpt, loss.csv, validation.csv
    lora/        lora.ckpt, loss.csv
    forecast/    <YYYYMMDDHH>/state_<LLL>h.ghr
    evaluate/    <series>_scores.csv, <metric>.svg
    stations/    station_rmse.csv
    report/      scorecard.csv, heatmap_t2m.svg

Each directory also receives the operative gin config.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import datetime
import os
import re

from absl import logging
import gin
import pandas as pd

from hirescast import climatology as climatology_lib
from hirescast import grids
from hirescast import inputs as inputs_lib
from hirescast import rollout
from hirescast import state_io
from hirescast import stations as stations_lib
from hirescast import synthetic
from hirescast import trainer_lib
from hirescast.models import meta_model
from hirescast.verify import metrics
from hirescast.verify import report as report_lib
from hirescast.verify import stations as verify_stations

STAGES = ('gen-data', 'pretrain', 'dctl', 'lora-tune', 'forecast', 'evaluate',
          'station-eval', 'report')
STAGE_DIRS = {
    'gen-data': 'data',
    'pretrain': 'pretrain',
    'dctl': 'dctl',
    'lora-tune': 'lora',
    'forecast': 'forecast',
    'evaluate': 'evaluate',
    'station-eval': 'stations',
    'report': 'report',
}
BASELINES = ('persistence', 'climatology')

_TIME_FORMAT = '%Y%m%d%H'
_STATE_FILE = 'state_%03dh.ghr'
_STATE_PATTERN = re.compile(r'^state_(\d+)h\.ghr$')


class MissingPrerequisiteError(Exception):
  """A stage ran before the stage producing its inputs.

  Attributes:
    stage: name of the stage that has to run first.
    path: the missing artifact.
  """

  def __init__(self, stage, path, needed_by):
    self.stage = stage
    self.path = path
    super(MissingPrerequisiteError, self).__init__(
        '%s needs %s; run the "%s" stage first' % (needed_by, path, stage))


def stage_dir(run, stage):
  return os.path.join(run.work_dir, STAGE_DIRS[stage])


def _require(run, stage, name, needed_by):
  path = os.path.join(stage_dir(run, stage), name)
  if not os.path.exists(path):
    raise MissingPrerequisiteError(stage, path, needed_by)
  return path


def _output_dir(run, stage):
  path = stage_dir(run, stage)
  if not os.path.isdir(path):
    os.makedirs(path)
  return path


def _manifest(run, split, needed_by):
  return state_io.read_manifest(
      _require(run, 'gen-data', split + '.manifest', needed_by))


def _normalizer(run, needed_by):
  return inputs_lib.Normalizer.load(
      _require(run, 'gen-data', 'stats.ckpt', needed_by))


def _holdout(trajectories, min_length):
  """Splits the last quarter (at least min_length states) off every run."""
  train, held = [], []
  for trajectory in trajectories:
    n = max(len(trajectory) // 4, min_length)
    if len(trajectory) - n < 2:
      raise ValueError('a run of %d states is too short to hold out %d' %
                       (len(trajectory), n))
    train.append(trajectory[:-n])
    held.append(trajectory[-n:])
  return train, held


def _write_split(run, split, states):
  directory = os.path.join(stage_dir(run, 'gen-data'), split)
  if not os.path.isdir(directory):
    os.makedirs(directory)
  entries = []
  grid = variables = None
  for state in states:
    path = os.path.join(directory,
                        state.valid_time.strftime(_TIME_FORMAT) + '.ghr')
    state_io.write_state(state, path)
    entries.append((state.valid_time, path))
    grid, variables = state.grid, state.variables
  manifest = state_io.DatasetManifest(split, entries, grid, variables)
  state_io.write_manifest(manifest, os.path.join(stage_dir(run, 'gen-data'),
                                                 split + '.manifest'))
  logging.info('Wrote %d %s states', len(manifest), split)
  return manifest


def _times(start, n, stride=grids.STEP):
  start = grids.check_time(start)
  return [start + i * stride for i in range(n)]


@gin.configurable(denylist=['run'])
def gen_data(run,
             train_lr_start='2016-01-01T00:00Z',
             train_lr_days=60,
             train_hr_start='2021-01-01T00:00Z',
             train_hr_days=10,
             eval_start='2022-01-01T00:00Z',
             eval_days=14,
             climate_start='2015-01-01T00:00Z',
             climate_stride_hours=24,
             n_stations=20,
             station_noise=0.5):
  """Writes the synthetic splits, statistics, climatology and stations.

  The low-resolution split is the centre sub-sample of the high-resolution
  atmosphere; the climate split covers one year of high-resolution states.

  Args:
    run: RunConfig.
    train_lr_start: first valid time of the pretraining split.
    train_lr_days: length of the pretraining split.
    train_hr_start: first valid time of the transfer split.
    train_hr_days: length of the transfer split.
    eval_start: first valid time of the evaluation split.
    eval_days: length of the evaluation split.
    climate_start: first valid time of the climate split.
    climate_stride_hours: spacing of climate states, a multiple of 6.
    n_stations: number of synthetic stations.
    station_noise: observation noise of the stations.

  Returns:
    dict from split name to DatasetManifest.
  """
  if climate_stride_hours % 6:
    raise ValueError('climate stride %dh is not a multiple of 6 hours' %
                     climate_stride_hours)
  atmosphere = synthetic.SyntheticAtmosphere(run.seed, run.hr_grid,
                                             run.factor, run.variable_set)
  per_day = 4
  manifests = collections.OrderedDict()
  manifests['train-LR'] = _write_split(run, 'train-LR', (
      atmosphere.low_resolution(atmosphere.state(t))
      for t in _times(train_lr_start, train_lr_days * per_day)))
  manifests['train-HR'] = _write_split(run, 'train-HR', (
      atmosphere.state(t)
      for t in _times(train_hr_start, train_hr_days * per_day)))
  manifests['eval'] = _write_split(run, 'eval', (
      atmosphere.state(t) for t in _times(eval_start, eval_days * per_day)))
  stride = datetime.timedelta(hours=climate_stride_hours)
  n_climate = int(datetime.timedelta(days=365) // stride)
  manifests['climate'] = _write_split(run, 'climate', (
      atmosphere.state(t) for t in _times(climate_start, n_climate, stride)))

  data_dir = stage_dir(run, 'gen-data')
  inputs_lib.Normalizer.from_manifest(manifests['train-LR']).save(
      os.path.join(data_dir, 'stats.ckpt'))
  climatology_lib.build_climatology(manifests['climate']).save(
      os.path.join(data_dir, 'climatology.ckpt'))
  evaluation = manifests['eval']
  records = stations_lib.synthesize_stations(
      (evaluation.load(i) for i in range(len(evaluation))), n_stations,
      run.seed + 1, station_noise)
  stations_lib.write_stations(records, os.path.join(data_dir, 'stations.csv'))
  trainer_lib.save_gin(data_dir)
  return manifests


def pretrain(run):
  """Pretrains the meta model on the low-resolution split."""
  normalizer = _normalizer(run, 'pretrain')
  trajectories = inputs_lib.load_trajectories(
      _manifest(run, 'train-LR', 'pretrain'), normalizer)
  train, held = _holdout(trajectories, 2)
  return trainer_lib.pretrain(stage_dir(run, 'pretrain'),
                              inputs_lib.inputs(train, held),
                              config=run.model)


def _meta_path(run, needed_by):
  """The meta checkpoint of DCTL's unfreeze stage, else of pretraining."""
  unfrozen = os.path.join(stage_dir(run, 'dctl'), 'meta.ckpt')
  if needed_by != 'dctl' and os.path.exists(unfrozen):
    return unfrozen
  return _require(run, 'pretrain', 'meta.ckpt', needed_by)


def dctl(run):
  """Trains RES modules on the high-resolution split."""
  meta_params = trainer_lib.load_params(_meta_path(run, 'dctl'), 'meta')
  normalizer = _normalizer(run, 'dctl')
  trajectories = inputs_lib.load_trajectories(
      _manifest(run, 'train-HR', 'dctl'), normalizer)
  train, held = _holdout(trajectories, 2)
  return trainer_lib.dctl_train(stage_dir(run, 'dctl'),
                                inputs_lib.inputs(train, held), meta_params,
                                config=run.model, res_cfg=run.res,
                                factor=run.factor)


def _forecaster(run, needed_by, with_lora=True):
  meta_path = _meta_path(run, needed_by)
  res_path = _require(run, 'dctl', 'res.ckpt', needed_by)
  lora_path = None
  if with_lora:
    lora_path = _require(run, 'lora-tune', 'lora.ckpt', needed_by)
  return rollout.Forecaster.load(run.model, meta_path, run.factor, run.res,
                                 res_path, run.lora, lora_path)


def lora_tune(run):
  """Tunes the per-step adapters on the high-resolution split."""
  forecaster = _forecaster(run, 'lora-tune', with_lora=False)
  normalizer = _normalizer(run, 'lora-tune')
  trajectories = inputs_lib.load_trajectories(
      _manifest(run, 'train-HR', 'lora-tune'), normalizer)
  train, held = _holdout(trajectories, run.lora.t_max + 1)
  return rollout.lora_finetune(forecaster, train, held,
                               output_dir=stage_dir(run, 'lora-tune'),
                               config=run.lora)


def init_times(run, manifest, stride_hours=12, max_inits=4):
  """Forecast init times: eval states in the evaluation period.

  Args:
    run: RunConfig; eval_start and eval_end bound the period.
    manifest: DatasetManifest of the eval split.
    stride_hours: only init times at multiples of this hour are used.
    max_inits: without eval_end, the number of init times taken.

  Returns:
    list of datetimes.
  """
  start = grids.check_time(run.eval_start or manifest.times[0])
  end = grids.check_time(run.eval_end) if run.eval_end else None
  times = [t for t in manifest.times
           if t >= start and (end is None or t <= end) and
           t.hour % stride_hours == 0]
  if end is None:
    times = times[:max_inits]
  if not times:
    raise ValueError('no eval state lies in the evaluation period')
  return times


def _forecast_dir(run, init_time):
  return os.path.join(stage_dir(run, 'forecast'),
                      grids.to_utc(init_time).strftime(_TIME_FORMAT))


@gin.configurable(denylist=['run'])
def forecast(run, init_time_list=None, stride_hours=12, max_inits=4,
             cadence=1):
  """Rolls the tuned forecaster out from eval states.

  Args:
    run: RunConfig; forecast_steps sets the horizon.
    init_time_list: ISO init times; default `init_times` of the run.
    stride_hours: see `init_times`.
    max_inits: see `init_times`.
    cadence: every cadence-th lead is written.

  Returns:
    list of (init_time, [ForecastStep]) in physical units.
  """
  forecaster = _forecaster(run, 'forecast')
  normalizer = _normalizer(run, 'forecast')
  manifest = _manifest(run, 'eval', 'forecast')
  if init_time_list:
    times = [grids.check_time(t) for t in init_time_list]
  else:
    times = init_times(run, manifest, stride_hours, max_inits)
  index = {t: i for i, t in enumerate(manifest.times)}
  forecasts = []
  for init_time in times:
    if init_time not in index:
      raise ValueError('init time %s is not in the eval split' %
                       grids.format_time(init_time))
    plan = rollout.RolloutPlan(manifest.load(index[init_time]),
                               run.forecast_steps, cadence)
    steps = rollout.rollout(plan, forecaster, normalizer)
    directory = _forecast_dir(run, init_time)
    if not os.path.isdir(directory):
      os.makedirs(directory)
    for step in steps:
      state_io.write_state(step.state, os.path.join(
          directory, _STATE_FILE % step.lead_hours))
    trainer_lib.log('Wrote %d states of the %s forecast' % (
        len(steps), grids.format_time(init_time)))
    forecasts.append((init_time, steps))
  trainer_lib.save_gin(stage_dir(run, 'forecast'))
  return forecasts


def read_forecasts(run, needed_by):
  """Loads every forecast written by the forecast stage, by init time."""
  root = stage_dir(run, 'forecast')
  names = []
  if os.path.isdir(root):
    names = sorted(n for n in os.listdir(root)
                   if os.path.isdir(os.path.join(root, n)))
  if not names:
    raise MissingPrerequisiteError('forecast', root, needed_by)
  forecasts = []
  step_hours = int(grids.STEP.total_seconds() // 3600)
  for name in names:
    init_time = datetime.datetime.strptime(name, _TIME_FORMAT).replace(
        tzinfo=datetime.timezone.utc)
    leads = []
    for filename in os.listdir(os.path.join(root, name)):
      match = _STATE_PATTERN.match(filename)
      if match:
        leads.append(int(match.group(1)))
    steps = [rollout.ForecastStep(lead // step_hours, lead, state_io.read_state(
        os.path.join(root, name, _STATE_FILE % lead))) for lead in sorted(leads)]
    forecasts.append((init_time, steps))
  return forecasts


def _eval_analyses(run, needed_by):
  manifest = _manifest(run, 'eval', needed_by)
  return collections.OrderedDict(
      (t, manifest.load(i)) for i, t in enumerate(manifest.times))


def _baselines(run, forecasts, analyses, clim, needed_by):
  """Persistence, climatology and, for k > 1, interpolation forecasts."""
  series = collections.OrderedDict((name, []) for name in BASELINES)
  interpolation = None
  if run.factor > 1:
    series['interpolation'] = []
    interpolation = rollout.Forecaster(
        meta_model.MetaModel(run.model),
        trainer_lib.load_params(_meta_path(run, needed_by), 'meta'),
        run.factor, interpolate=True)
    normalizer = _normalizer(run, needed_by)
  for init_time, steps in forecasts:
    plan = rollout.RolloutPlan(analyses[init_time], steps[-1].step)
    series['persistence'].append((init_time,
                                  rollout.persistence_steps(plan)))
    series['climatology'].append((init_time,
                                  rollout.climatology_steps(plan, clim)))
    if interpolation is not None:
      series['interpolation'].append((init_time, rollout.rollout(
          plan, interpolation, normalizer)))
  return series


@gin.configurable(denylist=['run'])
def evaluate(run, metric_names=metrics.METRICS, channels=None,
             activity_mode='anomaly'):
  """Scores the model forecasts and the baselines against the eval split.

  Args:
    run: RunConfig.
    metric_names: metrics to chart.
    channels: channels to score; every channel if None.
    activity_mode: see `metrics.activity`.

  Returns:
    list of ScoreReport, the model first.
  """
  forecasts = read_forecasts(run, 'evaluate')
  clim = climatology_lib.Climatology.load(
      _require(run, 'gen-data', 'climatology.ckpt', 'evaluate'), run.hr_grid,
      run.variable_set)
  analyses = _eval_analyses(run, 'evaluate')
  missing = [t for t, _ in forecasts if t not in analyses]
  if missing:
    raise ValueError('forecast init times %s are not in the eval split' %
                     [grids.format_time(t) for t in missing])
  series = collections.OrderedDict([('model', forecasts)])
  series.update(_baselines(run, forecasts, analyses, clim, 'evaluate'))
  reports = [metrics.score_forecasts(name, f, analyses, clim, channels,
                                     activity_mode)
             for name, f in series.items()]
  output_dir = stage_dir(run, 'evaluate')
  report_lib.emit_report(reports, output_dir, metric_names)
  trainer_lib.save_gin(output_dir)
  return reports


def station_eval(run):
  """RMSE of the model forecasts at the stations, by month and lead."""
  forecasts = read_forecasts(run, 'station-eval')
  path = run.stations_file or _require(run, 'gen-data', 'stations.csv',
                                       'station-eval')
  records = stations_lib.ingest_stations(path).records
  result = verify_stations.station_eval(forecasts, records)
  output_dir = _output_dir(run, 'station-eval')
  report_lib.write_table(result.table,
                         os.path.join(output_dir, 'station_rmse.csv'))
  trainer_lib.save_gin(output_dir)
  return result


def make_report(run):
  """Scorecards against the baselines and a t2m heatmap.

  Returns:
    the scorecard DataFrame, one block of rows per baseline.
  """
  scores = {}
  for name in ('model',) + BASELINES:
    path = _require(run, 'evaluate', '%s_scores.csv' % name, 'report')
    scores[name] = report_lib.read_scores(path, name)
  cards = []
  for baseline in BASELINES:
    card = metrics.scorecard(scores['model'], scores[baseline])
    card.insert(0, 'baseline', baseline)
    cards.append(card)
  scorecard = pd.concat(cards, ignore_index=True)
  output_dir = _output_dir(run, 'report')
  report_lib.write_table(scorecard, os.path.join(output_dir, 'scorecard.csv'))
  _, steps = read_forecasts(run, 'report')[0]
  report_lib.heatmap_svg(steps[-1].state, 't2m',
                         os.path.join(output_dir, 'heatmap_t2m.svg'))
  trainer_lib.save_gin(output_dir)
  for row in scorecard.itertuples(index=False):
    trainer_lib.log('model vs %s: better on %d of %d %s targets' % (
        row.baseline, row.n_better, row.n_targets, row.metric))
  return scorecard


STAGE_FUNCTIONS = collections.OrderedDict([
    ('gen-data', gen_data),
    ('pretrain', pretrain),
    ('dctl', dctl),
    ('lora-tune', lora_tune),
    ('forecast', forecast),
    ('evaluate', evaluate),
    ('station-eval', station_eval),
    ('report', make_report),
])


def run_stage(stage, run):
  """Checks the run configuration and runs one stage."""
  if stage not in STAGE_FUNCTIONS:
    raise ValueError('unknown stage %r, expected one of %s' % (stage,
                                                               STAGES))
  run.check()
  if not os.path.isdir(run.work_dir):
    os.makedirs(run.work_dir)
  trainer_lib.log('Running stage %s in %s' % (stage, run.work_dir))
  return STAGE_FUNCTIONS[stage](run)
