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

r"""Hirescast pipeline executable.

Usage:

  python -m hirescast.main <stage> [key=value ...] \
      --config_file=hirescast/configs/toy.gin [--config='key=value']

where <stage> is one of gen-data, pretrain, dctl, lora-tune, forecast,
evaluate, station-eval, report. Trailing key=value arguments are gin
bindings, e.g. `run_config.work_dir="'/tmp/run'"` or
`pretrain.train_steps=100`.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite stage,
4 non-finite numbers.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl import app
from absl import flags
from absl import logging

import gin
from hirescast import config
from hirescast import pipeline
from hirescast import trainer_lib

FLAGS = flags.FLAGS

flags.DEFINE_multi_string('config_file', None,
                          'Configuration file with parameters (.gin).')
flags.DEFINE_multi_string('config', None,
                          'Configuration parameters (gin string).')
flags.DEFINE_integer('log_level', logging.INFO, 'Log level.')

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_PREREQUISITE = 3
EXIT_NUMERICAL = 4


def _setup_gin(config_files, bindings):
  """Setup gin configuration."""
  # Imports for configurables
  # pylint: disable=g-import-not-at-top,unused-import,g-bad-import-order,reimported,unused-variable
  from hirescast import models as _hirescast_models
  from hirescast import optimizers as _hirescast_opt
  # pylint: enable=g-import-not-at-top,unused-import,g-bad-import-order,reimported,unused-variable

  gin.parse_config_files_and_bindings(config_files, list(bindings))


def run(argv, config_files=None, configs=None):
  """Runs the stage named in argv; returns the exit code.

  Args:
    argv: program name, stage, then key=value gin bindings.
    config_files: gin files parsed first.
    configs: gin bindings applied before the ones in argv.
  """
  if len(argv) < 2 or argv[1] not in pipeline.STAGES:
    logging.error('Expected a stage, one of %s; got %s',
                  ', '.join(pipeline.STAGES), argv[1:2])
    return EXIT_CONFIG
  stage, bindings = argv[1], argv[2:]
  malformed = [b for b in bindings if '=' not in b]
  if malformed:
    logging.error('Overrides must be key=value, got %s', malformed)
    return EXIT_CONFIG
  try:
    _setup_gin(config_files, list(configs or []) + bindings)
    run_cfg = config.run_config()
    run_cfg.check()
  except (ValueError, IOError) as e:
    # ConfigError is a ValueError, as are gin parse errors.
    logging.error('%s', e)
    return EXIT_CONFIG
  try:
    pipeline.run_stage(stage, run_cfg)
  except pipeline.MissingPrerequisiteError as e:
    logging.error('%s', e)
    return EXIT_MISSING_PREREQUISITE
  except FloatingPointError as e:
    logging.error('%s', e)
    return EXIT_NUMERICAL
  trainer_lib.log('Stage %s done' % stage)
  return EXIT_OK


def main(argv):
  logging.set_verbosity(FLAGS.log_level)
  return run(argv, FLAGS.config_file, FLAGS.config)


def console_main():
  app.run(main)


if __name__ == '__main__':
  console_main()
