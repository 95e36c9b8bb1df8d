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

"""Optimizers defined in hirescast."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import gin

from hirescast.optimizers import base


def opt_configure(*args, **kwargs):
  kwargs['module'] = 'hirescast.optimizers'
  return gin.external_configurable(*args, **kwargs)

# Optimizers (using upper-case names).
# pylint: disable=invalid-name
AdamW = opt_configure(base.AdamW)

clip_grads = base.clip_grads
l2_norm = base.l2_norm
