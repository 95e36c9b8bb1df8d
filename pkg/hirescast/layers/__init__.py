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

"""Layers defined in hirescast."""
from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import gin
# pylint: disable=wildcard-import
from hirescast.layers.attention import *
from hirescast.layers.base import *
from hirescast.layers.convolution import *
from hirescast.layers.core import *
from hirescast.layers.initializers import *
from hirescast.layers.lora import *
from hirescast.layers.metrics import *
from hirescast.layers.normalization import *


# Ginify
def layer_configure(*args, **kwargs):
  kwargs['module'] = 'hirescast.layers'
  return gin.external_configurable(*args, **kwargs)

# pylint: disable=used-before-assignment
# pylint: disable=invalid-name
RandomNormalInitializer = layer_configure(RandomNormalInitializer)
GlorotUniformInitializer = layer_configure(GlorotUniformInitializer)
