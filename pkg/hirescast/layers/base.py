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

"""Base layer class and helpers for parameter trees."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import inspect
import traceback

import numpy as onp

from hirescast import backend
from hirescast.backend import nested_map


class Layer(object):
  """Base class for the layers of a forecasting network.

  A layer is a pure function of its inputs and a parameter tree. Parameters
  are not cached on the layer: callers own them and pass them into every
  call, which lets the same layer object run with frozen numpy parameters,
  with trainable tensors on a gradient tape, or with merged low-rank updates.

  Subclasses override at most two methods:

    forward(x, params, **kwargs):
      Computes this layer's output from backend tensors (or arrays).

    new_params(rng):
      Returns an ordered dict of float32 arrays, possibly nested, used to
      initialize the layer. Layers without parameters return an empty dict.
  """

  def __init__(self, name=None):
    self._name = name or self.__class__.__name__
    # record root call site for custom error messages:
    self._caller = _find_frame(inspect.currentframe())

  def __repr__(self):
    return '%s{%s}' % (self.__class__.__name__, self._name)

  @property
  def name(self):
    return self._name

  def forward(self, x, params, **kwargs):
    """Computes this layer's output as part of a forward pass.

    Args:
      x: input Tensor (or a tuple of them for multi-input layers).
      params: the parameter tree produced by `new_params` (leaves may be numpy
        arrays or backend Tensors).
      **kwargs: layer-specific call arguments.

    Returns:
      Output Tensor(s).
    """
    raise NotImplementedError

  def new_params(self, rng):
    """Returns a fresh parameter tree for this layer."""
    del rng
    return collections.OrderedDict()

  def __call__(self, x, params, **kwargs):
    try:
      return self.forward(x, params, **kwargs)
    except (backend.ShapeError, LayerError, FloatingPointError):
      raise
    except Exception:
      trace = _short_traceback()
      raise LayerError(self._name, 'forward', self._caller, shapes(x), trace)


class LayerError(Exception):
  """Exception raised in the layer stack.

  Attributes:
    message: the message corresponding to this exception.
  """

  def __init__(self, layer_name, function_name, caller,
               input_shapes, traceback_string):
    self._layer_name = layer_name
    self._function_name = function_name
    self._caller = caller  # Python inspect object with init caller info.
    self._traceback = traceback_string
    self._input_shapes = input_shapes
    super(LayerError, self).__init__(self.message)

  @property
  def message(self):
    """Create error message."""
    prefix = 'Exception passing through layer '
    prefix += '%s (in %s):\n' % (self._layer_name, self._function_name)
    short_path = '[...]/' + '/'.join(
        self._caller.f_code.co_filename.split('/')[-3:])
    caller = '  layer created in file %s, line %d\n' % (short_path,
                                                        self._caller.f_lineno)
    shapes_str = '  layer input shapes: %s\n\n' % str(self._input_shapes)
    return prefix + caller + shapes_str + self._traceback


def shapes(x):
  """Get a structure of shapes for a structure of nested arrays."""
  def shape(x):
    try:
      return tuple([int(i) for i in x.shape])
    except Exception:  # pylint: disable=broad-except
      return []
  return nested_map(shape, x)


def flatten_params(tree, prefix=''):
  """Flattens a nested dict of arrays into an ordered {'a/b/c': leaf} dict."""
  flat = collections.OrderedDict()
  for key, value in tree.items():
    name = '%s/%s' % (prefix, key) if prefix else str(key)
    if isinstance(value, dict):
      flat.update(flatten_params(value, name))
    else:
      flat[name] = value
  return flat


def unflatten_params(flat):
  """Inverse of `flatten_params`."""
  tree = collections.OrderedDict()
  for name, value in flat.items():
    node = tree
    parts = name.split('/')
    for part in parts[:-1]:
      node = node.setdefault(part, collections.OrderedDict())
    node[parts[-1]] = value
  return tree


def get_path(tree, path):
  """Returns the leaf or subtree at a '/'-separated path."""
  node = tree
  for part in path.split('/'):
    node = node[part]
  return node


def replace_path(tree, path, value):
  """Returns a shallow copy of tree with the node at `path` replaced."""
  head, _, rest = path.partition('/')
  new_tree = collections.OrderedDict(tree)
  new_tree[head] = value if not rest else replace_path(tree[head], rest, value)
  return new_tree


def count_params(tree):
  """Total number of scalar parameters in a tree."""
  return int(sum(onp.size(backend.values(v))
                 for v in flatten_params(tree).values()))


def _find_frame(frame):
  """Find the frame with the caller on the stack."""
  # We want to find the first place where the layer was called
  # that is *not* an __init__ function of an inheriting layer.
  # We also need to exclude a few decorator functions.
  while frame.f_code.co_name in ['__init__', 'gin_wrapper', '_validate',
                                 '_init']:
    # If we are in an init, move up.
    frame = frame.f_back
  return frame


def _shorten_file_path(line):
  """Shorten file path in error lines for more readable tracebacks."""
  start = line.lower().find('file')
  if start < 0:
    return line
  first_quote = line.find('"', start)
  if first_quote < 0:
    return line
  second_quote = line.find('"', first_quote + 1)
  if second_quote < 0:
    return line
  path = line[first_quote + 1:second_quote]
  new_path = '/'.join(path.split('/')[-3:])
  return line[:first_quote] + '[...]/' + new_path + line[second_quote + 1:]


def _short_traceback(skip=3):
  """Cleaned-up form of traceback."""
  counter, res = 0, []
  # Skipping 3 lines by default: the top (useless) and self-call.
  lines = traceback.format_exc(chain=False).splitlines()[skip:]
  for l in lines:
    if l.startswith('hirescast.layers.base.LayerError'):
      l = l[len('hirescast.layers.base.'):]
    res.append(_shorten_file_path(l))
    if counter % 2 == 1:
      res.append('')
    counter += 1
    # If we see a LayerError, the traceback has already been processed.
    if l.startswith('LayerError'):
      res = res[:-4] + [res[-1]]
      res += lines[counter:]
      break
  return '\n'.join(res)
