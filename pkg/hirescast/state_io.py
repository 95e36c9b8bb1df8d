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

"""Binary state files, parameter containers and dataset manifests.

State file (all little-endian):

    b'GHR1'  version:u32  C:u32 H:u32 W:u32  valid_time:i64  spacing:f64
    C times: name_len:u32 name:utf8 kind:u8 level:f32
    C*H*W float32 values, row-major (channel, row, column)

kind is 0 for pressure-level channels (level in hPa) and 1 for surface
channels (level 0). Only global cell-centre grids with whole-hPa levels round
trip: the grid is recovered from H, W and the spacing, and levels are read
back as integers, so `encode_state` rejects anything else.

Parameter container:

    b'GHRP'  version:u32  count:u32
    count times: name_len:u32 name:utf8 ndim:u32 dims:u32*ndim offset:u64
    float32 data; offset is the absolute file position of each tensor.

Manifest: UTF-8 text, '#'-prefixed header lines for split, grid and
variables, then one 'timestamp<TAB>path' line per state with paths relative to
the manifest.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import io
import os
import struct

from absl import logging
import numpy as onp
import pandas as pd

from hirescast import grids

STATE_MAGIC = b'GHR1'
PARAMS_MAGIC = b'GHRP'
VERSION = 1

_KINDS = {'pressure': 0, 'surface': 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}

SPLITS = ('train-LR', 'train-HR', 'eval', 'climate')


class FormatError(ValueError):
  """Malformed file; `offset` is the byte position where parsing failed."""

  def __init__(self, message, offset, path=None):
    self.offset = offset
    self.path = path
    where = ' in %s' % path if path else ''
    super(FormatError, self).__init__('%s at byte offset %d%s' %
                                      (message, offset, where))


class _Reader(object):
  """Sequential little-endian reader reporting byte offsets on failure."""

  def __init__(self, data, path=None):
    self._data = data
    self._path = path
    self.offset = 0

  def error(self, message, offset=None):
    return FormatError(message, self.offset if offset is None else offset,
                       self._path)

  def read(self, n, what):
    if self.offset + n > len(self._data):
      raise self.error('truncated file while reading %s (need %d bytes, %d '
                       'left)' % (what, n, len(self._data) - self.offset))
    chunk = self._data[self.offset:self.offset + n]
    self.offset += n
    return chunk

  def unpack(self, fmt, what):
    fmt = '<' + fmt
    return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))

  def magic(self, expected):
    start = self.offset
    found = self.read(len(expected), 'magic')
    if found != expected:
      raise self.error('bad magic %r, expected %r' % (found, expected), start)
    start = self.offset
    version, = self.unpack('I', 'version')
    if version != VERSION:
      raise self.error('unsupported version %d' % version, start)

  def string(self, what):
    n, = self.unpack('I', what + ' length')
    start = self.offset
    raw = self.read(n, what)
    try:
      return raw.decode('utf-8')
    except UnicodeDecodeError:
      raise self.error('%s is not valid UTF-8' % what, start)

  def floats(self, count, what):
    raw = self.read(4 * count, what)
    return onp.frombuffer(raw, dtype='<f4').astype(onp.float32)


def _atomic_write(path, payload):
  directory = os.path.dirname(os.path.abspath(path))
  if not os.path.isdir(directory):
    os.makedirs(directory)
  tmp_path = path + '.tmp'
  with open(tmp_path, 'wb') as f:
    f.write(payload)
  os.replace(tmp_path, path)


def _read_bytes(path):
  with open(path, 'rb') as f:
    return f.read()


def _stored_grid(n_lat, n_lon, spacing):
  return grids.GridSpec(n_lat, n_lon, 90.0 - spacing / 2, spacing / 2, spacing)


def encode_state(state):
  """Serializes a WeatherState to bytes in the state file layout."""
  grid = state.grid
  if not grid.same_as(_stored_grid(grid.n_lat, grid.n_lon, grid.resolution)):
    raise ValueError('state files hold global grids only, got %s' % (grid,))
  for variable in state.variables:
    if variable.level is not None and variable.level != int(variable.level):
      raise ValueError('%s: level %r is not a whole hPa value' %
                       (variable.name, variable.level))
  values = onp.ascontiguousarray(state.values, dtype='<f4')
  c, h, w = values.shape
  valid_time = int(pd.Timestamp(state.valid_time).timestamp())
  out = io.BytesIO()
  out.write(STATE_MAGIC)
  out.write(struct.pack('<IIIIqd', VERSION, c, h, w, valid_time,
                        state.grid.resolution))
  for variable in state.variables:
    name = variable.name.encode('utf-8')
    level = 0.0 if variable.level is None else float(variable.level)
    out.write(struct.pack('<I', len(name)))
    out.write(name)
    out.write(struct.pack('<Bf', _KINDS[variable.kind], level))
  out.write(values.tobytes())
  return out.getvalue()


def decode_state(data, path=None):
  """Parses bytes in the state file layout into a WeatherState."""
  reader = _Reader(data, path)
  reader.magic(STATE_MAGIC)
  start = reader.offset
  c, h, w = reader.unpack('III', 'dimensions')
  if not (c and h and w):
    raise reader.error('empty dimensions %s' % ((c, h, w),), start)
  start = reader.offset
  valid_time, = reader.unpack('q', 'valid time')
  spacing, = reader.unpack('d', 'grid spacing')
  if not spacing > 0:
    raise reader.error('grid spacing must be positive, got %r' % spacing,
                       start + 8)
  variables = []
  for i in range(c):
    name = reader.string('channel %d name' % i)
    start = reader.offset
    kind, level = reader.unpack('Bf', 'channel %d kind and level' % i)
    if kind not in _KIND_NAMES:
      raise reader.error('unknown channel kind %d' % kind, start)
    kind = _KIND_NAMES[kind]
    variables.append(grids.Variable(
        name, kind, int(level) if kind == 'pressure' else None))
  values = reader.floats(c * h * w, 'values').reshape(c, h, w)
  if reader.offset != len(data):
    raise reader.error('%d trailing bytes' % (len(data) - reader.offset))
  grid = _stored_grid(h, w, spacing)
  time = pd.Timestamp(valid_time, unit='s', tz='UTC').to_pydatetime()
  try:
    return grids.WeatherState(grid, grids.VariableSet(variables), values,
                              time)
  except ValueError as e:
    raise reader.error(str(e), 4 + 4 + 12)


def write_state(state, path):
  _atomic_write(path, encode_state(state))


def read_state(path):
  return decode_state(_read_bytes(path), path)


def encode_params(flat_params):
  """Serializes an ordered name -> array mapping as a parameter container."""
  arrays = collections.OrderedDict(
      (name, onp.ascontiguousarray(value, dtype='<f4'))
      for name, value in flat_params.items())
  header = io.BytesIO()
  header.write(PARAMS_MAGIC)
  header.write(struct.pack('<II', VERSION, len(arrays)))
  entries = []
  for name, value in arrays.items():
    entries.append((name.encode('utf-8'), value.shape))
  header_size = len(header.getvalue()) + sum(
      4 + len(name) + 4 + 4 * len(shape) + 8 for name, shape in entries)
  offset = header_size
  for (name, shape), value in zip(entries, arrays.values()):
    header.write(struct.pack('<I', len(name)))
    header.write(name)
    header.write(struct.pack('<I%dI' % len(shape), len(shape), *shape))
    header.write(struct.pack('<Q', offset))
    offset += value.nbytes
  return header.getvalue() + b''.join(v.tobytes() for v in arrays.values())


def decode_params(data, path=None):
  """Parses a parameter container into an OrderedDict of float32 arrays."""
  reader = _Reader(data, path)
  reader.magic(PARAMS_MAGIC)
  count, = reader.unpack('I', 'tensor count')
  entries = []
  for i in range(count):
    name = reader.string('tensor %d name' % i)
    ndim, = reader.unpack('I', 'tensor %d rank' % i)
    shape = reader.unpack('%dI' % ndim, 'tensor %d shape' % i)
    start = reader.offset
    offset, = reader.unpack('Q', 'tensor %d offset' % i)
    entries.append((name, shape, offset, start))
  params = collections.OrderedDict()
  for name, shape, offset, where in entries:
    size = int(onp.prod(shape)) * 4
    if offset < reader.offset or offset + size > len(data):
      raise reader.error('tensor %s spans bytes %d..%d outside the data '
                         'section' % (name, offset, offset + size), where)
    if name in params:
      raise reader.error('duplicate tensor %s' % name, where)
    params[name] = onp.frombuffer(data[offset:offset + size],
                                  dtype='<f4').astype(onp.float32).reshape(
                                      shape)
  return params


def write_params(flat_params, path):
  _atomic_write(path, encode_params(flat_params))
  logging.info('Wrote %d tensors to %s', len(flat_params), path)


def read_params(path):
  return decode_params(_read_bytes(path), path)


class DatasetManifest(collections.namedtuple(
    'DatasetManifest', ['split', 'entries', 'grid', 'variables'])):
  """Ordered (valid_time, path) pairs of one split.

  Attributes:
    split: one of SPLITS.
    entries: tuple of (timezone-aware UTC datetime, absolute path), valid
      times strictly increasing.
    grid: GridSpec of every state in the split.
    variables: VariableSet of every state in the split.
  """

  def __new__(cls, split, entries, grid, variables):
    entries = tuple((grids.check_time(t), p) for t, p in entries)
    for (t0, _), (t1, _) in zip(entries, entries[1:]):
      if t1 <= t0:
        raise ValueError('manifest timestamps not strictly increasing: %s '
                         'then %s' % (grids.format_time(t0),
                                      grids.format_time(t1)))
    return super(DatasetManifest, cls).__new__(cls, split, entries, grid,
                                               variables)

  @property
  def times(self):
    return [t for t, _ in self.entries]

  @property
  def paths(self):
    return [p for _, p in self.entries]

  def __len__(self):
    return len(self.entries)

  def trajectories(self):
    """Splits entries into runs of consecutive 6-hourly states."""
    runs = []
    for entry in self.entries:
      if runs and entry[0] - runs[-1][-1][0] == grids.STEP:
        runs[-1].append(entry)
      else:
        runs.append([entry])
    return runs

  def load(self, index):
    state = read_state(self.entries[index][1])
    check_compatible(state, self.grid, self.variables, self.entries[index][1])
    return state


def check_compatible(state, grid, variables, where):
  if not state.grid.same_as(grid):
    raise ValueError('%s: grid %s does not match %s' % (where, state.grid,
                                                        grid))
  if state.variables != variables:
    raise ValueError('%s: channels %s do not match %s' % (
        where, state.variables.names, variables.names))


def _variable_token(variable):
  if variable.kind == 'pressure':
    return '%s@%d' % (variable.name, variable.level)
  return variable.name


def _parse_variable(token):
  if '@' in token:
    name, level = token.split('@', 1)
    return grids.Variable(name, 'pressure', int(level))
  return grids.Variable(token, 'surface', None)


def write_manifest(manifest, path):
  """Writes a manifest with paths relative to its own directory."""
  directory = os.path.dirname(os.path.abspath(path))
  grid = manifest.grid
  lines = ['# split: %s' % manifest.split,
           '# grid: %d %d %r %r %r' % (grid.n_lat, grid.n_lon, grid.lat0,
                                       grid.lon0, grid.resolution),
           '# variables: %s' % ' '.join(_variable_token(v)
                                        for v in manifest.variables)]
  for time, state_path in manifest.entries:
    lines.append('%s\t%s' % (grids.format_time(time),
                             os.path.relpath(state_path, directory)))
  _atomic_write(path, ('\n'.join(lines) + '\n').encode('utf-8'))


def read_manifest(path):
  """Parses a manifest; paths come back absolute."""
  directory = os.path.dirname(os.path.abspath(path))
  header = {}
  entries = []
  with open(path, 'r') as f:
    for number, line in enumerate(f, 1):
      line = line.rstrip('\n')
      if not line.strip():
        continue
      if line.startswith('#'):
        key, _, value = line[1:].partition(':')
        header[key.strip()] = value.strip()
        continue
      parts = line.split('\t')
      if len(parts) != 2:
        raise ValueError('%s:%d: expected "timestamp<TAB>path"' % (path,
                                                                  number))
      entries.append((grids.to_utc(parts[0]),
                      os.path.join(directory, parts[1])))
  missing = [k for k in ('split', 'grid', 'variables') if k not in header]
  if missing:
    raise ValueError('%s: missing header lines %s' % (path, missing))
  if header['split'] not in SPLITS:
    raise ValueError('%s: unknown split %r' % (path, header['split']))
  n_lat, n_lon, lat0, lon0, resolution = header['grid'].split()
  grid = grids.GridSpec(int(n_lat), int(n_lon), float(lat0), float(lon0),
                        float(resolution))
  variables = grids.VariableSet(
      [_parse_variable(t) for t in header['variables'].split()])
  return DatasetManifest(header['split'], entries, grid, variables)
