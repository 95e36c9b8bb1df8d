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

"""Low-rank adapters for frozen dense kernels.

An adapter for a frozen matrix W0 (out x in) is a pair B (out x r), A (r x in)
and contributes beta * B @ A with beta = alpha / r. Dense layers store their
kernel transposed, as (in x out), so merging adds beta * A^T @ B^T to it.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

import numpy as onp

from hirescast import backend
from hirescast.layers import base
from hirescast.layers import initializers as init


def check_rank(rank, n_out, n_in):
  if rank < 1 or rank > min(n_out, n_in) // 4:
    raise ValueError('LoRA rank %d must be in [1, min(%d, %d) / 4]' %
                     (rank, n_out, n_in))


def apply_lora(w0, a, b, alpha, rank, x, merged=True):
  """Computes (W0 + (alpha / rank) * B @ A) x.

  Args:
    w0: frozen (out, in) matrix.
    a: (rank, in) adapter factor.
    b: (out, rank) adapter factor.
    alpha: adapter scale numerator.
    rank: adapter rank.
    x: (..., in) inputs.
    merged: if True, forms the merged matrix first; otherwise applies the
      frozen matrix and the two factors separately.

  Returns:
    Tensor (..., out).
  """
  w0, a, b, x = [backend.as_tensor(v) for v in (w0, a, b, x)]
  n_out, n_in = w0.shape
  if a.shape != (rank, n_in) or b.shape != (n_out, rank):
    raise backend.DimensionError('apply_lora', a.shape, b.shape,
                                 'expected A %s and B %s' %
                                 ((rank, n_in), (n_out, rank)))
  check_rank(rank, n_out, n_in)
  beta = float(alpha) / rank
  vector = x.ndim == 1
  if vector:
    x = backend.reshape(x, (1, n_in))
  if merged:
    w = backend.add(w0, backend.scale(backend.matmul(b, a), beta))
    y = backend.matmul(x, backend.swap_last(w))
  else:
    base_out = backend.matmul(x, backend.swap_last(w0))
    low = backend.matmul(backend.matmul(x, backend.swap_last(a)),
                         backend.swap_last(b))
    y = backend.add(base_out, backend.scale(low, beta))
  if vector:
    y = backend.reshape(y, (n_out,))
  return y


def merge_dense_kernel(kernel, a, b, beta):
  """Returns a Dense (in, out) kernel with beta * (B @ A)^T added."""
  delta = backend.matmul(backend.swap_last(a), backend.swap_last(b))
  return backend.add(kernel, backend.scale(delta, beta))


class LoraSet(object):
  """Step-indexed adapters for a fixed list of Dense kernels.

  Adapter t (1 <= t <= t_max) is used for the t-th step of a rollout; steps
  beyond t_max reuse adapter t_max. Steps without a trained adapter run the
  frozen model unchanged.
  """

  def __init__(self, targets, rank=4, alpha=None, t_max=8, adapters=None):
    """Creates a set of adapters.

    Args:
      targets: ordered dict from kernel path (e.g.
        'blocks/0/attn/attention/query/w') to its (in, out) shape.
      rank: adapter rank r.
      alpha: scale numerator; defaults to r, so beta = 1.
      t_max: number of distinct per-step adapters.
      adapters: optional dict from step t to an adapter tree.
    """
    self._targets = collections.OrderedDict(targets)
    for path, (n_in, n_out) in self._targets.items():
      try:
        check_rank(rank, n_out, n_in)
      except ValueError as e:
        raise ValueError('%s: %s' % (path, e))
    if t_max < 1:
      raise ValueError('t_max must be positive, got %d' % t_max)
    self._rank = rank
    self._alpha = float(rank if alpha is None else alpha)
    self._t_max = t_max
    self._adapters = dict(adapters or {})

  @classmethod
  def for_params(cls, params, suffixes=('query/w', 'value/w'), **kwargs):
    """Targets every kernel whose path ends in one of `suffixes`."""
    targets = collections.OrderedDict(
        (path, tuple(onp.shape(backend.values(value))))
        for path, value in base.flatten_params(params).items()
        if path.endswith(tuple(suffixes)))
    if not targets:
      raise ValueError('no parameters end in %s' % (suffixes,))
    return cls(targets, **kwargs)

  @property
  def targets(self):
    return self._targets

  @property
  def rank(self):
    return self._rank

  @property
  def alpha(self):
    return self._alpha

  @property
  def beta(self):
    return self._alpha / self._rank

  @property
  def t_max(self):
    return self._t_max

  @property
  def trained_steps(self):
    return sorted(self._adapters)

  def adapter_index(self, step):
    if step < 1:
      raise ValueError('rollout steps start at 1, got %d' % step)
    return min(step, self._t_max)

  def new_adapter(self, rng, stddev=0.02):
    """A ~ N(0, stddev^2) and B = 0, so a fresh adapter changes nothing."""
    adapter = collections.OrderedDict()
    rngs = backend.random.split(rng, len(self._targets))
    normal = init.RandomNormalInitializer(stddev)
    for key, (path, (n_in, n_out)) in zip(rngs, self._targets.items()):
      adapter[path] = collections.OrderedDict([
          ('A', normal((self._rank, n_in), key)),
          ('B', onp.zeros((n_out, self._rank), dtype=onp.float32)),
      ])
    return adapter

  def adapter(self, step):
    """Adapter used at rollout step `step`, or None."""
    return self._adapters.get(self.adapter_index(step))

  def set_adapter(self, step, adapter):
    if not 1 <= step <= self._t_max:
      raise ValueError('adapter step %d outside [1, %d]' % (step, self._t_max))
    self._adapters[step] = nested_numpy(adapter)

  def merge(self, params, adapter):
    """Returns params with every target kernel merged with `adapter`."""
    if adapter is None:
      return params
    for path in self._targets:
      factors = adapter[path]
      kernel = base.get_path(params, path)
      merged = merge_dense_kernel(kernel, factors['A'], factors['B'],
                                  self.beta)
      params = base.replace_path(params, path, merged)
    return params

  def params_for_step(self, params, step):
    return self.merge(params, self.adapter(step))

  def to_flat(self):
    """Adapters as {'lora/<t>/<path>/A': array} for the checkpoint container."""
    flat = collections.OrderedDict()
    for step in sorted(self._adapters):
      for path, factors in self._adapters[step].items():
        for name in ('A', 'B'):
          flat['lora/%d/%s/%s' % (step, path, name)] = factors[name]
    return flat

  def load_flat(self, flat):
    """Inverse of `to_flat`; returns self."""
    adapters = {}
    for key, value in flat.items():
      parts = key.split('/')
      if parts[0] != 'lora' or parts[-1] not in ('A', 'B'):
        raise ValueError('not an adapter entry: %s' % key)
      step, path = int(parts[1]), '/'.join(parts[2:-1])
      if path not in self._targets:
        raise ValueError('adapter for unknown kernel %s' % path)
      adapters.setdefault(step, collections.OrderedDict()).setdefault(
          path, collections.OrderedDict())[parts[-1]] = onp.asarray(
              value, dtype=onp.float32)
    for step, adapter in adapters.items():
      self.set_adapter(step, adapter)
    return self


def nested_numpy(tree):
  return backend.nested_map(lambda v: onp.array(backend.values(v)), tree)
