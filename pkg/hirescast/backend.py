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

"""Hirescast backend: float32 tensors with tape-based reverse-mode gradients.

Every differentiable op computes its forward value with numpy and, when a
`Tape` is active and one of its inputs requires a gradient, records a
vector-Jacobian product closure on the tape. `Tape.backward` walks the
recorded ops in reverse and accumulates gradients into leaf tensors.

Reductions and contractions accumulate in float64 and store float32, so a
batch element's result does not depend on what else is in the batch.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import contextlib
import threading

import gin
import numpy as onp
from scipy import special as sp_special


class ShapeError(ValueError):
  """Raised when a tensor shape violates an operation's contract."""


class DimensionError(ShapeError):
  """Raised when the dimensions of two operands do not agree."""

  def __init__(self, op_name, lhs_shape, rhs_shape, detail=None):
    self.lhs_shape = tuple(lhs_shape)
    self.rhs_shape = tuple(rhs_shape)
    message = '%s: incompatible shapes %s and %s' % (
        op_name, self.lhs_shape, self.rhs_shape)
    if detail:
      message += ' (%s)' % detail
    super(DimensionError, self).__init__(message)


_override_debug_nans = None


@gin.configurable
def debug_nans(value=False):
  """Returns whether every op checks its output for non-finite values."""
  if _override_debug_nans is not None:
    return _override_debug_nans
  return value


@contextlib.contextmanager
def checking_nans(enabled=True):
  """Temporarily turns the per-op non-finite check on or off."""
  global _override_debug_nans
  prev = _override_debug_nans
  _override_debug_nans = enabled
  try:
    yield
  finally:
    _override_debug_nans = prev


class Tensor(object):
  """Dense float32 array, optionally linked to the tape that produced it.

  Attributes:
    requires_grad: whether gradients flow into (leaf) or through this tensor.
    grad: accumulated float32 gradient for leaf tensors, or None.
  """

  __array_priority__ = 100

  def __init__(self, data, requires_grad=False):
    data = onp.array(data, dtype=onp.float32)
    _check_shape(data.shape)
    data.flags.writeable = False
    self._data = data
    self.requires_grad = bool(requires_grad)
    self.grad = None
    self._tape = None

  @classmethod
  def _wrap(cls, data):
    """Wraps an op result without copying it."""
    t = cls.__new__(cls)
    data = onp.asarray(data, dtype=onp.float32)
    if data.base is not None or not data.flags.owndata:
      data = onp.array(data)
    _check_shape(data.shape)
    data.flags.writeable = False
    t._data = data
    t.requires_grad = False
    t.grad = None
    t._tape = None
    return t

  @property
  def data(self):
    """Read-only float32 view of the values."""
    return self._data

  @property
  def shape(self):
    return self._data.shape

  @property
  def ndim(self):
    return self._data.ndim

  @property
  def size(self):
    return self._data.size

  @property
  def dtype(self):
    return self._data.dtype

  def numpy(self):
    """Returns a writable copy of the values."""
    return onp.array(self._data)

  def item(self):
    if self.size != 1:
      raise ShapeError('item() needs a single value, got shape %s' %
                       (self.shape,))
    return float(self._data.reshape(()))

  def zero_grad(self):
    self.grad = None

  def detach(self):
    """Returns a constant tensor with the same values and no tape link."""
    return stop_gradient(self)

  def __repr__(self):
    return 'Tensor(shape=%s, requires_grad=%s)' % (self.shape,
                                                   self.requires_grad)

  def __array__(self, dtype=None, copy=None):
    if dtype is None and not copy:
      return self._data
    return self._data.astype(dtype or self._data.dtype)

  def __add__(self, other):
    return add(self, other)

  def __radd__(self, other):
    return add(other, self)

  def __sub__(self, other):
    return subtract(self, other)

  def __rsub__(self, other):
    return subtract(other, self)

  def __mul__(self, other):
    return multiply(self, other)

  def __rmul__(self, other):
    return multiply(other, self)

  def __truediv__(self, other):
    return divide(self, other)

  def __neg__(self):
    return negative(self)

  def __matmul__(self, other):
    return matmul(self, other)

  def reshape(self, shape):
    return reshape(self, shape)

  def permute(self, *axes):
    return permute(self, axes)

  def sum(self, axis=None, keepdims=False):
    return sum_(self, axis=axis, keepdims=keepdims)

  def mean(self, axis=None, keepdims=False):
    return mean(self, axis=axis, keepdims=keepdims)


def _check_shape(shape):
  if any(d == 0 for d in shape):
    raise ShapeError('zero-sized dimension in shape %s' % (shape,))


def as_tensor(x):
  """Returns x if it is a Tensor, else a constant Tensor holding x."""
  if isinstance(x, Tensor):
    return x
  return Tensor(x)


def values(x):
  """Returns the float32 array behind a Tensor or array-like."""
  if isinstance(x, Tensor):
    return x.data
  return onp.asarray(x, dtype=onp.float32)


_Node = collections.namedtuple('_Node', ['name', 'output', 'inputs', 'vjp'])


class _TapeStack(threading.local):

  def __init__(self):
    super(_TapeStack, self).__init__()
    self.tapes = []


_tape_stack = _TapeStack()


def current_tape():
  """Returns the innermost active tape of this thread, or None."""
  if _tape_stack.tapes:
    return _tape_stack.tapes[-1]
  return None


class Tape(object):
  """Records differentiable ops so gradients can be computed afterwards.

  Use as a context manager around the forward computation of one step:

    with backend.Tape() as tape:
      loss = loss_fn(params)
    tape.backward(loss)

  A tape belongs to the thread that entered it.
  """

  def __init__(self):
    self._nodes = []

  def __enter__(self):
    _tape_stack.tapes.append(self)
    return self

  def __exit__(self, *unused_exc_info):
    _tape_stack.tapes.remove(self)
    return False

  def __len__(self):
    return len(self._nodes)

  @property
  def op_names(self):
    return [node.name for node in self._nodes]

  def reset(self):
    """Forgets all recorded ops."""
    self._nodes = []

  def record(self, name, output, inputs, vjp):
    output.requires_grad = True
    output._tape = self  # pylint: disable=protected-access
    self._nodes.append(_Node(name, output, tuple(inputs), vjp))

  def backward(self, loss):
    """Accumulates d(loss)/d(leaf) into `grad` of every leaf on this tape.

    Calling backward again without zeroing the leaves adds to their gradients.

    Args:
      loss: a single-element Tensor recorded on this tape.

    Raises:
      ShapeError: if loss has more than one element.
      ValueError: if loss was not recorded on this tape.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
      raise ShapeError('backward needs a scalar loss, got shape %s' %
                       (getattr(loss, 'shape', None),))
    if loss._tape is not self:  # pylint: disable=protected-access
      raise ValueError('loss was not computed on this tape')
    cotangents = {id(loss): onp.ones(loss.shape, dtype=onp.float32)}
    for node in reversed(self._nodes):
      ct = cotangents.pop(id(node.output), None)
      if ct is None:
        continue
      input_cts = node.vjp(ct)
      for x, g in zip(node.inputs, input_cts):
        if g is None or not x.requires_grad:
          continue
        g = _unbroadcast(onp.asarray(g), x.shape).astype(onp.float32)
        if x._tape is self:  # pylint: disable=protected-access
          key = id(x)
          prev = cotangents.get(key)
          cotangents[key] = g if prev is None else prev + g
        elif x.grad is None:
          x.grad = onp.array(g)
        else:
          x.grad = x.grad + g


def backward(loss):
  """Runs backward on the tape that recorded `loss`."""
  tape = getattr(loss, '_tape', None)
  if tape is None:
    raise ValueError('loss was not recorded on any tape')
  tape.backward(loss)


def _unbroadcast(g, shape):
  """Sums g over the axes that broadcasting added or stretched."""
  shape = tuple(shape)
  if g.shape == shape:
    return g
  extra = g.ndim - len(shape)
  if extra > 0:
    g = g.sum(axis=tuple(range(extra)))
  axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
  if axes:
    g = g.sum(axis=axes, keepdims=True)
  return g.reshape(shape)


def _op(name, out, inputs, vjp):
  """Wraps a forward result and records it if any input needs a gradient."""
  out = Tensor._wrap(out)  # pylint: disable=protected-access
  if debug_nans() and not onp.all(onp.isfinite(out.data)):
    raise FloatingPointError('non-finite values produced by %s' % name)
  tape = current_tape()
  if tape is not None and any(x.requires_grad for x in inputs):
    tape.record(name, out, inputs, vjp)
  return out


def _broadcast_shapes(op_name, a, b):
  try:
    return onp.broadcast(onp.empty(a.shape, onp.bool_),
                         onp.empty(b.shape, onp.bool_)).shape
  except ValueError:
    raise DimensionError(op_name, a.shape, b.shape, 'not broadcastable')


# Elementwise ops.


def add(a, b):
  a, b = as_tensor(a), as_tensor(b)
  _broadcast_shapes('add', a, b)
  return _op('add', a.data + b.data, (a, b), lambda g: (g, g))


def subtract(a, b):
  a, b = as_tensor(a), as_tensor(b)
  _broadcast_shapes('subtract', a, b)
  return _op('subtract', a.data - b.data, (a, b), lambda g: (g, -g))


def multiply(a, b):
  a, b = as_tensor(a), as_tensor(b)
  _broadcast_shapes('multiply', a, b)
  return _op('multiply', a.data * b.data, (a, b),
             lambda g: (g * b.data, g * a.data))


def divide(a, b):
  a, b = as_tensor(a), as_tensor(b)
  _broadcast_shapes('divide', a, b)
  return _op('divide', a.data / b.data, (a, b),
             lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def negative(x):
  x = as_tensor(x)
  return _op('negative', -x.data, (x,), lambda g: (-g,))


def scale(x, c):
  """Multiplies x by the Python scalar c."""
  x = as_tensor(x)
  c = onp.float32(c)
  return _op('scale', x.data * c, (x,), lambda g: (g * c,))


def square(x):
  x = as_tensor(x)
  return _op('square', x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def exp(x):
  x = as_tensor(x)
  y = onp.exp(x.data)
  return _op('exp', y, (x,), lambda g: (g * y,))


def log(x):
  x = as_tensor(x)
  return _op('log', onp.log(x.data), (x,), lambda g: (g / x.data,))


_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu(x):
  """Exact GELU, x * Phi(x), with Phi the standard normal CDF via erf."""
  x = as_tensor(x)
  x64 = x.data.astype(onp.float64)
  cdf = 0.5 * (1.0 + sp_special.erf(x64 * _SQRT_HALF))

  def vjp(g):
    pdf = _INV_SQRT_2PI * onp.exp(-0.5 * x64 * x64)
    return (g * (cdf + x64 * pdf),)

  return _op('gelu', x64 * cdf, (x,), vjp)


# Shape ops.


def reshape(x, shape):
  x = as_tensor(x)
  shape = tuple(int(d) for d in shape)
  if int(onp.prod(shape)) != x.size or any(d <= 0 for d in shape):
    raise ShapeError('cannot reshape %s into %s' % (x.shape, shape))
  in_shape = x.shape
  return _op('reshape', x.data.reshape(shape), (x,),
             lambda g: (g.reshape(in_shape),))


def permute(x, axes):
  x = as_tensor(x)
  axes = tuple(int(a) for a in axes)
  if sorted(axes) != list(range(x.ndim)):
    raise ShapeError('permutation %s does not match rank %d' % (axes, x.ndim))
  inverse = tuple(onp.argsort(axes))
  return _op('permute', onp.transpose(x.data, axes), (x,),
             lambda g: (onp.transpose(g, inverse),))


def swap_last(x):
  """Swaps the last two axes."""
  axes = list(range(as_tensor(x).ndim))
  axes[-2], axes[-1] = axes[-1], axes[-2]
  return permute(x, axes)


def stop_gradient(x):
  """Returns a constant copy of x that gradients do not flow through."""
  return Tensor(values(x))


# Reductions and contractions.


def _expand_reduced(g, in_shape, axis, keepdims):
  if axis is not None and not keepdims:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = sorted(a % len(in_shape) for a in axes)
    for a in axes:
      g = onp.expand_dims(g, a)
  return onp.broadcast_to(g, in_shape)


def sum_(x, axis=None, keepdims=False):
  x = as_tensor(x)
  in_shape = x.shape
  out = x.data.astype(onp.float64).sum(axis=axis, keepdims=keepdims)
  return _op('sum', out, (x,),
             lambda g: (_expand_reduced(g, in_shape, axis, keepdims),))


def mean(x, axis=None, keepdims=False):
  x = as_tensor(x)
  in_shape = x.shape
  out = x.data.astype(onp.float64).mean(axis=axis, keepdims=keepdims)
  count = x.size // max(1, onp.asarray(out).size)
  return _op('mean', out, (x,),
             lambda g: (_expand_reduced(g, in_shape, axis, keepdims) / count,))


def matmul(a, b):
  """Batched matrix product over the last two axes, leading axes broadcast.

  Args:
    a: Tensor of shape (..., n, k).
    b: Tensor of shape (..., k, m).

  Returns:
    Tensor of shape (..., n, m), accumulated in float64.

  Raises:
    ShapeError: if an operand has fewer than two axes.
    DimensionError: if the contracted dimensions differ.
  """
  a, b = as_tensor(a), as_tensor(b)
  if a.ndim < 2 or b.ndim < 2:
    raise ShapeError('matmul needs operands with at least 2 axes, got %s and '
                     '%s' % (a.shape, b.shape))
  if a.shape[-1] != b.shape[-2]:
    raise DimensionError('matmul', a.shape, b.shape,
                         'inner dimensions %d != %d' % (a.shape[-1],
                                                        b.shape[-2]))
  try:
    onp.broadcast(onp.empty(a.shape[:-2], onp.bool_),
                  onp.empty(b.shape[:-2], onp.bool_))
  except ValueError:
    raise DimensionError('matmul', a.shape, b.shape, 'batch axes differ')
  a64 = a.data.astype(onp.float64)
  b64 = b.data.astype(onp.float64)

  def vjp(g):
    g64 = g.astype(onp.float64)
    ga = onp.matmul(g64, onp.swapaxes(b64, -1, -2))
    gb = onp.matmul(onp.swapaxes(a64, -1, -2), g64)
    return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

  return _op('matmul', onp.matmul(a64, b64), (a, b), vjp)


def softmax(x, axis=-1):
  x = as_tensor(x)
  if x.ndim == 0:
    raise ShapeError('softmax needs at least one axis')
  x64 = x.data.astype(onp.float64)
  e = onp.exp(x64 - x64.max(axis=axis, keepdims=True))
  y = e / e.sum(axis=axis, keepdims=True)

  def vjp(g):
    g64 = g.astype(onp.float64)
    return (y * (g64 - (g64 * y).sum(axis=axis, keepdims=True)),)

  return _op('softmax', y, (x,), vjp)


def layer_norm(x, gain, offset, epsilon=1e-5):
  """Normalizes the last axis to zero mean and unit variance, then scales."""
  x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
  d = x.shape[-1]
  if gain.shape != (d,) or offset.shape != (d,):
    raise DimensionError('layer_norm', x.shape, gain.shape,
                         'gain and offset must match the last axis')
  x64 = x.data.astype(onp.float64)
  mu = x64.mean(axis=-1, keepdims=True)
  centered = x64 - mu
  inv = 1.0 / onp.sqrt((centered * centered).mean(axis=-1, keepdims=True) +
                       epsilon)
  xhat = centered * inv
  gain64 = gain.data.astype(onp.float64)

  def vjp(g):
    g64 = g.astype(onp.float64)
    dxhat = g64 * gain64
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) -
                xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    lead = tuple(range(x.ndim - 1))
    return (dx, (g64 * xhat).sum(axis=lead), g64.sum(axis=lead))

  return _op('layer_norm', xhat * gain64 + offset.data, (x, gain, offset), vjp)


# Convolutions with stride equal to the kernel size.


def conv2d(x, kernel):
  """Non-overlapping 2-d convolution of NCHW input.

  Args:
    x: Tensor (B, C, H, W).
    kernel: Tensor (D, C, P, P); H and W must be multiples of P.

  Returns:
    Tensor (B, D, H // P, W // P).
  """
  x, kernel = as_tensor(x), as_tensor(kernel)
  if x.ndim != 4 or kernel.ndim != 4:
    raise ShapeError('conv2d needs 4-d input and kernel, got %s and %s' %
                     (x.shape, kernel.shape))
  b, c, h, w = x.shape
  d, kc, p, q = kernel.shape
  if kc != c or p != q or h % p or w % p:
    raise DimensionError('conv2d', x.shape, kernel.shape)
  rows, cols = h // p, w // p
  patches = reshape(x, (b, c, rows, p, cols, p))
  patches = permute(patches, (0, 2, 4, 1, 3, 5))
  patches = reshape(patches, (b, rows * cols, c * p * p))
  flat_kernel = swap_last(reshape(kernel, (d, c * p * p)))
  out = matmul(patches, flat_kernel)
  return permute(reshape(out, (b, rows, cols, d)), (0, 3, 1, 2))


def deconv2d(x, kernel):
  """Transposed counterpart of `conv2d`.

  Args:
    x: Tensor (B, D, h, w).
    kernel: Tensor (D, C, P, P).

  Returns:
    Tensor (B, C, h * P, w * P).
  """
  x, kernel = as_tensor(x), as_tensor(kernel)
  if x.ndim != 4 or kernel.ndim != 4:
    raise ShapeError('deconv2d needs 4-d input and kernel, got %s and %s' %
                     (x.shape, kernel.shape))
  b, d, rows, cols = x.shape
  kd, c, p, q = kernel.shape
  if kd != d or p != q:
    raise DimensionError('deconv2d', x.shape, kernel.shape)
  tokens = reshape(permute(x, (0, 2, 3, 1)), (b, rows * cols, d))
  out = matmul(tokens, reshape(kernel, (d, c * p * p)))
  out = reshape(out, (b, rows, cols, c, p, p))
  out = permute(out, (0, 3, 1, 4, 2, 5))
  return reshape(out, (b, c, rows * p, cols * p))


# Trees of parameters.


def nested_map(f, x):
  """Map the function f to the nested structure x (dicts, tuples, lists)."""
  if isinstance(x, list):
    return [nested_map(f, y) for y in x]
  if isinstance(x, tuple):
    return tuple([nested_map(f, y) for y in x])
  if isinstance(x, dict):
    return collections.OrderedDict((k, nested_map(f, v)) for (k, v)
                                   in x.items())
  return f(x)


# Random numbers.


class RandomBackend(object):
  """Stateless random functions on `numpy.random.SeedSequence` keys."""

  def get_prng(self, seed):
    return onp.random.SeedSequence(int(seed))

  def split(self, prng, num=2):
    """Derives `num` child keys; the parent key is left unchanged."""
    return tuple(
        onp.random.SeedSequence(prng.entropy,
                                spawn_key=tuple(prng.spawn_key) + (i,))
        for i in range(num))

  def generator(self, prng):
    return onp.random.Generator(onp.random.PCG64(prng))

  def normal(self, prng, shape, stddev=1.0):
    values = self.generator(prng).standard_normal(tuple(shape))
    return (stddev * values).astype(onp.float32)

  def uniform(self, prng, shape, minval=0.0, maxval=1.0):
    values = self.generator(prng).uniform(minval, maxval, tuple(shape))
    return values.astype(onp.float32)


random = RandomBackend()


def finite_difference(fn, x, positions, eps=1e-2):
  """Central finite differences of a scalar function of one array.

  Args:
    fn: function mapping a float32 array shaped like x to a float.
    x: the point to differentiate at.
    positions: flat indices into x to perturb.
    eps: perturbation size.

  Returns:
    float64 array with one estimate per position.
  """
  x = onp.array(x, dtype=onp.float32)
  estimates = []
  for pos in positions:
    idx = onp.unravel_index(int(pos), x.shape)
    orig = x[idx]
    hi, lo = onp.float32(orig + eps), onp.float32(orig - eps)
    x[idx] = hi
    f_hi = float(fn(onp.array(x)))
    x[idx] = lo
    f_lo = float(fn(onp.array(x)))
    x[idx] = orig
    estimates.append((f_hi - f_lo) / (float(hi) - float(lo)))
  return onp.array(estimates, dtype=onp.float64)
