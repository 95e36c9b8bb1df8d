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

"""Hirescast base optimizer class."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections

import numpy as onp

from hirescast.layers import base as layers


class Optimizer(object):
  """Optimizer object, base class. Maps per-parameter functions to trees."""

  def __init__(self, learning_rate, **init_opt_params):
    """Initialize the optimizer.

    Takes the initial optimizer parameters as keyword arguments. They are fed
    back to the optimizer in tree_update. They can be changed between updates,
    e.g. for learning rate schedules.

    The constructor should be overridden in derived classes to give names to the
    optimizer parameters, so the gin configuration can set them.

    Args:
      learning_rate: The initial learning rate.
      **init_opt_params: Initial values of any additional optimizer parameters.
    """
    init_opt_params['learning_rate'] = learning_rate
    self._init_opt_params = {
        name: float(value) for (name, value) in init_opt_params.items()
    }

  def init(self, params):
    """Create optimizer slots for the given parameters."""
    raise NotImplementedError

  def update(self, step, grads, params, slots, opt_params):
    """Update a single parameter array.

    Args:
      step: Current step.
      grads: Gradients.
      params: Parameters.
      slots: Optimizer slots (e.g. gradient moments).
      opt_params: Optimizer (hyper)parameters (e.g. learning rate, momentum).

    Returns:
      (new_params, new_slots)
    """
    raise NotImplementedError

  # End subclass interface.

  def tree_init(self, param_tree):
    """Returns (slots keyed by parameter path, initial opt_params)."""
    slots = collections.OrderedDict(
        (path, self.init(onp.asarray(param)))
        for path, param in layers.flatten_params(param_tree).items())
    return slots, dict(self._init_opt_params)

  def _update_and_check(self, step, grads, params, slots, opt_params):
    """Update a single parameter array and check types."""
    new_params, new_slots = self.update(
        step, grads, params, slots, opt_params)
    assert new_params.dtype == params.dtype, (
        'The dtype of the new parameter values (%s) is not the same as the '
        'old one (%s)' % (new_params.dtype, params.dtype))
    assert new_params.shape == params.shape
    return new_params, new_slots

  def tree_update(self, step, grad_tree, param_tree, slots, opt_params):
    """Updates every parameter of param_tree that has a gradient.

    Args:
      step: current step, starting at 0.
      grad_tree: gradients with the structure of param_tree (or a subtree of
        paths); parameters without a gradient are left unchanged.
      param_tree: nested dict of float32 arrays.
      slots: slots from tree_init, keyed by path.
      opt_params: optimizer parameters, e.g. with a scheduled learning rate.

    Returns:
      (new_param_tree, new_slots)
    """
    grads_flat = layers.flatten_params(grad_tree)
    params_flat = layers.flatten_params(param_tree)
    missing = sorted(set(grads_flat) - set(params_flat))
    if missing:
      raise KeyError('gradients for unknown parameters: %s' % missing)
    new_params = collections.OrderedDict()
    new_slots = collections.OrderedDict(slots)
    for path, param in params_flat.items():
      param = onp.asarray(param)
      grad = grads_flat.get(path)
      if grad is None:
        new_params[path] = param
        continue
      new_params[path], new_slots[path] = self._update_and_check(
          step, onp.asarray(grad, param.dtype), param, slots[path],
          opt_params)
    return layers.unflatten_params(new_params), new_slots


# Utilities.


def l2_norm(tree):
  """Compute the l2 norm of a tree of arrays, accumulated in float64."""
  leaves = layers.flatten_params(tree).values()
  return float(onp.sqrt(sum(onp.vdot(x, x) for x in
                            (onp.asarray(l, onp.float64) for l in leaves))))


def clip_grads(grad_tree, max_norm):
  """Clip gradients stored as a tree of arrays to maximum norm `max_norm`."""
  norm = l2_norm(grad_tree)
  if norm <= max_norm:
    return grad_tree
  scale = max_norm / norm
  return layers.nested_map(
      lambda g: (onp.asarray(g) * scale).astype(onp.float32), grad_tree)


# Optimizers.


class AdamW(Optimizer):
  """Adam with decoupled weight decay."""

  def __init__(self, learning_rate=1e-3, weight_decay_rate=1e-4,  # pylint: disable=useless-super-delegation
               b1=0.9, b2=0.999, eps=1e-8):
    """Create the AdamW optimizer.

    Args:
      learning_rate: a positive scalar value for the initial learning rate.
      weight_decay_rate: decay applied to the weights directly, scaled by the
        learning rate and not by the adaptive preconditioner.
      b1: optional, a positive scalar value for beta_1, the exponential decay
        rate for the first moment estimates (default 0.9).
      b2: optional, a positive scalar value for beta_2, the exponential decay
         rate for the second moment estimates (default 0.999).
      eps: optional, a positive scalar value for epsilon, a small constant for
        numerical stability (default 1e-8).
    """
    super(AdamW, self).__init__(
        learning_rate=learning_rate,
        weight_decay_rate=weight_decay_rate,
        b1=b1,
        b2=b2,
        eps=eps,
    )

  def init(self, params):
    m = onp.zeros(params.shape, onp.float64)
    v = onp.zeros(params.shape, onp.float64)
    return m, v

  def update(self, step, grads, params, slots, opt_params):
    m, v = slots
    learning_rate = opt_params['learning_rate']
    weight_decay_rate = opt_params['weight_decay_rate']
    b1 = opt_params['b1']
    b2 = opt_params['b2']
    eps = opt_params['eps']
    grads = grads.astype(onp.float64)
    m = (1 - b1) * grads + b1 * m  # First  moment estimate.
    v = (1 - b2) * (grads ** 2) + b2 * v  # Second moment estimate.
    mhat = m / (1 - b1 ** (step + 1))  # Bias correction.
    vhat = v / (1 - b2 ** (step + 1))
    update = mhat / (onp.sqrt(vhat) + eps) + weight_decay_rate * params
    params = params - (learning_rate * update).astype(params.dtype)
    return params, (m, v)
