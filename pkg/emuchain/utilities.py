# Copyright 2020 The Emuchain Authors.
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

# Lint as: python3
"""Library of utility functions, multi-attribute utilities and gambles."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from typing import Any, Dict, Optional, Sequence, Text, Tuple, Union

from emuchain import core
import gin
import numpy as np
from scipy import optimize

FORMAT_VERSION = 1
PROBABILITY_TOLERANCE = 1e-12


# ---------------------- Utility forms -----------------------------------------
class Utility(object):
  """Base class to implement a single-attribute utility.

  Users should override compute_utility() to define the actual utility.
  Parameters of the utility are passed through the constructor.
  """

  form = None
  concave = False

  def __init__(self, name):
    self.name = name

  def __call__(self, *args, **kwargs):
    """Alias to compute_utility."""
    return self.compute_utility(*args, **kwargs)

  def compute_utility(self, rewards):
    """Subclasses must implement compute_utility().

    Args:
      rewards: Array of rewards of any shape.

    Returns:
      Array of utilities of the same shape.

    Raises:
      UtilityDomainError: For rewards outside the utility's domain.
    """
    raise NotImplementedError

  def probe(self) -> np.ndarray:
    """Rewards at which monotonicity is checked."""
    return np.linspace(-100.0, 100.0, 201)

  def to_json(self) -> Dict[Text, Any]:
    raise NotImplementedError


@gin.register
class Linear(Utility):
  """Risk-neutral utility U(x) = x."""

  form = 'linear'

  def __init__(self, name='linear'):
    super(Linear, self).__init__(name=name)

  def compute_utility(self, rewards):
    return np.asarray(rewards, np.float64)

  def to_json(self):
    return {'type': self.form}


@gin.register
class LogShifted(Utility):
  """Risk-averse utility U(x) = log(x + c), defined for x > -c."""

  form = 'log_shifted'
  concave = True

  def __init__(self, c=1.0, name='log_shifted'):
    super(LogShifted, self).__init__(name=name)
    self.c = float(c)

  def compute_utility(self, rewards):
    shifted = np.asarray(rewards, np.float64) + self.c
    if np.any(shifted <= 0.0):
      bad = np.ravel(shifted)[np.argmin(np.ravel(shifted))] - self.c
      raise core.UtilityDomainError(
          'Reward {} is outside the domain x > {} of log(x + {}).'.format(
              bad, -self.c, self.c), reward=float(bad))
    return np.log(shifted)

  def probe(self):
    step = 1e-6 * (1.0 + abs(self.c))
    return np.linspace(-self.c + step, -self.c + 200.0, 201)

  def to_json(self):
    return {'type': self.form, 'c': self.c}


@gin.register
class NegativeExponential(Utility):
  """Constant absolute risk aversion, U(x) = (1 - exp(-a x)) / a."""

  form = 'negative_exponential'
  concave = True

  def __init__(self, risk_coefficient=1.0, name='negative_exponential'):
    super(NegativeExponential, self).__init__(name=name)
    if risk_coefficient <= 0.0:
      raise ValueError('risk_coefficient must be > 0, got {}.'.format(
          risk_coefficient))
    self.risk_coefficient = float(risk_coefficient)

  def compute_utility(self, rewards):
    a = self.risk_coefficient
    return -np.expm1(-a * np.asarray(rewards, np.float64)) / a

  def probe(self):
    return np.linspace(-10.0, 10.0, 201) / self.risk_coefficient

  def to_json(self):
    return {'type': self.form, 'risk_coefficient': self.risk_coefficient}


@gin.register
class Tabulated(Utility):
  """Piecewise-linear utility through (reward, utility) knots."""

  form = 'tabulated'

  def __init__(self, rewards=(0.0, 1.0), utilities=(0.0, 1.0),
               name='tabulated'):
    super(Tabulated, self).__init__(name=name)
    self.rewards = core.frozen_array(rewards, ndim=1)
    self.utilities = core.frozen_array(utilities, ndim=1)
    if self.rewards.size < 2 or self.rewards.shape != self.utilities.shape:
      raise ValueError('Tabulated utility needs >= 2 matching knots.')
    if np.any(np.diff(self.rewards) <= 0.0):
      raise ValueError('Tabulated rewards must be strictly increasing.')
    slopes = np.diff(self.utilities) / np.diff(self.rewards)
    self.concave = bool(np.all(np.diff(slopes) < 0.0))

  def compute_utility(self, rewards):
    rewards = np.asarray(rewards, np.float64)
    outside = (rewards < self.rewards[0]) | (rewards > self.rewards[-1])
    if np.any(outside):
      bad = float(np.ravel(rewards)[np.argmax(np.ravel(outside))])
      raise core.UtilityDomainError(
          'Reward {} is outside the tabulated range [{}, {}].'.format(
              bad, self.rewards[0], self.rewards[-1]), reward=bad)
    return np.interp(rewards, self.rewards, self.utilities)

  def probe(self):
    return np.linspace(self.rewards[0], self.rewards[-1], 201)

  def to_json(self):
    return {'type': self.form, 'rewards': self.rewards.tolist(),
            'utilities': self.utilities.tolist()}


@gin.register
class Affine(Utility):
  """scale * base(x) + offset, with scale > 0."""

  form = 'affine'

  def __init__(self, base, scale=1.0, offset=0.0, name='affine'):
    super(Affine, self).__init__(name=name)
    if scale <= 0.0:
      raise ValueError('Affine scale must be > 0, got {}.'.format(scale))
    self.base = base
    self.scale = float(scale)
    self.offset = float(offset)
    self.concave = base.concave

  def compute_utility(self, rewards):
    return self.scale * self.base(rewards) + self.offset

  def probe(self):
    return self.base.probe()

  def to_json(self):
    return {'type': self.form, 'base': self.base.to_json(),
            'scale': self.scale, 'offset': self.offset}


FORMS = {
    'linear': Linear,
    'log_shifted': LogShifted,
    'negative_exponential': NegativeExponential,
    'tabulated': Tabulated,
}


def utility_from_json(doc: Dict[Text, Any]) -> Utility:
  doc = dict(doc)
  form = doc.pop('type')
  if form == 'affine':
    return Affine(utility_from_json(doc.pop('base')), **doc)
  if form not in FORMS:
    raise ValueError('Unknown utility form {}, options are {}.'.format(
        form, sorted(FORMS)))
  return FORMS[form](**doc)


# ---------------------- Multi-attribute utility -------------------------------
@gin.configurable
class UtilitySpec(object):
  """Additive weighted utility over reward attributes.

  U(r) = scale * sum_j weights[j] * forms[j](r[j]) + offset.
  """

  def __init__(self,
               forms: Union[Utility, Sequence[Utility]] = None,
               weights: Optional[Sequence[float]] = None,
               attribute_names: Optional[Sequence[Text]] = None,
               scale: float = 1.0,
               offset: float = 0.0):
    """Constructor.

    Args:
      forms: One utility per attribute, or a single utility for one
        attribute. Defaults to Linear().
      weights: Non-negative weights, at least one positive. Default all ones.
      attribute_names: Names of the reward attributes.
      scale: Positive overall scale.
      offset: Overall offset.

    Raises:
      ValueError: On invalid weights or a utility that is not strictly
        increasing on its probe grid.
    """
    if forms is None:
      forms = Linear()
    self.forms = tuple(core.make_iterable(forms))
    k = len(self.forms)
    if weights is None:
      weights = np.ones(k)
    self.weights = core.frozen_array(weights, ndim=1)
    if self.weights.size != k:
      raise ValueError('Got {} weights for {} attributes.'.format(
          self.weights.size, k))
    if np.any(self.weights < 0.0) or not np.any(self.weights > 0.0):
      raise ValueError('Weights must be >= 0 with at least one > 0.')
    if attribute_names is None:
      attribute_names = ['r{}'.format(j) for j in range(k)] if k > 1 else ['r']
    self.attribute_names = tuple(attribute_names)
    if len(self.attribute_names) != k:
      raise ValueError('Got {} attribute names for {} attributes.'.format(
          len(self.attribute_names), k))
    if scale <= 0.0:
      raise ValueError('scale must be > 0, got {}.'.format(scale))
    self.scale = float(scale)
    self.offset = float(offset)
    for form in self.forms:
      values = form(form.probe())
      if not np.all(np.diff(values) > 0.0):
        raise ValueError('Utility {} is not strictly increasing.'.format(
            form.name))

  @property
  def n_attributes(self) -> int:
    return len(self.forms)

  @property
  def concave(self) -> bool:
    """Strictly concave in every attribute with positive weight."""
    return all(f.concave for f, w in zip(self.forms, self.weights) if w > 0)

  def __call__(self, rewards) -> np.ndarray:
    """Utility of rewards [..., n_attributes] (or [...] for one attribute)."""
    rewards = np.asarray(rewards, np.float64)
    if self.n_attributes == 1 and (rewards.ndim == 0 or rewards.shape[-1] != 1):
      rewards = rewards[..., np.newaxis]
    if rewards.shape[-1] != self.n_attributes:
      raise ValueError('Rewards have {} attributes, utility has {}.'.format(
          rewards.shape[-1], self.n_attributes))
    total = 0.0
    for j, (form, weight) in enumerate(zip(self.forms, self.weights)):
      if weight > 0.0:
        total = total + weight * form(rewards[..., j])
    return self.scale * np.asarray(total) + self.offset

  def affine(self, scale: float, offset: float = 0.0) -> 'UtilitySpec':
    """scale * U + offset, an equivalent utility for any scale > 0."""
    return UtilitySpec(self.forms, self.weights, self.attribute_names,
                       self.scale * scale, self.offset * scale + offset)

  def to_json(self) -> Dict[Text, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'attributes': [{'name': n, 'weight': float(w), 'form': f.to_json()}
                       for n, w, f in zip(self.attribute_names, self.weights,
                                          self.forms)],
        'scale': self.scale,
        'offset': self.offset,
    }

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'UtilitySpec':
    attributes = doc['attributes']
    return cls([utility_from_json(a['form']) for a in attributes],
               [a.get('weight', 1.0) for a in attributes],
               [a['name'] for a in attributes],
               doc.get('scale', 1.0), doc.get('offset', 0.0))


# ---------------------- Gambles -----------------------------------------------
class Gamble(object):
  """Rewards with probabilities summing to one."""

  def __init__(self, outcomes: Sequence[Tuple[Any, float]]):
    if not outcomes:
      raise ValueError('A gamble needs at least one outcome.')
    rewards = [np.atleast_1d(np.asarray(r, np.float64)) for r, _ in outcomes]
    if len({r.shape for r in rewards}) != 1:
      raise ValueError('All rewards of a gamble need the same attributes.')
    self.rewards = core.frozen_array(np.stack(rewards), ndim=2)
    self.probabilities = core.frozen_array([p for _, p in outcomes], ndim=1)
    if np.any(self.probabilities < 0.0):
      raise ValueError('Probabilities must be >= 0.')
    total = float(np.sum(self.probabilities))
    if abs(total - 1.0) > PROBABILITY_TOLERANCE:
      raise ValueError('Probabilities sum to {!r}, not 1.'.format(total))

  @property
  def expected_reward(self) -> np.ndarray:
    return self.probabilities @ self.rewards


def utility_of_gamble(u: UtilitySpec, g: Gamble) -> float:
  """Expected utility sum_i p_i U(r_i)."""
  return float(np.sum(g.probabilities * u(g.rewards)))


def certainty_equivalent(u: UtilitySpec, g: Gamble) -> float:
  """The sure reward whose utility equals the gamble's expected utility.

  Only defined for single-attribute utilities. The risk premium of g is
  g.expected_reward - certainty_equivalent(u, g).
  """
  if u.n_attributes != 1:
    raise ValueError('Certainty equivalents need a single attribute.')
  target = utility_of_gamble(u, g)
  lower, upper = float(np.min(g.rewards)), float(np.max(g.rewards))
  if lower == upper:
    return lower
  return optimize.brentq(lambda x: float(u(x)) - target, lower, upper,
                         xtol=1e-12)
