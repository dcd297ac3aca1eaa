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
"""Input spaces, design sets and space-filling experimental designs."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from typing import Any, Dict, Optional, Sequence, Text, Tuple

from absl import logging
from emuchain import core
import gin
import numpy as np
from scipy.spatial import distance

FORMAT_VERSION = 1

# Define Types.
Dim = Tuple[Text, float, float]


# Input Space ------------------------------------------------------------------
class InputSpace(object):
  """Named, bounded input dimensions split into decisions and parameters."""

  def __init__(self,
               dims: Sequence[Dim],
               decision_dims: Sequence[Text] = ()):
    """Constructor.

    Args:
      dims: Sequence of (name, lower, upper) tuples, one per dimension.
      decision_dims: Names of the dimensions that are decision variables. All
        other dimensions are uncertain parameters.

    Raises:
      ValueError: If bounds are not strictly increasing, names repeat, or a
        decision dimension is not one of the dimension names.
    """
    if not dims:
      raise ValueError('An InputSpace needs at least one dimension.')
    self.dims = tuple((str(n), float(lo), float(hi)) for n, lo, hi in dims)
    for name, lower, upper in self.dims:
      if not lower < upper:
        raise ValueError('Dimension {} needs lower < upper, got [{}, {}].'
                         .format(name, lower, upper))
    if len(set(self.names)) != len(self.names):
      raise ValueError('Dimension names must be unique: {}'.format(self.names))
    unknown = [d for d in decision_dims if d not in self.names]
    if unknown:
      raise ValueError('Unknown decision dimensions: {}'.format(unknown))
    self.decision_dims = tuple(n for n in self.names if n in decision_dims)
    self.parameter_dims = tuple(
        n for n in self.names if n not in self.decision_dims)
    self.lower = core.frozen_array([d[1] for d in self.dims])
    self.upper = core.frozen_array([d[2] for d in self.dims])

  @property
  def names(self) -> Tuple[Text, ...]:
    return tuple(d[0] for d in self.dims)

  @property
  def n_dims(self) -> int:
    return len(self.dims)

  def index(self, name: Text) -> int:
    return self.names.index(name)

  def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """Boolean mask of the rows of points lying inside the bounds."""
    points = np.atleast_2d(points)
    inside = ((points >= self.lower - atol) & (points <= self.upper + atol))
    return np.all(inside, axis=1)

  def standardize(self, points: np.ndarray) -> np.ndarray:
    return core.standardize(points, self.lower, self.upper)

  def subspace(self, names: Sequence[Text]) -> 'InputSpace':
    """The space restricted to the given dimension names (in that order)."""
    dims = [self.dims[self.index(n)] for n in names]
    return InputSpace(dims, [n for n in names if n in self.decision_dims])

  def __eq__(self, other):
    return (isinstance(other, InputSpace) and self.dims == other.dims and
            self.decision_dims == other.decision_dims)

  def __ne__(self, other):
    return not self == other

  def __hash__(self):
    return hash((self.dims, self.decision_dims))

  def __repr__(self):
    return 'InputSpace({})'.format(', '.join(
        '{}=[{}, {}]'.format(*d) for d in self.dims))

  def to_json(self) -> Dict[Text, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'dims': [{'name': n, 'lower': lo, 'upper': hi}
                 for n, lo, hi in self.dims],
        'decision_dims': list(self.decision_dims),
    }

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'InputSpace':
    dims = [(d['name'], d['lower'], d['upper']) for d in doc['dims']]
    return cls(dims, doc.get('decision_dims', ()))


# Design Set -------------------------------------------------------------------
class DesignSet(object):
  """Design points in native units, optionally with simulator responses."""

  def __init__(self,
               points: np.ndarray,
               space: InputSpace,
               responses: Optional[np.ndarray] = None,
               output_names: Sequence[Text] = ()):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != space.n_dims:
      raise ValueError('Design points have {} columns but the space has {} '
                       'dimensions.'.format(points.shape[1], space.n_dims))
    if points.shape[0] < 1:
      raise ValueError('A DesignSet needs at least one point.')
    outside = ~space.contains(points)
    if np.any(outside):
      raise ValueError('Design row {} lies outside {}.'.format(
          int(np.argmax(outside)), space))
    if np.unique(points, axis=0).shape[0] != points.shape[0]:
      raise ValueError('Design points must be pairwise distinct.')
    self.points = core.frozen_array(points)
    self.space = space
    self.output_names = tuple(output_names)
    if responses is None:
      self.responses = None
    else:
      responses = np.asarray(responses, dtype=np.float64)
      if responses.ndim == 1:
        responses = responses[:, np.newaxis]
      if responses.shape != (self.n_runs, len(self.output_names)):
        raise ValueError(
            'Responses of shape {} do not match {} runs and outputs {}.'.format(
                responses.shape, self.n_runs, self.output_names))
      self.responses = core.frozen_array(responses)

  @property
  def n_runs(self) -> int:
    return self.points.shape[0]

  @property
  def has_responses(self) -> bool:
    return self.responses is not None

  def column(self, output_name: Text) -> np.ndarray:
    if not self.has_responses:
      raise ValueError('Design has no responses.')
    if output_name not in self.output_names:
      raise ValueError('Unknown output {}, design has {}.'.format(
          output_name, self.output_names))
    return self.responses[:, self.output_names.index(output_name)]

  def with_responses(self,
                     responses: np.ndarray,
                     output_names: Sequence[Text]) -> 'DesignSet':
    return DesignSet(self.points, self.space, responses, output_names)

  def without_responses(self) -> 'DesignSet':
    return DesignSet(self.points, self.space)

  def select(self, rows) -> 'DesignSet':
    """A new DesignSet holding the given rows (index array or mask)."""
    responses = None if self.responses is None else self.responses[rows]
    return DesignSet(self.points[rows], self.space, responses,
                     self.output_names)

  def to_json(self) -> Dict[Text, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'space': self.space.to_json(),
        'points': self.points.tolist(),
        'output_names': list(self.output_names),
        'responses': None if self.responses is None else
                     self.responses.tolist(),
    }

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'DesignSet':
    responses = doc.get('responses')
    return cls(np.asarray(doc['points'], dtype=np.float64),
               InputSpace.from_json(doc['space']),
               None if responses is None else np.asarray(responses),
               doc.get('output_names', ()))


# Latin Hypercube --------------------------------------------------------------
def default_design_size(space: InputSpace) -> int:
  """Rule-of-thumb run count of ten runs per input dimension."""
  return 10 * space.n_dims


def _jittered_strata(n: int, n_dims: int, rng: np.random.Generator):
  """Unit-cube LHS: each column holds one point in each of n strata."""
  perms = np.stack([rng.permutation(n) for _ in range(n_dims)], axis=1)
  jitter = rng.uniform(size=(n, n_dims))
  return (perms + jitter) / n


def _min_distance(unit_points: np.ndarray) -> float:
  if unit_points.shape[0] < 2:
    return np.inf
  return float(np.min(distance.pdist(unit_points)))


@gin.configurable
def latin_hypercube(space: InputSpace,
                    n: int,
                    seed: int,
                    restarts: int = 20) -> DesignSet:
  """Maximin-jittered Latin hypercube over an InputSpace.

  Each of `restarts` candidate hypercubes stratifies every dimension into n
  equal-width cells with one uniformly jittered point per cell. The candidate
  with the largest minimum pairwise distance is returned.

  Args:
    space: The InputSpace to cover.
    n: Number of design points, at least 1.
    seed: Seed for the candidate generator. Equal (space, n, seed) gives a
      bit-identical design.
    restarts: Number of candidate hypercubes for the maximin selection.

  Returns:
    A DesignSet without responses.

  Raises:
    ValueError: If n < 1 or restarts < 1.
  """
  if n < 1:
    raise ValueError('latin_hypercube needs n >= 1, got {}.'.format(n))
  if restarts < 1:
    raise ValueError('restarts must be >= 1, got {}.'.format(restarts))
  rng = np.random.default_rng(seed)

  best, best_distance = None, -np.inf
  for _ in range(restarts):
    candidate = _jittered_strata(n, space.n_dims, rng)
    d = _min_distance(candidate)
    if d > best_distance:
      best, best_distance = candidate, d

  points = space.lower + best * (space.upper - space.lower)
  # Rounding can land exactly on the upper bound; stay inside the last cell.
  points = np.minimum(points, np.nextafter(space.upper, space.lower))
  logging.info('Latin hypercube: %d points in %d dims, min distance %.4g',
               n, space.n_dims, best_distance)
  return DesignSet(points, space)


def stratum_indices(design: DesignSet) -> np.ndarray:
  """Per-dimension stratum index of every design coordinate."""
  unit = (design.points - design.space.lower) / (
      design.space.upper - design.space.lower)
  return np.floor(unit * design.n_runs).astype(np.int64)
