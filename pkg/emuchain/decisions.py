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
"""Expected-utility decision support.

The expected utility U(d) = E[u(y(x, d))] of a decision is estimated by Monte
Carlo over an outcome model (usually a propagated model chain, discrepancy
included). Candidate decisions are screened in stages: an emulator of U over
the decisions bounds the unevaluated candidates, and any candidate whose upper
bound falls below the best lower bound is rejected. Multi-attribute problems
are screened by certain dominance and reduced to their Pareto boundary.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Text, Tuple

from absl import logging
from emuchain import chain
from emuchain import core
from emuchain import designs
from emuchain import emulators
from emuchain import utilities
import gin
import numpy as np

FORMAT_VERSION = 1
ORIENTATIONS = ('maximize', 'minimize')
QUANTILE_LEVELS = (5, 25, 50, 75, 95)
ACTIVE = 0

# Define Types.
Estimate = Tuple[float, float]
Evaluator = Callable[[np.ndarray, int], Estimate]


# ---------------------- Outcome models ----------------------------------------
class OutcomeModel(object):
  """Base class for anything that samples outcomes y(x, d) of a decision.

  Subclasses implement sample(decision, n_samples, seed) returning an array
  [n_samples, n_attributes].
  """

  def __init__(self, attribute_names: Sequence[Text]):
    self.attribute_names = tuple(attribute_names)

  @property
  def n_attributes(self) -> int:
    return len(self.attribute_names)

  def sample(self, decision, n_samples: int, seed: int) -> np.ndarray:
    raise NotImplementedError


class ChainOutcomes(OutcomeModel):
  """Outcomes are terminal (or named) columns of a propagated model graph."""

  def __init__(self,
               graph: chain.ModelGraph,
               exogenous: Mapping[Text, Any],
               columns: Optional[Sequence[Text]] = None):
    columns = list(columns or graph.terminal_columns)
    super(ChainOutcomes, self).__init__(columns)
    self.graph = graph
    self.exogenous = exogenous
    self._intermediate = any(c not in graph.terminal_columns for c in columns)

  def sample(self, decision, n_samples, seed):
    result = chain.propagate(self.graph, self.exogenous, decision, n_samples,
                             seed, keep_intermediate=self._intermediate)
    return np.stack([result.column(c) for c in self.attribute_names], axis=1)


class FunctionOutcomes(OutcomeModel):
  """Outcomes from fn(decision, rng, n_samples) -> [n_samples(, k)]."""

  def __init__(self,
               fn: Callable[..., np.ndarray],
               attribute_names: Sequence[Text] = ('y',)):
    super(FunctionOutcomes, self).__init__(attribute_names)
    self.fn = fn

  def sample(self, decision, n_samples, seed):
    rng = core.substream(seed, 'outcomes')
    values = np.asarray(self.fn(np.asarray(decision, np.float64), rng,
                                n_samples), np.float64)
    return values.reshape(n_samples, self.n_attributes)


# ---------------------- Expected utility --------------------------------------
def expected_utility(model: OutcomeModel,
                     u: utilities.UtilitySpec,
                     decision,
                     n_samples: int,
                     seed: int) -> Estimate:
  """Monte Carlo expected utility of one decision.

  Args:
    model: Outcome model; its attributes feed u in order.
    u: Utility over the model's attributes.
    decision: Decision vector (or dict by name for chain outcomes).
    n_samples: Number of outcome samples, >= 2.
    seed: Seed of the outcome samples.

  Returns:
    (estimate, standard error). The standard error is exactly 0 when every
    sampled utility is equal.

  Raises:
    UtilityDomainError: If an outcome falls outside the utility's domain; the
      offending reward and the decision are in `details`.
  """
  if n_samples < 2:
    raise ValueError('expected_utility needs n_samples >= 2.')
  outcomes = model.sample(decision, n_samples, seed)
  try:
    values = u(outcomes)
  except core.UtilityDomainError as e:
    if not isinstance(decision, dict):
      decision = np.asarray(decision, np.float64)
    e.details['decision'] = core.to_jsonable(decision)
    raise
  return _mean_and_error(values)


def _mean_and_error(values: np.ndarray) -> Estimate:
  if np.all(values == values[0]):
    return float(values[0]), 0.0
  return (float(np.mean(values)),
          float(np.std(values, ddof=1) / np.sqrt(values.size)))


class EUEvaluator(object):
  """Evaluator(decision, index) -> (estimate, se) for one utility.

  Candidate i is always sampled with the seed derived from (seed, i), so
  evaluators for different utilities share common random outcomes.
  """

  def __init__(self,
               model: OutcomeModel,
               u: utilities.UtilitySpec,
               n_samples: int,
               seed: int):
    self.model = model
    self.u = u
    self.n_samples = n_samples
    self.seed = seed

  def __call__(self, decision, index: int) -> Estimate:
    return expected_utility(self.model, self.u, decision, self.n_samples,
                            core.derive_seed(self.seed, 'decide', index))


class AttributeEvaluator(object):
  """Monte Carlo mean of one outcome attribute, for Pareto analysis."""

  def __init__(self, model: OutcomeModel, attribute: Text, n_samples: int,
               seed: int):
    if attribute not in model.attribute_names:
      raise ValueError('Unknown attribute {}, model has {}.'.format(
          attribute, model.attribute_names))
    self.model = model
    self.column = model.attribute_names.index(attribute)
    self.n_samples = n_samples
    self.seed = seed

  def __call__(self, decision, index: int) -> Estimate:
    values = self.model.sample(decision, self.n_samples,
                               core.derive_seed(self.seed, 'decide', index))
    return _mean_and_error(values[:, self.column])


# ---------------------- Decision sets -----------------------------------------
class DecisionSet(object):
  """Candidate decisions with a status each: 0 = active, k = rejected at k.

  Instances are immutable; reject() returns an updated copy and refuses to
  reactivate a rejected decision.
  """

  def __init__(self,
               candidates,
               space: Optional[designs.InputSpace] = None,
               status: Optional[Sequence[int]] = None,
               estimates: Optional[np.ndarray] = None,
               bounds: Optional[np.ndarray] = None,
               history: Sequence[Dict[Text, Any]] = ()):
    candidates = np.asarray(candidates, np.float64)
    if candidates.ndim == 1:
      candidates = candidates[:, np.newaxis]
    if space is None:
      lower = np.min(candidates, axis=0)
      upper = np.max(candidates, axis=0)
      upper = np.where(upper > lower, upper, lower + 1.0)
      space = designs.InputSpace(
          [('d{}'.format(j), lower[j], upper[j])
           for j in range(candidates.shape[1])])
    self.space = space
    # Validates bounds and distinctness.
    self.design = designs.DesignSet(candidates, space)
    self.candidates = self.design.points
    n = self.n_candidates
    self.status = np.zeros(n, np.int64) if status is None else np.array(
        status, np.int64)
    if self.status.shape != (n,) or np.any(self.status < 0):
      raise ValueError('Invalid status vector {}.'.format(self.status))
    self.estimates = (np.full(n, np.nan) if estimates is None else
                      core.frozen_array(estimates))
    self.bounds = (np.full((n, 2), np.nan) if bounds is None else
                   core.frozen_array(bounds))
    self.history = list(history)

  @property
  def n_candidates(self) -> int:
    return self.candidates.shape[0]

  @property
  def active_indices(self) -> np.ndarray:
    return np.flatnonzero(self.status == ACTIVE)

  @property
  def active(self) -> np.ndarray:
    return self.candidates[self.active_indices]

  def replace(self, **changes) -> 'DecisionSet':
    kwargs = dict(candidates=self.candidates, space=self.space,
                  status=self.status, estimates=self.estimates,
                  bounds=self.bounds, history=self.history)
    kwargs.update(changes)
    return DecisionSet(**kwargs)

  def reject(self, indices, stage: int) -> 'DecisionSet':
    indices = np.asarray(indices, np.int64)
    if stage < 1:
      raise ValueError('Stages are numbered from 1.')
    if np.any(self.status[indices] != ACTIVE):
      raise core.DecisionError('Rejected decisions cannot be rejected again.')
    status = self.status.copy()
    status[indices] = stage
    return self.replace(status=status)

  def to_json(self) -> Dict[Text, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'space': self.space.to_json(),
        'candidates': self.candidates.tolist(),
        'status': self.status.tolist(),
        'estimates': core.to_jsonable(
            [None if np.isnan(e) else e for e in self.estimates]),
        'bounds': [[None if np.isnan(b) else float(b) for b in row]
                   for row in self.bounds],
        'history': core.to_jsonable(self.history),
    }


# ---------------------- Staged rejection --------------------------------------
def _evenly_spaced(indices: np.ndarray, count: int) -> np.ndarray:
  if count >= indices.size:
    return indices
  positions = np.unique(np.round(np.linspace(0, indices.size - 1, count)))
  return indices[positions.astype(np.int64)]


@gin.configurable
def staged_rejection(candidates: DecisionSet,
                     evaluator: Evaluator,
                     k_bound: float = 3.0,
                     stages: int = 4,
                     budget: Optional[int] = None,
                     trend_basis: Text = 'linear',
                     **fit_kwargs) -> DecisionSet:
  """Reject decisions that certainly cannot be optimal.

  At every stage up to `budget` active, not yet evaluated candidates (evenly
  spaced through the active list) are evaluated, and a utility emulator is
  fitted to all evaluations so far. Bounds are

    evaluated:    estimate +- k_bound * se
    unevaluated:  emulator mean +- k_bound * sqrt(emulator var + max se^2)

  and a candidate is rejected when its upper bound lies below the largest
  lower bound. The candidate with the largest lower bound always survives.

  Args:
    candidates: DecisionSet with at least 2 active candidates.
    evaluator: Callable (decision, candidate index) -> (estimate, se).
    k_bound: Bound half-width in standard deviations, > 0.
    stages: Number of stages.
    budget: Evaluations per stage; None evaluates every active candidate at
      the first stage.
    trend_basis: Trend basis of the utility emulator.
    **fit_kwargs: Passed to emulators.fit().

  Returns:
    The DecisionSet with updated statuses, per-candidate estimates (NaN where
    never evaluated), the last bounds and a per-stage history.

  Raises:
    DecisionError: With fewer than 2 active candidates, or a budget smaller
      than the trend basis count.
  """
  if k_bound <= 0.0:
    raise ValueError('k_bound must be > 0, got {}.'.format(k_bound))
  if candidates.active_indices.size < 2:
    raise core.DecisionError('Staged rejection needs >= 2 active candidates.')
  n_basis = emulators.basis_count(trend_basis, candidates.space.n_dims)
  if budget is not None and budget < n_basis:
    raise core.DecisionError(
        'Budget {} is smaller than the {} trend basis count {}.'.format(
            budget, trend_basis, n_basis), budget=budget, basis_count=n_basis)

  n = candidates.n_candidates
  estimates = np.array(candidates.estimates, np.float64)
  errors = np.full(n, np.nan)
  result = candidates
  history = list(candidates.history)
  for stage in range(1, stages + 1):
    active = result.active_indices
    if active.size < 2:
      break
    pending = active[np.isnan(estimates[active])]
    picks = _evenly_spaced(pending, budget or pending.size)
    for i in picks:
      estimates[i], errors[i] = evaluator(result.candidates[i], int(i))
    evaluated = np.flatnonzero(~np.isnan(estimates))
    se_max = float(np.max(np.nan_to_num(errors)))

    centre = estimates.copy()
    spread = k_bound * np.where(np.isnan(estimates), np.nan,
                                np.nan_to_num(errors))
    unevaluated = active[np.isnan(estimates[active])]
    if unevaluated.size:
      design = designs.DesignSet(result.candidates[evaluated], result.space,
                                 estimates[evaluated], ['utility'])
      em = emulators.fit(design, trend_basis, **fit_kwargs)
      pred = em.predict_batch(result.candidates[unevaluated])
      centre[unevaluated] = pred.mean
      spread[unevaluated] = k_bound * np.sqrt(pred.variance + se_max**2)
    lower, upper = centre - spread, centre + spread

    best_lower = float(np.max(lower[active]))
    width = float(np.max(upper[active]) - np.min(lower[active]))
    tolerance = 1e-9 * (width if width > 0.0 else 1.0)
    doomed = active[upper[active] < best_lower - tolerance]
    keep = active[np.argmax(lower[active])]
    doomed = doomed[doomed != keep]
    if doomed.size:
      result = result.reject(doomed, stage)
    bounds = np.stack([lower, upper], axis=1)
    history.append({
        'stage': stage,
        'evaluated': int(evaluated.size),
        'active': int(result.active_indices.size),
        'rejected': int(doomed.size),
        'best_lower': best_lower,
    })
    logging.info('Stage %d: %d evaluated, %d rejected, %d active '
                 '(best lower bound %.6g).', stage, evaluated.size,
                 doomed.size, result.active_indices.size, best_lower)
    result = result.replace(estimates=estimates.copy(), bounds=bounds,
                             history=history)
  return result


@gin.configurable
def near_optimal(decisions: DecisionSet, epsilon: float = 0.05) -> np.ndarray:
  """Active decisions within epsilon of the best, as a fraction of the range.

  Centres are the final-stage bound midpoints, so unevaluated survivors are
  judged by the emulator.
  """
  if not 0.0 <= epsilon <= 1.0:
    raise ValueError('epsilon must be in [0, 1], got {}.'.format(epsilon))
  centre = np.mean(decisions.bounds, axis=1)
  known = ~np.isnan(centre)
  active = decisions.active_indices
  active = active[known[active]]
  if not active.size:
    return active
  best = np.max(centre[active])
  value_range = np.max(centre[known]) - np.min(centre[known])
  return active[centre[active] >= best - epsilon * value_range]


def compare_stakeholders(model: OutcomeModel,
                         utility_specs: Mapping[Text, utilities.UtilitySpec],
                         candidates: DecisionSet,
                         n_samples: int,
                         seed: int,
                         **kwargs) -> Dict[Text, Any]:
  """Run staged rejection once per named utility and diff the survivors.

  Every stakeholder sees the same outcome samples. No aggregation across
  stakeholders is attempted.
  """
  survivors = {}
  for name, u in utility_specs.items():
    result = staged_rejection(candidates, EUEvaluator(model, u, n_samples,
                                                      seed), **kwargs)
    survivors[name] = set(result.active_indices.tolist())
  common = set.intersection(*survivors.values()) if survivors else set()
  only = {}
  for name, kept in survivors.items():
    others = set().union(*(s for n, s in survivors.items() if n != name))
    only[name] = sorted(kept - others)
  return {
      'survivors': {k: sorted(v) for k, v in survivors.items()},
      'common': sorted(common),
      'only': only,
  }


# ---------------------- Pareto boundary ---------------------------------------
def dominance_matrix(values: np.ndarray) -> np.ndarray:
  """D[i, j] is True when row i dominates row j (all >=, one >)."""
  values = np.asarray(values, np.float64)
  geq = np.all(values[:, np.newaxis, :] >= values[np.newaxis, :, :], axis=-1)
  gt = np.any(values[:, np.newaxis, :] > values[np.newaxis, :, :], axis=-1)
  return geq & gt


def pareto_fronts(values: np.ndarray):
  """Fast non-dominated sort of rows (all maximized) into successive fronts."""
  dominates = dominance_matrix(values)
  counts = np.sum(dominates, axis=0)
  fronts = []
  current = np.flatnonzero(counts == 0)
  while current.size:
    fronts.append(current)
    counts = counts - np.sum(dominates[current], axis=0)
    counts[np.concatenate(fronts)] = -1
    current = np.flatnonzero(counts == 0)
  return fronts


class ParetoResult(object):
  """Boundary decisions, their attribute values and what was eliminated."""

  def __init__(self, candidates, values, errors, orientations, evaluated,
               boundary, certainly_dominated, near_boundary, epsilon,
               attribute_names):
    self.candidates = candidates
    self.values = values
    self.errors = errors
    self.orientations = tuple(orientations)
    self.evaluated = np.asarray(evaluated, np.int64)
    self.boundary = np.asarray(boundary, np.int64)
    self.certainly_dominated = np.asarray(certainly_dominated, np.int64)
    self.near_boundary = np.asarray(near_boundary, np.int64)
    self.epsilon = epsilon
    self.attribute_names = tuple(attribute_names)

  @property
  def dominated_count(self) -> int:
    """Evaluated candidates off the boundary; earlier rejections excluded."""
    return self.evaluated.size - self.boundary.size

  @property
  def coordinates(self) -> np.ndarray:
    return self.values[self.boundary]

  def to_json(self) -> Dict[Text, Any]:
    return core.to_jsonable({
        'format_version': FORMAT_VERSION,
        'attributes': list(self.attribute_names),
        'orientations': list(self.orientations),
        'evaluated': self.evaluated,
        'boundary': self.boundary,
        'boundary_decisions': self.candidates[self.boundary],
        'coordinates': self.coordinates,
        'dominated_count': self.dominated_count,
        'certainly_dominated': self.certainly_dominated,
        'near_boundary': self.near_boundary,
        'epsilon': self.epsilon,
    })


@gin.configurable
def pareto_front(candidates: DecisionSet,
                 evaluators: Sequence[Evaluator],
                 orientations: Sequence[Text],
                 k_bound: float = 3.0,
                 epsilon: float = 0.05,
                 attribute_names: Optional[Sequence[Text]] = None
                ) -> ParetoResult:
  """Pareto boundary of the active candidates.

  Attributes are oriented so that larger is better. A candidate is first
  eliminated only on certain dominance: another candidate's lower bounds
  (estimate - k_bound * se) dominate its upper bounds. The boundary is the
  non-dominated set of the remaining estimates, and `near_boundary` holds the
  other candidates within epsilon (fraction of each attribute's range) of a
  boundary point in every attribute.

  Args:
    candidates: DecisionSet; only active candidates are considered.
    evaluators: One evaluator per attribute.
    orientations: 'maximize' or 'minimize' per attribute.
    k_bound: Bound half-width in standard errors.
    epsilon: Nearness threshold for near_boundary.
    attribute_names: Names for reporting.

  Returns:
    ParetoResult with indices into candidates.

  Raises:
    DecisionError: Without attributes or on an evaluator/orientation count
      mismatch.
  """
  if not evaluators:
    raise core.DecisionError('Pareto analysis needs at least one attribute.')
  if len(evaluators) != len(orientations):
    raise core.DecisionError(
        'Got {} evaluators for {} orientations.'.format(len(evaluators),
                                                        len(orientations)))
  for o in orientations:
    if o not in ORIENTATIONS:
      raise ValueError('Unknown orientation {}, options are {}.'.format(
          o, ORIENTATIONS))
  if attribute_names is None:
    attribute_names = ['a{}'.format(j) for j in range(len(evaluators))]

  active = candidates.active_indices
  n, k = candidates.n_candidates, len(evaluators)
  values = np.full((n, k), np.nan)
  errors = np.full((n, k), np.nan)
  for i in active:
    for j, evaluator in enumerate(evaluators):
      values[i, j], errors[i, j] = evaluator(candidates.candidates[i], int(i))

  sign = np.array([1.0 if o == 'maximize' else -1.0 for o in orientations])
  oriented = values[active] * sign
  lower = oriented - k_bound * errors[active]
  upper = oriented + k_bound * errors[active]
  certain = (np.all(lower[:, np.newaxis, :] >= upper[np.newaxis, :, :], -1) &
             np.any(lower[:, np.newaxis, :] > upper[np.newaxis, :, :], -1))
  eliminated = np.any(certain, axis=0)
  remaining = np.flatnonzero(~eliminated)
  front = remaining[pareto_fronts(oriented[remaining])[0]]

  value_range = np.max(oriented, axis=0) - np.min(oriented, axis=0)
  slack = epsilon * value_range
  close = np.all(oriented[:, np.newaxis, :] >=
                 oriented[np.newaxis, front, :] - slack, axis=-1)
  off_front = np.ones(active.size, bool)
  off_front[front] = False
  near = active[off_front & np.any(close, axis=1)]
  logging.info('Pareto boundary: %d of %d active candidates (%d certainly '
               'dominated).', front.size, active.size, int(np.sum(eliminated)))
  return ParetoResult(candidates.candidates, values, errors, orientations,
                      active, np.sort(active[front]), active[eliminated],
                      near, epsilon, attribute_names)


# ---------------------- Risk profiles -----------------------------------------
class RiskProfile(object):
  """Outcome samples of one decision and their summaries."""

  def __init__(self,
               decision,
               samples: np.ndarray,
               attribute_names: Sequence[Text],
               thresholds: Optional[Mapping[Text, Sequence[float]]] = None):
    self.decision = np.asarray(decision, np.float64)
    self.samples = np.asarray(samples, np.float64)
    self.attribute_names = tuple(attribute_names)
    self.mean = np.mean(self.samples, axis=0)
    self.variance = np.var(self.samples, axis=0, ddof=1)
    levels = np.array(QUANTILE_LEVELS) / 100.0
    self.quantiles = np.quantile(self.samples, levels, axis=0).T
    self.exceedance = {}
    for name, values in (thresholds or {}).items():
      column = self.samples[:, self.attribute_names.index(name)]
      self.exceedance[name] = {
          core.format_decimal(t): float(np.mean(column < t)) for t in values}

  def quantile(self, attribute: Text, level: int) -> float:
    return float(self.quantiles[self.attribute_names.index(attribute),
                                QUANTILE_LEVELS.index(level)])

  def to_json(self) -> Dict[Text, Any]:
    return core.to_jsonable({
        'decision': self.decision,
        'attributes': list(self.attribute_names),
        'mean': self.mean,
        'variance': self.variance,
        'quantile_levels': list(QUANTILE_LEVELS),
        'quantiles': self.quantiles,
        'p_below_threshold': self.exceedance,
    })


def risk_profile(model: OutcomeModel,
                 decision,
                 n_samples: int,
                 seed: int,
                 thresholds: Optional[Mapping[Text, Sequence[float]]] = None
                ) -> RiskProfile:
  """Sample the outcomes of a decision and summarize them.

  `thresholds` maps attribute names to values t for which P(outcome < t) is
  reported.
  """
  if n_samples < 2:
    raise ValueError('risk_profile needs n_samples >= 2.')
  samples = model.sample(decision, n_samples, seed)
  return RiskProfile(decision, samples, model.attribute_names, thresholds)
