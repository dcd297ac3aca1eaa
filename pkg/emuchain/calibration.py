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
"""History matching against observed system data, and forecasting.

Candidate inputs are screened with the implausibility

  I(x) = |z - E[f(x)]| / sqrt(Var[f(x)] + Var[discrepancy] + Var[measurement])

maximized over observations. Inputs with I(x) <= cutoff are retained, and
forecasts are drawn over the retained set.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
from typing import Any, Dict, Mapping, Optional, Sequence, Text

from absl import logging
from emuchain import core
from emuchain import designs
from emuchain import discrepancy
from emuchain import emulators
import gin
import numpy as np

FORMAT_VERSION = 1
EMPTY_MESSAGE = 'model cannot reproduce history at this cutoff'
BIAS_CORRECTION_NOTE = (
    'Discrepancy is zero-mean: forecast bias correction widens the forecast '
    'distribution but does not shift it.')

# Define Types.
Emulators = Mapping[Text, emulators.Emulator]


class Observation(collections.namedtuple(
    'Observation', ('output_name', 'value', 'measurement_variance'))):
  """One measured system quantity, matched to a model output by name."""

  def __new__(cls, output_name, value, measurement_variance=0.0):
    if measurement_variance < 0.0:
      raise ValueError('Measurement variance must be >= 0, got {}.'.format(
          measurement_variance))
    return super(Observation, cls).__new__(cls, output_name, float(value),
                                           float(measurement_variance))


def observations_to_json(observations: Sequence[Observation]
                        ) -> Dict[Text, Any]:
  return {'format_version': FORMAT_VERSION,
          'observations': [o._asdict() for o in observations]}


def observations_from_json(doc: Dict[Text, Any]):
  return [Observation(**o) for o in doc['observations']]


# ---------------------- Implausibility ----------------------------------------
def implausibility_score(residual, emulator_variance, discrepancy_variance,
                         measurement_variance) -> np.ndarray:
  """Standardized distance, vectorized over any broadcastable arguments.

  A zero total variance gives 0 for a zero residual and inf otherwise.
  """
  residual = np.abs(np.asarray(residual, np.float64))
  total = (np.asarray(emulator_variance, np.float64) +
           np.asarray(discrepancy_variance, np.float64) +
           np.asarray(measurement_variance, np.float64))
  residual, total = np.broadcast_arrays(residual, total)
  degenerate = total <= 0.0
  with np.errstate(divide='ignore', invalid='ignore'):
    score = residual / np.sqrt(np.where(degenerate, 1.0, total))
  return np.where(degenerate, np.where(residual == 0.0, 0.0, np.inf), score)


def _observed(em: emulators.Emulator, obs: Observation):
  """Observation value and variance on the emulator's scale."""
  if not em.log_transform:
    return obs.value, obs.measurement_variance
  if obs.value <= 0.0:
    raise core.CalibrationError(
        'Observation of {} must be positive for a log-scale emulator.'.format(
            obs.output_name), value=obs.value)
  # First-order variance of log(z).
  return np.log(obs.value), obs.measurement_variance / obs.value**2


def _scores(em: emulators.Emulator,
            disc: Optional[discrepancy.DiscrepancySpec],
            obs: Observation,
            points: np.ndarray) -> np.ndarray:
  if em.output_name != obs.output_name:
    raise core.CalibrationError(
        'Emulator output {} does not match observation {}.'.format(
            em.output_name, obs.output_name))
  pred = em.predict_batch(points)
  if disc is None:
    disc_var = 0.0
  else:
    if obs.output_name not in disc.output_names:
      raise core.CalibrationError(
          'Discrepancy spec has no output {}.'.format(obs.output_name))
    disc_var = disc.output_variance(points, pred.mean, obs.output_name)
  value, meas_var = _observed(em, obs)
  return implausibility_score(value - pred.mean, pred.variance, disc_var,
                              meas_var)


def implausibility(em: emulators.Emulator,
                   disc: Optional[discrepancy.DiscrepancySpec],
                   obs: Observation,
                   point) -> float:
  """Implausibility of one input point against one observation.

  Args:
    em: Emulator of the observed output.
    disc: Discrepancy spec covering the output, or None for no discrepancy.
    obs: The observation.
    point: Input vector in native units.

  Returns:
    Non-negative implausibility; inf when every variance is zero and the
    emulator mean misses the observation.

  Raises:
    CalibrationError: If the emulator or spec do not cover obs.output_name.
  """
  point = np.asarray(point, np.float64).ravel()[np.newaxis, :]
  return float(_scores(em, disc, obs, point)[0])


# ---------------------- History matching --------------------------------------
class RetainedSpace(object):
  """Candidates, their implausibilities and the cutoff they were judged by."""

  def __init__(self,
               candidates: designs.DesignSet,
               implausibility_matrix: np.ndarray,
               cutoff: float,
               observation_names: Sequence[Text]):
    matrix = np.asarray(implausibility_matrix, np.float64)
    if matrix.shape != (candidates.n_runs, len(observation_names)):
      raise ValueError('Implausibility matrix {} does not match {} candidates '
                       'and {} observations.'.format(
                           matrix.shape, candidates.n_runs,
                           len(observation_names)))
    self.candidates = candidates
    self.implausibility = core.frozen_array(matrix)
    self.cutoff = float(cutoff)
    self.observation_names = tuple(observation_names)
    self.max_implausibility = core.frozen_array(np.max(matrix, axis=1))
    self.mask = self.max_implausibility <= self.cutoff
    self.mask.flags.writeable = False

  @property
  def n_retained(self) -> int:
    return int(np.sum(self.mask))

  @property
  def retained_points(self) -> np.ndarray:
    return self.candidates.points[self.mask]

  @property
  def retained_fraction(self) -> float:
    return self.n_retained / self.candidates.n_runs

  @property
  def message(self) -> Text:
    if self.n_retained == 0:
      return EMPTY_MESSAGE
    return 'retained {} of {} candidates'.format(self.n_retained,
                                                 self.candidates.n_runs)

  def retained_design(self) -> designs.DesignSet:
    """The retained points as a design, e.g. for a second wave of runs."""
    if self.n_retained == 0:
      raise core.CalibrationError(EMPTY_MESSAGE, cutoff=self.cutoff)
    return self.candidates.without_responses().select(self.mask)

  def to_json(self) -> Dict[Text, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'candidates': self.candidates.without_responses().to_json(),
        'observation_names': list(self.observation_names),
        'implausibility': self.implausibility.tolist(),
        'cutoff': self.cutoff,
        'retained': self.mask.tolist(),
        'retained_fraction': self.retained_fraction,
        'message': self.message,
    }

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'RetainedSpace':
    return cls(designs.DesignSet.from_json(doc['candidates']),
               np.asarray(doc['implausibility'], np.float64),
               doc['cutoff'], doc['observation_names'])


@gin.configurable
def history_match(emulators_by_output: Emulators,
                  disc: Optional[discrepancy.DiscrepancySpec],
                  observations: Sequence[Observation],
                  candidates: designs.DesignSet,
                  cutoff: float = 3.0) -> RetainedSpace:
  """Screen candidate inputs against observations.

  Args:
    emulators_by_output: Emulator per output name.
    disc: Discrepancy spec covering the observed outputs, or None.
    observations: At least one observation.
    candidates: Candidate inputs.
    cutoff: Retain inputs whose maximum implausibility is <= cutoff.

  Returns:
    RetainedSpace. An empty retained set is a legal outcome.

  Raises:
    CalibrationError: Without observations, or when an observation has no
      emulator.
  """
  if not observations:
    raise core.CalibrationError('History matching needs observations.')
  if cutoff < 0.0:
    raise ValueError('Cutoff must be >= 0, got {}.'.format(cutoff))
  columns = []
  for obs in observations:
    em = emulators_by_output.get(obs.output_name)
    if em is None:
      raise core.CalibrationError(
          'No emulator for observed output {}; have {}.'.format(
              obs.output_name, sorted(emulators_by_output)))
    columns.append(_scores(em, disc, obs, candidates.points))
  retained = RetainedSpace(candidates, np.stack(columns, axis=1), cutoff,
                           [o.output_name for o in observations])
  if retained.n_retained == 0:
    logging.warning('History match: %s (cutoff %g, min implausibility %.4g).',
                    EMPTY_MESSAGE, cutoff,
                    float(np.min(retained.max_implausibility)))
  else:
    logging.info('History match: %s (cutoff %g).', retained.message, cutoff)
  return retained


def estimate_inflation(retained: RetainedSpace) -> float:
  """External-discrepancy inflation factor from history-matching residuals.

  At the least implausible candidate the squared implausibilities should
  average about one. Their mean, floored at one, is the factor by which the
  external variance is scaled (see DiscrepancySpec.inflated).
  """
  best = int(np.argmin(retained.max_implausibility))
  squared = retained.implausibility[best]**2
  if not np.all(np.isfinite(squared)):
    raise core.CalibrationError(
        'Infinite implausibility at the best candidate; cannot estimate an '
        'inflation factor.', row=best)
  factor = max(1.0, float(np.mean(squared)))
  logging.info('External discrepancy inflation factor %.4g at candidate %d.',
               factor, best)
  return factor


# ---------------------- Forecasting -------------------------------------------
def forecast(emulators_by_output: Emulators,
             disc: Optional[discrepancy.DiscrepancySpec],
             retained: RetainedSpace,
             n_samples: int,
             rng: np.random.Generator,
             outputs: Optional[Sequence[Text]] = None) -> np.ndarray:
  """Forecast outputs over the retained space.

  Each sample draws a retained point uniformly, then one emulator draw per
  output at that point, then one discrepancy draw added to the outputs the
  spec covers. Relative external discrepancy scales with the emulator draw.

  Args:
    emulators_by_output: Emulator per output name.
    disc: Discrepancy spec, or None. Its outputs must all be forecast.
    retained: Result of history_match.
    n_samples: Number of rows.
    rng: Caller-owned generator.
    outputs: Outputs to forecast, default every emulator in order.

  Returns:
    Matrix [n_samples, len(outputs)].

  Raises:
    CalibrationError: On an empty retained set or mismatched outputs.
  """
  if retained.n_retained == 0:
    raise core.CalibrationError('Cannot forecast: ' + EMPTY_MESSAGE,
                                cutoff=retained.cutoff)
  outputs = list(outputs or emulators_by_output)
  missing = [name for name in outputs if name not in emulators_by_output]
  if missing:
    raise core.CalibrationError('No emulator for outputs {}.'.format(missing))
  if n_samples < 1:
    raise ValueError('n_samples must be >= 1.')

  pool = retained.retained_points
  points = pool[rng.integers(0, pool.shape[0], size=n_samples)]
  samples = np.stack(
      [emulators_by_output[name].sample_batch(points, rng)
       for name in outputs], axis=1)

  if disc is not None:
    uncovered = [name for name in disc.output_names if name not in outputs]
    if uncovered:
      raise core.CalibrationError(
          'Discrepancy outputs {} are not forecast.'.format(uncovered))
    columns = [outputs.index(name) for name in disc.output_names]
    draws = discrepancy.sample_discrepancy_batch(disc, points,
                                                 samples[:, columns], rng)
    samples[:, columns] += draws
  return samples
