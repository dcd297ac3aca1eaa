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
"""Emulators: a global regression trend plus a local residual process.

An emulator is fitted to a DesignSet of simulator runs. The trend is a
polynomial in inputs standardized to [-1, 1]; the residual is a zero-mean
Gaussian process with a squared-exponential kernel, per-dimension correlation
lengths, variance sigma^2 and a small nugget. All linear algebra is done in
correlation scale (kernel / sigma^2) so that sigma^2 = 0 is a legal fit.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import itertools
from typing import Any, Dict, Optional, Sequence, Text, Tuple

from absl import logging
from emuchain import core
from emuchain import designs
import gin
import numpy as np
from scipy import linalg
from scipy.spatial import distance

FORMAT_VERSION = 1
BASES = ('constant', 'linear', 'quadratic')
HYPER_MODES = ('ml', 'fixed')

# Residuals below this fraction of the response scale count as exactly zero.
RESIDUAL_TOLERANCE = 1e-10

# The nugget ratio is escalated up to this value before a fit gives up.
MAX_NUGGET_RATIO = 1e-2

TrendSpec = collections.namedtuple('TrendSpec', ('basis', 'coefficients'))
ResidualProcessSpec = collections.namedtuple(
    'ResidualProcessSpec',
    ('kernel', 'variance', 'correlation_lengths', 'nugget'))
ValidationReport = collections.namedtuple(
    'ValidationReport',
    ('errors', 'within_2', 'within_3', 'degenerate_indices'))


class Prediction(collections.namedtuple('Prediction', ('mean', 'variance'))):
  """Predictive mean and variance; unpacks as (mean, variance).

  `extrapolated` flags (per point for batches) inputs outside the design's
  input space.
  """

  def __new__(cls, mean, variance, extrapolated=False):
    self = super(Prediction, cls).__new__(cls, mean, variance)
    self.extrapolated = extrapolated
    return self


# ---------------------- Trend basis -------------------------------------------
def basis_count(basis: Text, n_dims: int) -> int:
  """Number of polynomial basis functions for a family and dimension."""
  if basis == 'constant':
    return 1
  elif basis == 'linear':
    return 1 + n_dims
  elif basis == 'quadratic':
    return 1 + n_dims + n_dims * (n_dims + 1) // 2
  raise ValueError('Unknown trend basis {}, options are {}.'.format(
      basis, BASES))


def basis_matrix(z: np.ndarray, basis: Text) -> np.ndarray:
  """Evaluate the polynomial basis at standardized inputs z [n, n_dims]."""
  z = np.atleast_2d(z)
  n, n_dims = z.shape
  columns = [np.ones(n)]
  if basis in ('linear', 'quadratic'):
    columns.extend(z[:, i] for i in range(n_dims))
  if basis == 'quadratic':
    columns.extend(z[:, i] * z[:, j]
                   for i, j in itertools.combinations_with_replacement(
                       range(n_dims), 2))
  if len(columns) != basis_count(basis, n_dims):
    raise ValueError('Unknown trend basis {}.'.format(basis))
  return np.stack(columns, axis=1)


# ---------------------- Kernel ------------------------------------------------
def correlation_matrix(za: np.ndarray,
                       zb: np.ndarray,
                       lengths: np.ndarray) -> np.ndarray:
  """Squared-exponential correlation exp(-0.5 sum((za - zb) / l)^2)."""
  lengths = np.asarray(lengths, dtype=np.float64)
  d2 = distance.cdist(np.atleast_2d(za) / lengths,
                      np.atleast_2d(zb) / lengths, 'sqeuclidean')
  return np.exp(-0.5 * d2)


def _coincident(za: np.ndarray, zb: np.ndarray) -> np.ndarray:
  return distance.cdist(np.atleast_2d(za), np.atleast_2d(zb),
                        'sqeuclidean') == 0.0


class _GLSSolve(object):
  """Factorized kernel system and generalized-least-squares trend.

  Raises:
    np.linalg.LinAlgError: If the correlation matrix (with nugget) or the
      trend normal matrix is not positive definite.
  """

  def __init__(self, z, h, y, lengths, nugget_ratio):
    self.z = z
    self.h = h
    self.y = y
    self.lengths = lengths
    self.nugget_ratio = nugget_ratio
    c = correlation_matrix(z, z, lengths)
    c[np.diag_indices_from(c)] += nugget_ratio
    self.c_factor = linalg.cho_factor(c, lower=True, check_finite=False)
    self.ci_h = linalg.cho_solve(self.c_factor, h)
    self.a_factor = linalg.cho_factor(h.T @ self.ci_h, lower=True)
    self.beta = linalg.cho_solve(self.a_factor, self.ci_h.T @ y)
    self.residuals = y - h @ self.beta
    self.weights = linalg.cho_solve(self.c_factor, self.residuals)
    self.quadratic = float(self.residuals @ self.weights)
    self.log_det = 2.0 * float(np.sum(np.log(np.diag(self.c_factor[0]))))

  @property
  def n(self) -> int:
    return self.y.shape[0]

  def predict(self, zs, hs, variance):
    """Mean and variance at standardized points zs with trend rows hs."""
    coincident = _coincident(zs, self.z)
    rs = correlation_matrix(zs, self.z, self.lengths)
    rs = rs + self.nugget_ratio * coincident
    mean = hs @ self.beta
    if variance == 0.0:
      return mean, np.zeros(mean.shape)
    mean = mean + rs @ self.weights
    ci_rs = linalg.cho_solve(self.c_factor, rs.T)
    explained = np.sum(rs.T * ci_rs, axis=0)
    u = hs.T - self.h.T @ ci_rs
    inflation = np.sum(u * linalg.cho_solve(self.a_factor, u), axis=0)
    prior = 1.0 + self.nugget_ratio * np.any(coincident, axis=1)
    var = variance * (prior - explained + inflation)
    return mean, np.maximum(var, 0.0)


def _response_scale(y: np.ndarray) -> float:
  scale = float(np.max(np.abs(y))) if y.size else 0.0
  return scale if scale > 0.0 else 1.0


def _is_exact_fit(solve: _GLSSolve) -> bool:
  tolerance = RESIDUAL_TOLERANCE * _response_scale(solve.y)
  return bool(np.max(np.abs(solve.residuals)) <= tolerance)


def _log_likelihood(solve: _GLSSolve, variance: float) -> float:
  n = solve.n
  return -0.5 * (n * np.log(2.0 * np.pi * variance) + solve.log_det +
                 solve.quadratic / variance)


def _profile(solve: _GLSSolve) -> Tuple[float, float]:
  """Profile log likelihood with sigma^2 at its maximizer q / n."""
  floor = (RESIDUAL_TOLERANCE * _response_scale(solve.y))**2
  variance = solve.quadratic / solve.n
  log_likelihood = _log_likelihood(solve, max(variance, floor))
  return log_likelihood, 0.0 if _is_exact_fit(solve) else variance


def _factorize(z, h, y, lengths, nugget_ratio, escalate=True):
  """Factorize, raising the nugget ratio x10 (with a warning) on failure."""
  ratio = nugget_ratio
  while True:
    try:
      return _GLSSolve(z, h, y, lengths, ratio)
    except np.linalg.LinAlgError:
      if np.linalg.matrix_rank(h) < h.shape[1]:
        raise core.FitError(
            'Rank-deficient trend basis matrix (rank {} < {} columns).'.format(
                np.linalg.matrix_rank(h), h.shape[1]),
            rank=int(np.linalg.matrix_rank(h)), columns=h.shape[1])
      next_ratio = max(ratio * 10.0, 1e-10)
      if not escalate or next_ratio > MAX_NUGGET_RATIO:
        c = correlation_matrix(z, z, lengths) + ratio * np.eye(z.shape[0])
        condition = float(np.linalg.cond(c))
        raise core.FitError(
            'Kernel matrix is not positive definite with nugget ratio {:g} '
            '(condition number {:.3g}).'.format(ratio, condition),
            nugget_ratio=ratio, condition_number=condition)
      logging.warning('Kernel factorization failed; raising nugget ratio from '
                      '%g to %g.', ratio, next_ratio)
      ratio = next_ratio


# ---------------------- Emulator ----------------------------------------------
class Emulator(object):
  """A fitted single-output emulator.

  Immutable after construction; concurrent predict/sample calls are safe when
  each caller owns its rng. The factorization is recomputed from the design
  and hyperparameters, so to_json()/from_json() reproduce predictions
  exactly.
  """

  def __init__(self,
               space: designs.InputSpace,
               points: np.ndarray,
               responses: np.ndarray,
               output_name: Text,
               basis: Text,
               variance: float,
               correlation_lengths: Sequence[float],
               nugget_ratio: float,
               log_transform: bool = False,
               coarse: Optional['Emulator'] = None,
               rho_fixed: Optional[float] = None,
               max_log_likelihood: Optional[float] = None):
    """Constructor.

    Args:
      space: Input space the design lives in.
      points: Design points [n_runs, n_dims] in native units.
      responses: Simulator responses [n_runs] in native units.
      output_name: Name of the emulated output.
      basis: Trend family, one of BASES.
      variance: Residual process variance sigma^2 >= 0.
      correlation_lengths: One length > 0 per input, standardized units.
      nugget_ratio: Nugget as a fraction of sigma^2.
      log_transform: Fit log(responses); predictions are on the log scale.
      coarse: Coarse-level emulator for multi-level emulation.
      rho_fixed: Fixed coarse-to-fine scale. With a coarse emulator and no
        fixed value, the scale is estimated as an extra trend coefficient.
      max_log_likelihood: Log likelihood reached by the fit, for reporting.

    Raises:
      FitError: If the kernel system cannot be factorized.
      ValueError: If hyperparameters are out of range.
    """
    self.space = space
    self.points = core.frozen_array(points, ndim=2)
    self.responses = core.frozen_array(responses, ndim=1)
    self.output_name = output_name
    self.basis = basis
    self.variance = float(variance)
    self.correlation_lengths = core.frozen_array(correlation_lengths, ndim=1)
    self.nugget_ratio = float(nugget_ratio)
    self.log_transform = bool(log_transform)
    self.coarse = coarse
    self.rho_fixed = None if rho_fixed is None else float(rho_fixed)
    self.max_log_likelihood = max_log_likelihood

    if self.variance < 0.0:
      raise ValueError('Residual variance must be >= 0, got {}.'.format(
          self.variance))
    if self.correlation_lengths.shape != (space.n_dims,):
      raise ValueError('Need {} correlation lengths, got {}.'.format(
          space.n_dims, self.correlation_lengths.shape))
    if np.any(self.correlation_lengths <= 0.0):
      raise ValueError('Correlation lengths must be > 0.')
    if self.nugget_ratio < 0.0:
      raise ValueError('Nugget must be >= 0.')

    z = space.standardize(self.points)
    y = self._target(self.responses)
    coarse_mean = None
    if coarse is not None:
      coarse_mean = coarse.predict_batch(self.points).mean
      if self.rho_fixed is not None:
        y = y - self.rho_fixed * coarse_mean
    h = self._trend_matrix(z, coarse_mean)
    self._solve = _factorize(z, h, y, self.correlation_lengths,
                             self.nugget_ratio, escalate=False)

  # Construction helpers.
  def _target(self, responses: np.ndarray) -> np.ndarray:
    if not self.log_transform:
      return np.asarray(responses, dtype=np.float64)
    if np.any(responses <= 0.0):
      raise core.FitError('log_transform needs positive responses.')
    return np.log(responses)

  def _trend_matrix(self, z, coarse_mean=None):
    h = basis_matrix(z, self.basis)
    if self.coarse is not None and self.rho_fixed is None:
      h = np.concatenate([h, coarse_mean[:, np.newaxis]], axis=1)
    return h

  # Read-only views.
  @property
  def n_inputs(self) -> int:
    return self.space.n_dims

  @property
  def n_runs(self) -> int:
    return self.points.shape[0]

  @property
  def coefficients(self) -> np.ndarray:
    return self._solve.beta.copy()

  @property
  def nugget(self) -> float:
    return self.nugget_ratio * self.variance

  @property
  def rho(self) -> Optional[float]:
    """Coarse-to-fine scale, or None for a single-level emulator."""
    if self.coarse is None:
      return None
    if self.rho_fixed is not None:
      return self.rho_fixed
    return float(self._solve.beta[-1])

  @property
  def trend(self) -> TrendSpec:
    return TrendSpec(self.basis, self.coefficients)

  @property
  def residual(self) -> ResidualProcessSpec:
    return ResidualProcessSpec('squared_exponential', self.variance,
                               self.correlation_lengths.copy(), self.nugget)

  @property
  def residual_weights(self) -> np.ndarray:
    """K^-1 (y - H beta) with K the residual covariance matrix."""
    if self.variance == 0.0:
      return np.zeros(self.n_runs)
    return self._solve.weights / self.variance

  # Prediction.
  def predict_batch(self, points: np.ndarray) -> Prediction:
    """Predictive means and variances at many points.

    Args:
      points: Inputs [n_points, n_dims] in native units.

    Returns:
      Prediction with mean, variance and extrapolated arrays of shape
      [n_points].

    Raises:
      ValueError: On a dimension mismatch.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != self.n_inputs:
      raise ValueError('Emulator {} takes {} inputs, got {}.'.format(
          self.output_name, self.n_inputs, points.shape[1]))
    z = self.space.standardize(points)
    coarse_pred = None
    if self.coarse is not None:
      coarse_pred = self.coarse.predict_batch(points)
    h = self._trend_matrix(z, None if coarse_pred is None else coarse_pred.mean)
    mean, var = self._solve.predict(z, h, self.variance)
    if coarse_pred is not None:
      if self.rho_fixed is not None:
        mean = mean + self.rho_fixed * coarse_pred.mean
      var = var + self.rho**2 * coarse_pred.variance
    extrapolated = ~self.space.contains(points)
    return Prediction(mean, var, extrapolated)

  def predict(self, point) -> Prediction:
    """Predictive (mean, variance) at one point."""
    pred = self.predict_batch(np.asarray(point, dtype=np.float64).ravel())
    if pred.extrapolated[0]:
      logging.log_first_n(logging.WARNING,
                          'Emulator %s extrapolating outside %s.', 5,
                          self.output_name, self.space)
    return Prediction(float(pred.mean[0]), float(pred.variance[0]),
                      bool(pred.extrapolated[0]))

  def sample(self, point, rng: np.random.Generator) -> float:
    """One draw from Normal(predict(point))."""
    mean, variance = self.predict(point)
    return mean + np.sqrt(variance) * rng.standard_normal()

  def sample_batch(self, points, rng: np.random.Generator) -> np.ndarray:
    """Independent pointwise draws at many points."""
    pred = self.predict_batch(points)
    z = rng.standard_normal(pred.mean.shape)
    return pred.mean + np.sqrt(pred.variance) * z

  # Serialization.
  def to_json(self) -> Dict[Text, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'type': 'emulator',
        'output_name': self.output_name,
        'space': self.space.to_json(),
        'points': self.points.tolist(),
        'responses': self.responses.tolist(),
        'trend': {'basis': self.basis,
                  'coefficients': self.coefficients.tolist()},
        'residual': {'kernel': 'squared_exponential',
                     'variance': self.variance,
                     'correlation_lengths':
                         self.correlation_lengths.tolist(),
                     'nugget': self.nugget,
                     'nugget_ratio': self.nugget_ratio},
        'log_transform': self.log_transform,
        'rho': self.rho,
        'rho_fixed': self.rho_fixed,
        'coarse': None if self.coarse is None else self.coarse.to_json(),
        'max_log_likelihood': self.max_log_likelihood,
    }

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'Emulator':
    version = doc.get('format_version')
    if version != FORMAT_VERSION:
      raise ValueError('Unsupported emulator format_version {}.'.format(
          version))
    coarse = doc.get('coarse')
    return cls(
        space=designs.InputSpace.from_json(doc['space']),
        points=np.asarray(doc['points'], dtype=np.float64),
        responses=np.asarray(doc['responses'], dtype=np.float64),
        output_name=doc['output_name'],
        basis=doc['trend']['basis'],
        variance=doc['residual']['variance'],
        correlation_lengths=doc['residual']['correlation_lengths'],
        nugget_ratio=doc['residual']['nugget_ratio'],
        log_transform=doc.get('log_transform', False),
        coarse=None if coarse is None else cls.from_json(coarse),
        rho_fixed=doc.get('rho_fixed'),
        max_log_likelihood=doc.get('max_log_likelihood'))


# ---------------------- Likelihood --------------------------------------------
def _design_target(design: designs.DesignSet,
                   output: Optional[Text]) -> Tuple[Text, np.ndarray]:
  if not design.has_responses:
    raise core.FitError('Design has no responses to fit.')
  if output is None:
    if len(design.output_names) != 1:
      raise ValueError(
          'Design has outputs {}; name the one to emulate.'.format(
              design.output_names))
    output = design.output_names[0]
  return output, design.column(output)


def marginal_log_likelihood(design: designs.DesignSet,
                            variance: float,
                            correlation_lengths: Sequence[float],
                            nugget: float = 0.0,
                            trend_basis: Text = 'linear',
                            output: Optional[Text] = None) -> float:
  """Gaussian log likelihood of the responses at given hyperparameters.

  The trend coefficients are set to their GLS estimate.
  """
  _, y = _design_target(design, output)
  if variance <= 0.0:
    raise ValueError('The likelihood needs variance > 0.')
  z = design.space.standardize(design.points)
  h = basis_matrix(z, trend_basis)
  solve = _factorize(z, h, y, np.asarray(correlation_lengths, np.float64),
                     nugget / variance, escalate=False)
  return _log_likelihood(solve, variance)


def profile_log_likelihood(design: designs.DesignSet,
                           correlation_lengths: Sequence[float],
                           nugget_ratio: float = 1e-8,
                           trend_basis: Text = 'linear',
                           output: Optional[Text] = None
                          ) -> Tuple[float, float]:
  """Likelihood maximized over sigma^2; returns (log likelihood, sigma^2)."""
  _, y = _design_target(design, output)
  z = design.space.standardize(design.points)
  h = basis_matrix(z, trend_basis)
  solve = _factorize(z, h, y, np.asarray(correlation_lengths, np.float64),
                     nugget_ratio, escalate=False)
  return _profile(solve)


def _search_lengths(z, h, y, start, nugget_ratio, sweeps, grid_points,
                    log10_length_range):
  """Coordinate search over a log10 grid, accepting strict improvements."""
  grid = np.linspace(log10_length_range[0], log10_length_range[1],
                     grid_points)

  def score(log_lengths):
    try:
      return _profile(_GLSSolve(z, h, y, 10.0**log_lengths, nugget_ratio))[0]
    except np.linalg.LinAlgError:
      return -np.inf

  current = np.log10(np.asarray(start, dtype=np.float64))
  best = score(current)
  for sweep in range(sweeps):
    improved = False
    for dim in range(z.shape[1]):
      for value in grid:
        candidate = current.copy()
        candidate[dim] = value
        candidate_score = score(candidate)
        if candidate_score > best:
          best, current, improved = candidate_score, candidate, True
    logging.debug('Length search sweep %d: log likelihood %.6g', sweep, best)
    if not improved:
      break
  return 10.0**current, best


# ---------------------- Fitting -----------------------------------------------
@gin.configurable
def fit(design: designs.DesignSet,
        trend_basis: Text = 'linear',
        hyper_mode: Text = 'ml',
        output: Optional[Text] = None,
        variance: Optional[float] = None,
        correlation_lengths: Optional[Sequence[float]] = None,
        nugget: Optional[float] = None,
        nugget_ratio: float = 1e-8,
        sweeps: int = 3,
        grid_points: int = 17,
        log10_length_range: Tuple[float, float] = (-1.5, 1.5),
        log_transform: bool = False,
        coarse: Optional[Emulator] = None,
        rho: Optional[float] = None) -> Emulator:
  """Fit an emulator to one output of a design.

  Args:
    design: DesignSet with responses.
    trend_basis: 'constant', 'linear' or 'quadratic'.
    hyper_mode: 'ml' maximizes the likelihood over correlation lengths (with
      sigma^2 profiled out) by coordinate search on a log10 grid; 'fixed'
      uses the given variance and correlation_lengths.
    output: Output name; optional for single-output designs.
    variance: Residual variance (fixed mode).
    correlation_lengths: Lengths (fixed mode), or the search start (ml mode,
      default 1 per dimension).
    nugget: Absolute nugget (fixed mode). Defaults to nugget_ratio * sigma^2.
    nugget_ratio: Default nugget as a fraction of sigma^2.
    sweeps: Coordinate search sweeps.
    grid_points: Grid points per axis.
    log10_length_range: Search range of log10 correlation lengths.
    log_transform: Emulate log(y) instead of y.
    coarse: Coarse-level emulator; its mean enters the trend (multi-level).
    rho: With `coarse`, fixes the coarse-to-fine scale instead of estimating
      it as a trend coefficient.

  Returns:
    A fitted Emulator.

  Raises:
    FitError: Too few runs, a rank-deficient basis, or a kernel matrix that
      stays indefinite after nugget escalation.
  """
  output, responses = _design_target(design, output)
  if hyper_mode not in HYPER_MODES:
    raise ValueError('hyper_mode must be one of {}, got {}.'.format(
        HYPER_MODES, hyper_mode))
  rho_fixed = None if coarse is None else rho
  n_dims = design.space.n_dims
  n_basis = basis_count(trend_basis, n_dims)
  n_basis += int(coarse is not None and rho_fixed is None)
  if design.n_runs < n_basis:
    raise core.FitError(
        'Need at least {} runs for the {} trend, got {}.'.format(
            n_basis, trend_basis, design.n_runs),
        n_runs=design.n_runs, basis_count=n_basis)

  # Same target and trend matrix as the Emulator constructor builds.
  y = np.asarray(responses, dtype=np.float64)
  if log_transform:
    if np.any(y <= 0.0):
      raise core.FitError('log_transform needs positive responses.')
    y = np.log(y)
  z = design.space.standardize(design.points)
  h = basis_matrix(z, trend_basis)
  if coarse is not None:
    coarse_mean = coarse.predict_batch(design.points).mean
    if rho_fixed is None:
      h = np.concatenate([h, coarse_mean[:, np.newaxis]], axis=1)
    else:
      y = y - rho_fixed * coarse_mean
  rank = np.linalg.matrix_rank(h)
  if rank < h.shape[1]:
    raise core.FitError(
        'Rank-deficient trend basis matrix (rank {} < {} columns).'.format(
            rank, h.shape[1]), rank=int(rank), columns=h.shape[1])

  if hyper_mode == 'fixed':
    if variance is None or correlation_lengths is None:
      raise ValueError('Fixed mode needs variance and correlation_lengths.')
    lengths = np.asarray(correlation_lengths, dtype=np.float64)
    if nugget is not None:
      nugget_ratio = nugget / variance if variance > 0.0 else 0.0
    solve = _factorize(z, h, y, lengths, nugget_ratio)
    log_likelihood = (_log_likelihood(solve, variance)
                      if variance > 0.0 else None)
  else:
    start = (np.ones(n_dims) if correlation_lengths is None
             else correlation_lengths)
    lengths, _ = _search_lengths(z, h, y, start, nugget_ratio, sweeps,
                                 grid_points, log10_length_range)
    solve = _factorize(z, h, y, lengths, nugget_ratio)
    log_likelihood, variance = _profile(solve)

  logging.info('Fitted emulator %s: basis %s, sigma^2 %.6g, lengths %s, '
               'nugget ratio %g.', output, trend_basis, variance,
               np.array2string(lengths, precision=4), solve.nugget_ratio)
  return Emulator(design.space, design.points, responses, output, trend_basis,
                  variance, lengths, solve.nugget_ratio, log_transform, coarse,
                  rho_fixed, log_likelihood)


def fit_multilevel(coarse_design: designs.DesignSet,
                   fine_design: designs.DesignSet,
                   trend_basis: Text = 'linear',
                   hyper_mode: Text = 'ml',
                   rho: Optional[float] = None,
                   output: Optional[Text] = None,
                   coarse_output: Optional[Text] = None,
                   **kwargs) -> Emulator:
  """Emulate a fine model from many coarse runs and a few fine runs.

  The fine emulator's trend is rho * (coarse emulator mean) plus a polynomial
  correction; the residual process is fitted to the fine runs. Its predictive
  variance adds rho^2 times the coarse predictive variance.

  Args:
    coarse_design: Many cheap runs of the coarse model.
    fine_design: Few runs of the fine model over the same input space.
    trend_basis: Basis of the polynomial correction.
    hyper_mode: Hyperparameter mode for both levels.
    rho: Fix the coarse-to-fine scale instead of estimating it. rho = 0
      reduces to a plain fit on the fine design.
    output: Fine output name.
    coarse_output: Coarse output name, defaulting to `output`.
    **kwargs: Passed to fit() for both levels.

  Returns:
    The fine-level Emulator (its `coarse` attribute holds the coarse one).

  Raises:
    FitError: If the fine design is smaller than the correction basis.
  """
  if coarse_design.space.names != fine_design.space.names:
    raise ValueError('Coarse and fine designs must share an input space.')
  coarse = fit(coarse_design, trend_basis, hyper_mode,
               output=coarse_output or output, **kwargs)
  fine = fit(fine_design, trend_basis, hyper_mode, output=output,
             coarse=coarse, rho=rho, **kwargs)
  logging.info('Multi-level emulator: rho = %.6g', fine.rho)
  return fine


# ---------------------- Validation --------------------------------------------
def validate_loo(em: Emulator) -> ValidationReport:
  """Leave-one-out diagnostics at fixed hyperparameters.

  Each design point is held out in turn, the trend is re-estimated on the
  remaining runs and the held-out response is predicted.

  Args:
    em: A fitted emulator.

  Returns:
    ValidationReport with the standardized errors (NaN where the held-out
    variance is degenerate), the fractions within +-2 and +-3 and the
    degenerate indices.

  Raises:
    FitError: If there are fewer than basis count + 2 runs.
  """
  solve = em._solve  # pylint: disable=protected-access
  n, p = solve.h.shape
  if n < p + 2:
    raise core.FitError('Leave-one-out needs at least {} runs, got {}.'.format(
        p + 2, n))
  coarse_var = (np.zeros(n) if em.coarse is None else
                em.coarse.predict_batch(em.points).variance)
  tolerance = RESIDUAL_TOLERANCE * _response_scale(solve.y)
  errors = np.zeros(n)
  degenerate = []
  for i in range(n):
    keep = np.arange(n) != i
    held = _factorize(solve.z[keep], solve.h[keep], solve.y[keep],
                      solve.lengths, solve.nugget_ratio)
    mean, var = held.predict(solve.z[i:i + 1], solve.h[i:i + 1], em.variance)
    var = var[0] + (em.rho or 0.0)**2 * coarse_var[i]
    residual = solve.y[i] - mean[0]
    if var > 0.0:
      errors[i] = residual / np.sqrt(var)
    elif abs(residual) <= tolerance:
      errors[i] = 0.0
    else:
      errors[i] = np.nan
      degenerate.append(i)
  if degenerate:
    logging.warning('Leave-one-out variance is degenerate at rows %s.',
                    degenerate)
  # Degenerate (NaN) points count as outside both bands.
  abs_errors = np.nan_to_num(np.abs(errors), nan=np.inf)
  within_2 = float(np.mean(abs_errors <= 2.0))
  within_3 = float(np.mean(abs_errors <= 3.0))
  return ValidationReport(errors, within_2, within_3, tuple(degenerate))
