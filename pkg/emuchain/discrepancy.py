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
"""Structural discrepancy between simulator output and reality.

Internal discrepancy is assessed by perturbation experiments on the simulator
(varying fixed parameters or forcing series, or injecting state noise) and
can be emulated over the input space on the log-variance scale. External
discrepancy is an expert-specified additive error, relative to the output
scale or absolute. Both parts are zero-mean Gaussian and add in variance.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from typing import Any, Dict, Mapping, Optional, Sequence, Text, Union

from absl import logging
from emuchain import core
from emuchain import designs
from emuchain import emulators
from emuchain import simulators
import gin
import numpy as np

FORMAT_VERSION = 1
TARGET_KINDS = ('parameter', 'forcing', 'state_noise')
DISTRIBUTIONS = ('uniform', 'normal')
EXTERNAL_MODES = ('relative', 'absolute')


# ---------------------- Perturbation plans ------------------------------------
class PerturbationTarget(object):
  """One perturbed simulator input: a parameter, forcing series or noise."""

  def __init__(self,
               name: Text,
               kind: Text = 'parameter',
               distribution: Text = 'normal',
               scale: float = 1.0,
               length: int = 1):
    """Constructor.

    Args:
      name: Keyword (in-process) or token position label (external).
      kind: One of TARGET_KINDS.
      distribution: 'uniform' on [-scale, scale] or 'normal' with sd scale.
      scale: Perturbation scale >= 0. Zero gives a no-perturbation control.
      length: Number of time steps for a forcing series.

    Raises:
      ValueError: On an unknown kind or distribution, negative scale or
        non-positive length.
    """
    if kind not in TARGET_KINDS:
      raise ValueError('Unknown target kind {}, options are {}.'.format(
          kind, TARGET_KINDS))
    if distribution not in DISTRIBUTIONS:
      raise ValueError('Unknown distribution {}, options are {}.'.format(
          distribution, DISTRIBUTIONS))
    if scale < 0.0:
      raise ValueError('Perturbation scale must be >= 0, got {}.'.format(scale))
    if length < 1 or (kind != 'forcing' and length != 1):
      raise ValueError('Only forcing targets take a length > 1.')
    self.name = name
    self.kind = kind
    self.distribution = distribution
    self.scale = float(scale)
    self.length = int(length)

  def draw(self, rng: np.random.Generator) -> Union[float, np.ndarray]:
    """One perturbation value, or a series drawn independently per step."""
    if self.distribution == 'uniform':
      values = rng.uniform(-self.scale, self.scale, size=self.length)
    else:
      values = rng.normal(0.0, self.scale, size=self.length)
    return values if self.kind == 'forcing' else float(values[0])

  def to_json(self) -> Dict[Text, Any]:
    return {'name': self.name, 'kind': self.kind,
            'distribution': self.distribution, 'scale': self.scale,
            'length': self.length}


class PerturbationPlan(object):
  """Perturbation targets and the replicate count per base point."""

  def __init__(self,
               targets: Sequence[PerturbationTarget],
               replicates: int):
    if replicates < 2:
      raise ValueError('A perturbation plan needs replicates >= 2, got {}.'
                       .format(replicates))
    names = [t.name for t in targets]
    if len(set(names)) != len(names):
      raise ValueError('Perturbation target names must be unique.')
    self.targets = tuple(targets)
    self.replicates = int(replicates)

  @property
  def has_forcing(self) -> bool:
    return any(t.kind == 'forcing' for t in self.targets)

  def draw(self, rng: np.random.Generator) -> Dict[Text, Any]:
    return {t.name: t.draw(rng) for t in self.targets}

  def to_json(self) -> Dict[Text, Any]:
    return {'format_version': FORMAT_VERSION,
            'targets': [t.to_json() for t in self.targets],
            'replicates': self.replicates}

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'PerturbationPlan':
    targets = [PerturbationTarget(**t) for t in doc.get('targets', ())]
    return cls(targets, doc['replicates'])


# ---------------------- Discrepancy specification -----------------------------
def _check_correlation(correlation: np.ndarray, n: int) -> np.ndarray:
  if correlation.shape != (n, n):
    raise core.DiscrepancyError(
        'Correlation matrix must be {0}x{0}, got {1}.'.format(
            n, correlation.shape))
  if not np.allclose(correlation, correlation.T, rtol=0.0, atol=1e-12):
    raise core.DiscrepancyError('Correlation matrix must be symmetric.')
  if not np.allclose(np.diag(correlation), 1.0, rtol=0.0, atol=1e-12):
    raise core.DiscrepancyError('Correlation matrix needs a unit diagonal.')
  eigenvalues = np.linalg.eigvalsh(correlation)
  if np.min(eigenvalues) < core.EIGENVALUE_FLOOR:
    raise core.DiscrepancyError(
        'Correlation matrix is not positive semi-definite (min eigenvalue '
        '{:.3g}).'.format(np.min(eigenvalues)),
        min_eigenvalue=float(np.min(eigenvalues)))
  return correlation


def _correlation_factor(correlation: np.ndarray) -> np.ndarray:
  """F with F F^T = correlation, clipping eigenvalues at the -1e-10 floor."""
  eigenvalues, vectors = np.linalg.eigh(correlation)
  if np.min(eigenvalues) < core.EIGENVALUE_FLOOR:
    raise core.DiscrepancyError('Assembled covariance is not PSD.')
  return vectors * np.sqrt(np.maximum(eigenvalues, 0.0))


@gin.configurable
class DiscrepancySpec(object):
  """Internal plus external discrepancy for the outputs of one model.

  The covariance at an input point with model output scale s is
    diag(sqrt(v)) R diag(sqrt(v)) + inflation * diag(e^2)
  with v the internal variances (constant, or emulated over inputs), R the
  cross-output correlation and e the external standard deviation: scale * |s|
  in relative mode, scale in absolute mode.
  """

  def __init__(self,
               output_names: Sequence[Text],
               internal_variance: Optional[Sequence[float]] = None,
               correlation: Optional[np.ndarray] = None,
               point_design: Optional[designs.DesignSet] = None,
               variance_emulators: Optional[
                   Mapping[Text, emulators.Emulator]] = None,
               external_mode: Text = 'relative',
               external_scale: Union[float, Sequence[float]] = 0.1,
               inflation: float = 1.0,
               time_correlation_ignored: bool = False):
    """Constructor.

    Args:
      output_names: Outputs the spec covers, in order.
      internal_variance: Internal variance per output (default zeros).
      correlation: Cross-output correlation (default identity).
      point_design: Base points with their assessed internal variances as
        responses, for emulate_internal().
      variance_emulators: Log-variance emulator per output. When present the
        internal variance depends on the input point.
      external_mode: 'relative' (scale times |output|) or 'absolute'.
      external_scale: External scale >= 0, scalar or per output.
      inflation: Multiplier >= 1 on the external variance, estimated from
        history-matching residuals.
      time_correlation_ignored: Set when forcing series were perturbed
        independently per time step.

    Raises:
      DiscrepancyError: On negative variances or scales, or an invalid
        correlation matrix.
    """
    self.output_names = tuple(output_names)
    k = len(self.output_names)
    if k == 0:
      raise core.DiscrepancyError('A DiscrepancySpec needs outputs.')
    if internal_variance is None:
      internal_variance = np.zeros(k)
    self.internal_variance = core.frozen_array(
        np.broadcast_to(np.asarray(internal_variance, np.float64), (k,)))
    if np.any(self.internal_variance < 0.0):
      raise core.DiscrepancyError('Internal variances must be >= 0.')
    if correlation is None:
      correlation = np.eye(k)
    self.correlation = core.frozen_array(
        _check_correlation(np.asarray(correlation, np.float64), k))
    self._factor = _correlation_factor(self.correlation)
    if external_mode not in EXTERNAL_MODES:
      raise core.DiscrepancyError(
          'Unknown external mode {}, options are {}.'.format(
              external_mode, EXTERNAL_MODES))
    self.external_mode = external_mode
    self.external_scale = core.frozen_array(
        np.broadcast_to(np.asarray(external_scale, np.float64), (k,)))
    if np.any(self.external_scale < 0.0):
      raise core.DiscrepancyError('External scales must be >= 0.')
    if inflation < 1.0:
      raise core.DiscrepancyError('Inflation must be >= 1, got {}.'.format(
          inflation))
    self.inflation = float(inflation)
    self.point_design = point_design
    self.variance_emulators = (dict(variance_emulators)
                               if variance_emulators else None)
    if self.variance_emulators is not None:
      missing = set(self.output_names) - set(self.variance_emulators)
      if missing:
        raise core.DiscrepancyError(
            'No variance emulator for outputs {}.'.format(sorted(missing)))
    self.time_correlation_ignored = bool(time_correlation_ignored)

  @property
  def n_outputs(self) -> int:
    return len(self.output_names)

  @property
  def is_zero(self) -> bool:
    return (self.variance_emulators is None and
            not np.any(self.internal_variance) and
            not np.any(self.external_scale))

  def index(self, output_name: Text) -> int:
    if output_name not in self.output_names:
      raise core.DiscrepancyError(
          'Output {} not in discrepancy spec {}.'.format(output_name,
                                                         self.output_names))
    return self.output_names.index(output_name)

  # Variances.
  def internal_variance_batch(self, points: np.ndarray) -> np.ndarray:
    """Internal variance per output at many points, shape [n, k]."""
    points = np.atleast_2d(points)
    if self.variance_emulators is None:
      return np.broadcast_to(self.internal_variance,
                             (points.shape[0], self.n_outputs))
    columns = [np.exp(self.variance_emulators[name].predict_batch(points).mean)
               for name in self.output_names]
    return np.stack(columns, axis=1)

  def external_variance(self, output_scale) -> np.ndarray:
    """External variance per output; output_scale broadcasts against [k]."""
    sd = self.external_scale
    if self.external_mode == 'relative':
      sd = sd * np.abs(np.asarray(output_scale, np.float64))
    return self.inflation * np.square(sd)

  def output_variance(self, points, output_scale, output_name: Text):
    """Total discrepancy variance of one output at many points."""
    j = self.index(output_name)
    internal = self.internal_variance_batch(points)[:, j]
    sd = self.external_scale[j]
    if self.external_mode == 'relative':
      sd = sd * np.abs(np.asarray(output_scale, np.float64))
    return internal + self.inflation * np.square(sd)

  def covariance(self, point, output_scale) -> np.ndarray:
    """Full covariance matrix [k, k] at one point."""
    sd = np.sqrt(self.internal_variance_batch(point)[0])
    internal = sd[:, np.newaxis] * self.correlation * sd[np.newaxis, :]
    external = np.broadcast_to(self.external_variance(output_scale),
                               (self.n_outputs,))
    return internal + np.diag(external)

  # Derived specs.
  def inflated(self, factor: float) -> 'DiscrepancySpec':
    """Copy with the external variance multiplied by factor >= 1."""
    return self.replace(inflation=self.inflation * factor)

  def replace(self, **changes) -> 'DiscrepancySpec':
    kwargs = dict(
        output_names=self.output_names,
        internal_variance=self.internal_variance,
        correlation=self.correlation,
        point_design=self.point_design,
        variance_emulators=self.variance_emulators,
        external_mode=self.external_mode,
        external_scale=self.external_scale,
        inflation=self.inflation,
        time_correlation_ignored=self.time_correlation_ignored)
    kwargs.update(changes)
    return DiscrepancySpec(**kwargs)

  # Serialization.
  def to_json(self) -> Dict[Text, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'output_names': list(self.output_names),
        'internal': {
            'variance': self.internal_variance.tolist(),
            'correlation': self.correlation.tolist(),
            'point_design': (None if self.point_design is None else
                             self.point_design.to_json()),
            'variance_emulators': (
                None if self.variance_emulators is None else
                {k: v.to_json() for k, v in self.variance_emulators.items()}),
        },
        'external': {'mode': self.external_mode,
                     'scale': self.external_scale.tolist(),
                     'inflation': self.inflation},
        'time_correlation_ignored': self.time_correlation_ignored,
    }

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'DiscrepancySpec':
    internal = doc.get('internal', {})
    external = doc.get('external', {})
    point_design = internal.get('point_design')
    variance_emulators = internal.get('variance_emulators')
    return cls(
        output_names=doc['output_names'],
        internal_variance=internal.get('variance'),
        correlation=internal.get('correlation'),
        point_design=(None if point_design is None else
                      designs.DesignSet.from_json(point_design)),
        variance_emulators=(
            None if variance_emulators is None else
            {k: emulators.Emulator.from_json(v)
             for k, v in variance_emulators.items()}),
        external_mode=external.get('mode', 'relative'),
        external_scale=external.get('scale', 0.1),
        inflation=external.get('inflation', 1.0),
        time_correlation_ignored=doc.get('time_correlation_ignored', False))


def external_only(output_names: Sequence[Text],
                  mode: Text = 'relative',
                  scale: Union[float, Sequence[float]] = 0.1
                  ) -> DiscrepancySpec:
  return DiscrepancySpec(output_names, external_mode=mode,
                         external_scale=scale)


def zero(output_names: Sequence[Text]) -> DiscrepancySpec:
  """A spec with every variance zero."""
  return DiscrepancySpec(output_names, external_mode='absolute',
                         external_scale=0.0)


# ---------------------- Assessment --------------------------------------------
def assess_internal(handle: simulators.SimulatorHandle,
                    base_points: designs.DesignSet,
                    plan: PerturbationPlan,
                    seed: int = 0) -> DiscrepancySpec:
  """Assess internal discrepancy by perturbation experiments.

  Every base point is run plan.replicates times, each with fresh perturbation
  draws. Per base point the sample variance of each output is recorded;
  the cross-output correlation is pooled over base points from the
  within-point deviations.

  Args:
    handle: The simulator; must accept the plan's targets.
    base_points: Base inputs (responses ignored).
    plan: Targets and replicate count.
    seed: Seed for the perturbation draws.

  Returns:
    DiscrepancySpec with the mean internal variance, the pooled correlation
    and the per-point variances attached in `point_design`. External scale is
    zero.

  Raises:
    DiscrepancyError: If fewer than 2 replicates succeed at any base point.
  """
  n, r = base_points.n_runs, plan.replicates
  if plan.has_forcing:
    logging.warning('Forcing series are perturbed independently per time '
                    'step; any time correlation is ignored.')
  points = np.repeat(base_points.points, r, axis=0)
  perturbations = [
      plan.draw(core.substream(seed, 'discrepancy', 'assess', i // r, i % r))
      for i in range(n * r)]
  outputs = simulators.evaluate_many(handle, points, perturbations,
                                     skip_failures=True)
  outputs = outputs.reshape(n, r, handle.n_outputs)

  ok = ~np.any(np.isnan(outputs), axis=2)
  successes = np.sum(ok, axis=1)
  if np.any(successes < 2):
    bad = int(np.argmin(successes))
    raise core.DiscrepancyError(
        'Base point {} has only {} successful replicates.'.format(
            bad, int(successes[bad])), row=bad, successes=int(successes[bad]))

  point_variances = np.zeros((n, handle.n_outputs))
  scatter = np.zeros((handle.n_outputs, handle.n_outputs))
  for i in range(n):
    values = outputs[i][ok[i]]
    deviations = values - np.mean(values, axis=0)
    point_variances[i] = np.sum(deviations**2, axis=0) / (values.shape[0] - 1)
    scatter += deviations.T @ deviations

  scale = np.sqrt(np.diag(scatter))
  correlation = np.eye(handle.n_outputs)
  for a in range(handle.n_outputs):
    for b in range(handle.n_outputs):
      if a != b and scale[a] > 0.0 and scale[b] > 0.0:
        correlation[a, b] = np.clip(scatter[a, b] / (scale[a] * scale[b]),
                                    -1.0, 1.0)
  internal_variance = np.mean(point_variances, axis=0)
  logging.info('Internal discrepancy over %d base points: variance %s',
               n, internal_variance)
  return DiscrepancySpec(
      handle.output_names,
      internal_variance=internal_variance,
      correlation=correlation,
      point_design=base_points.without_responses().with_responses(
          point_variances, handle.output_names),
      external_mode='absolute',
      external_scale=0.0,
      time_correlation_ignored=plan.has_forcing)


def assess_replicate_noise(handle: simulators.SimulatorHandle,
                           base_points: designs.DesignSet,
                           replicates: int = 10,
                           seed: int = 0) -> DiscrepancySpec:
  """Internal discrepancy from repeated runs of a non-deterministic model."""
  if handle.deterministic:
    logging.warning('Simulator %s is deterministic; replicate variance will '
                    'be zero.', handle.name)
  return assess_internal(handle, base_points, PerturbationPlan((), replicates),
                         seed)


def emulate_internal(spec: DiscrepancySpec,
                     trend_basis: Text = 'linear',
                     **fit_kwargs) -> DiscrepancySpec:
  """Extend assessed internal variances over the input space.

  One emulator per output is fitted to log(max(variance, 1e-12)) at the base
  points; the internal variance at any input is then exp(emulator mean).

  Raises:
    DiscrepancyError: If the spec has no point-attached variances.
    FitError: If there are fewer base points than trend basis functions.
  """
  if spec.point_design is None:
    raise core.DiscrepancyError('No point-attached variances to emulate.')
  design = spec.point_design
  log_variance = np.log(np.maximum(design.responses, core.VARIANCE_FLOOR))
  log_design = design.with_responses(log_variance, spec.output_names)
  fitted = {
      name: emulators.fit(log_design, trend_basis, output=name, **fit_kwargs)
      for name in spec.output_names
  }
  return spec.replace(variance_emulators=fitted)


# ---------------------- Sampling ----------------------------------------------
def sample_discrepancy_batch(spec: DiscrepancySpec,
                             points: np.ndarray,
                             output_scale: np.ndarray,
                             rng: np.random.Generator) -> np.ndarray:
  """Zero-mean Gaussian discrepancy draws, one row per point.

  Args:
    spec: The discrepancy specification.
    points: Inputs [n, n_dims].
    output_scale: Model outputs [n, k] used by the relative external mode.
    rng: Caller-owned generator.

  Returns:
    Draws [n, k]. The internal part is correlated across outputs, the
    external part independent.
  """
  points = np.atleast_2d(points)
  n, k = points.shape[0], spec.n_outputs
  output_scale = np.broadcast_to(np.asarray(output_scale, np.float64), (n, k))
  if spec.is_zero:
    return np.zeros((n, k))
  internal_sd = np.sqrt(spec.internal_variance_batch(points))
  external_sd = np.sqrt(spec.external_variance(output_scale))
  z_internal = rng.standard_normal((n, k))
  z_external = rng.standard_normal((n, k))
  # pylint: disable=protected-access
  internal = internal_sd * (z_internal @ spec._factor.T)
  return internal + external_sd * z_external


def sample_discrepancy(spec: DiscrepancySpec,
                       point,
                       model_output_scale,
                       rng: np.random.Generator) -> np.ndarray:
  """One discrepancy draw (a vector over the spec's outputs)."""
  point = np.asarray(point, np.float64).ravel()[np.newaxis, :]
  scale = np.asarray(model_output_scale, np.float64).reshape(1, -1)
  if scale.shape[1] not in (1, spec.n_outputs):
    raise core.DiscrepancyError(
        'Output scale has {} entries, spec has {} outputs.'.format(
            scale.shape[1], spec.n_outputs))
  return sample_discrepancy_batch(spec, point, scale, rng)[0]
