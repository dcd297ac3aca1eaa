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
"""Library of reporting functions."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os
from typing import Any, Dict, Optional, Sequence, Text

from absl import logging
from emuchain import calibration
from emuchain import chain
from emuchain import core
from emuchain import decisions
from emuchain import ledger
from emuchain.pipeline import artifacts
import gin
import numpy as np

FORMAT_VERSION = 1
QUANTILE_FAN = 'quantile_fan.csv'
PARETO_SCATTER = 'pareto_scatter.csv'


def sample_block(profile: decisions.RiskProfile, max_rows: int) -> Text:
  """The first max_rows outcome samples of a profile as CSV text."""
  return artifacts.format_table(profile.attribute_names,
                                profile.samples[:max_rows])


@gin.configurable
def report(manifest: Optional[Dict[Text, Any]],
           decision_set: Optional[decisions.DecisionSet] = None,
           risk_profiles: Sequence[decisions.RiskProfile] = (),
           pareto: Optional[decisions.ParetoResult] = None,
           epsilon: float = 0.05,
           extra: Optional[Dict[Text, Any]] = None,
           max_embedded_samples: int = 1000) -> Dict[Text, Any]:
  """Assemble the analysis report.

  Args:
    manifest: Uncertainty manifest; the report is refused without a complete
      one.
    decision_set: Result of staged rejection, if any.
    risk_profiles: Profiles of the decisions to compare.
    pareto: Pareto analysis, if any.
    epsilon: Nearness threshold used for the near-optimal set.
    extra: Further JSON-ready entries merged into the report.
    max_embedded_samples: Sample rows embedded per risk profile.

  Returns:
    The report as a JSON-ready dict.

  Raises:
    LedgerError: If the manifest is missing or incomplete.
  """
  if manifest is None:
    raise core.LedgerError('A report needs an uncertainty manifest.')
  ledger.validate_manifest(manifest)

  decision_section = {}
  if decision_set is not None:
    decision_section['candidates'] = decision_set.to_json()
    decision_section['survivors'] = decision_set.active_indices.tolist()
    decision_section['near_optimal'] = decisions.near_optimal(
        decision_set, epsilon).tolist()
    decision_section['epsilon'] = epsilon
  profiles = []
  for profile in risk_profiles:
    entry = profile.to_json()
    entry['samples_csv'] = sample_block(profile, max_embedded_samples)
    profiles.append(entry)
  if profiles:
    decision_section['risk_profiles'] = profiles

  doc = {
      'format_version': FORMAT_VERSION,
      'caveats': [chain.INDEPENDENCE_CAVEAT, chain.COHERENCE_CAVEAT],
      'notes': [calibration.BIAS_CORRECTION_NOTE],
      'manifest': manifest,
      'decisions': decision_section,
  }
  if pareto is not None:
    doc['pareto'] = pareto.to_json()
  if extra:
    doc.update(extra)
  logging.info('Report: %d risk profiles, %s survivors.', len(profiles),
               decision_section.get('survivors', 'no'))
  return core.to_jsonable(doc)


def quantile_fan(risk_profiles: Sequence[decisions.RiskProfile]):
  """(names, rows) with one row per decision and attribute."""
  levels = ['q{}'.format(q) for q in decisions.QUANTILE_LEVELS]
  names = ['decision', 'attribute', 'mean'] + levels
  rows = []
  for i, profile in enumerate(risk_profiles):
    for j in range(len(profile.attribute_names)):
      rows.append([i, j, profile.mean[j]] + list(profile.quantiles[j]))
  return names, np.array(rows, np.float64).reshape(len(rows), len(names))


def pareto_scatter(pareto: decisions.ParetoResult):
  """(names, rows) with every evaluated candidate and its boundary status."""
  names = (['candidate'] + list(pareto.attribute_names) +
           ['boundary', 'near_boundary', 'front'])
  evaluated = np.flatnonzero(~np.isnan(pareto.values[:, 0]))
  sign = np.array([1.0 if o == 'maximize' else -1.0
                   for o in pareto.orientations])
  fronts = decisions.pareto_fronts(pareto.values[evaluated] * sign)
  rank = np.zeros(evaluated.size)
  for k, front in enumerate(fronts):
    rank[front] = k
  rows = []
  for r, i in enumerate(evaluated):
    rows.append([i] + list(pareto.values[i]) +
                [float(i in pareto.boundary), float(i in pareto.near_boundary),
                 rank[r]])
  return names, np.array(rows, np.float64).reshape(len(rows), len(names))


def write_plot_data(directory: Text,
                    risk_profiles: Sequence[decisions.RiskProfile] = (),
                    pareto: Optional[decisions.ParetoResult] = None):
  """Write the quantile-fan and Pareto-scatter CSVs that apply."""
  written = []
  if risk_profiles:
    path = os.path.join(directory, QUANTILE_FAN)
    artifacts.write_table(path, *quantile_fan(risk_profiles))
    written.append(path)
  if pareto is not None:
    path = os.path.join(directory, PARETO_SCATTER)
    artifacts.write_table(path, *pareto_scatter(pareto))
    written.append(path)
  return written
