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
r"""Design, emulate, match, propagate and decide from the command line.

Usage:
================================================================================
Every step of the pipeline is a subcommand with its own flags; run
`emuchain <subcommand> --help` to list them. The pip install installs an
`emuchain` script that can be called directly. Every subcommand also takes
--gin_file / --gin_param (gin/defaults.gin is always parsed first), --config
(a pipeline config JSON with the master seed and the uncertainty manifest),
--lock and --rationale. Each successful run appends an audit record to the
analysis.lock.json next to its output.
================================================================================
emuchain design --space=space.json --n=20 --seed=7 --out=design.csv

emuchain run \
--sim=py:emuchain.pipeline.demo_models:supply \
--outputs=cost,delivered \
--design=design.csv \
--out=runs.csv

emuchain fit --design=runs.csv --output=cost --trend=linear --out=cost.json
emuchain validate --em=cost.json


================================================================================
Discrepancy, history matching and forecasting.
================================================================================
emuchain discrepancy --sim=./model.sh --design=base.csv --plan=plan.json \
--seed=7 --out=disc.json

emuchain match --em=em.json --disc=disc.json --obs=obs.json \
--candidates=cand.csv --cutoff=3 --out=retained.json

emuchain forecast --retained=retained.json --em=em.json --n=10000 --seed=7 \
--out=fc.csv


================================================================================
Chained propagation and decision support. Reports need a complete uncertainty
manifest, given by --config or already present in the lock file.
================================================================================
emuchain propagate --graph=graph.json --exo=exo.json --decide=d.json \
--n=100000 --seed=7 --out=samples.csv

emuchain decide --graph=graph.json --exo=exo.json --utility=u.json \
--grid=d.csv --stages=4 --config=config.json --report=report.json \
--plot_data=plots

emuchain pareto --graph=graph.json --exo=exo.json --grid=d.csv \
--attrs=supply/cost:min,market/revenue:max --config=config.json \
--report=pareto.json

emuchain tree --tree=tree.json --utility=u.json
emuchain audit verify --lock=analysis.lock.json
emuchain report --config=config.json --report=report.json


"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import json
import os
import sys

from absl import app
from absl import flags
from absl import logging
from emuchain import calibration
from emuchain import chain
from emuchain import core
from emuchain import decisions
from emuchain import designs
from emuchain import discrepancy
from emuchain import emulators
from emuchain import ledger
from emuchain import simulators
from emuchain import trees
from emuchain import utilities
from emuchain.pipeline import artifacts
from emuchain.pipeline import report_util
import gin
import numpy as np

GIN_PATH = os.path.join(os.path.dirname(__file__), 'gin')
DEFAULT_GIN = 'defaults.gin'
ORIENTATION_ALIASES = {'min': 'minimize', 'max': 'maximize',
                       'minimize': 'minimize', 'maximize': 'maximize'}

# What a subcommand hands back for its audit record.
RunResult = collections.namedtuple('RunResult', ('inputs', 'seed', 'output'))

SUBCOMMANDS = collections.OrderedDict()


def subcommand(name, help_text):
  """Register `define(fv)` and the runner it returns under `name`."""
  def decorator(define):
    SUBCOMMANDS[name] = (help_text, define)
    return define
  return decorator


# ------------------------------------------------------------------------------
# Configuration
# ------------------------------------------------------------------------------
class PipelineConfig(object):
  """Master seed, manifest inputs, default sizes and document paths.

  Paths are relative to the config file. Every referenced file must exist.
  """

  def __init__(self, doc, base_path=None):
    version = doc.get('format_version', artifacts.FORMAT_VERSION)
    if version != artifacts.FORMAT_VERSION:
      raise ValueError('Unsupported config format_version {}.'.format(version))
    self.seed = doc.get('seed')
    if self.seed is not None and not isinstance(self.seed, int):
      raise ValueError('Config seed must be an integer, got {!r}.'.format(
          self.seed))
    self.modules = doc.get('modules')
    self.rationales = doc.get('rationales', {})
    self.magnitudes = {k: tuple(v)
                       for k, v in doc.get('magnitudes', {}).items()}
    self.settings = {k: doc[k] for k in ('n_samples', 'cutoff', 'k_bound',
                                         'stages', 'budget', 'epsilon')
                     if k in doc}
    directory = os.path.dirname(os.path.abspath(base_path or '.'))
    self.paths = {k: os.path.join(directory, v)
                  for k, v in doc.get('paths', {}).items()}
    for path in self.paths.values():
      if not os.path.exists(path):
        raise FileNotFoundError(2, 'Config references a missing file', path)

  @classmethod
  def load(cls, path):
    if path is None:
      return cls({})
    return cls(artifacts.read_json(path), path)

  def manifest(self):
    if self.modules is None:
      return None
    return ledger.build_manifest(self.modules, self.rationales,
                                 self.magnitudes)


def parse_gin(fv):
  """Parse gin config from defaults, --gin_file and --gin_param."""
  gin.clear_config()
  gin.add_config_file_search_path(GIN_PATH)
  gin.parse_config_file(os.path.join(GIN_PATH, DEFAULT_GIN))
  gin.parse_config_files_and_bindings(fv.gin_file, fv.gin_param,
                                      finalize_config=False)


def _define_common(fv):
  flags.DEFINE_multi_string('gin_file', [], 'Gin files to parse after '
                            'defaults.gin; searched in the gin/ folder too.',
                            flag_values=fv)
  flags.DEFINE_multi_string('gin_param', [], 'Gin parameter bindings.',
                            flag_values=fv)
  flags.DEFINE_integer('verbosity', 0, 'absl logging verbosity.',
                       flag_values=fv)
  flags.DEFINE_string('config', None, 'Pipeline config JSON.', flag_values=fv)
  flags.DEFINE_string('lock', None, 'Lock file; defaults to {} next to the '
                      'output.'.format(artifacts.LOCK_NAME), flag_values=fv)
  flags.DEFINE_string('rationale', '', 'Rationale stored in the audit record.',
                      flag_values=fv)


def _seed(fv, config):
  """--seed, else the config's master seed; there is no wall-clock seed."""
  if fv.seed is not None:
    return fv.seed
  if config.seed is not None:
    return config.seed
  raise app.UsageError('A seed is required: pass --seed or set "seed" in '
                       '--config.')


def _setting(fv, config, name, default=None):
  value = getattr(fv, name)
  if value is not None:
    return value
  return config.settings.get(name, default)


def _n_samples(fv, config):
  n = fv.n
  if n is None:
    n = config.settings.get('n_samples', 10000)
  if n < 1:
    raise app.UsageError('Sample size must be positive, got {}.'.format(n))
  return n


def _path(fv, config, name, required=True):
  value = getattr(fv, name)
  if value is None:
    value = config.paths.get(name)
  if value is None and required:
    raise app.UsageError('--{} is required.'.format(name))
  return value


def _kwargs(**values):
  """Only the values that were set, so gin bindings apply to the rest."""
  return {k: v for k, v in values.items() if v is not None}


def _manifest(fv, config, output_path):
  manifest = config.manifest()
  if manifest is None:
    lock = artifacts.read_lock(fv.lock or artifacts.lock_path_for(output_path))
    manifest = lock.get('manifest')
  return manifest


def _thresholds(entries):
  thresholds = collections.OrderedDict()
  for entry in entries or []:
    name, _, value = entry.rpartition(':')
    if not name:
      raise app.UsageError('Threshold {!r} is not attribute:value.'.format(
          entry))
    thresholds.setdefault(name, []).append(core.parse_decimal(value))
  return thresholds


def _write_or_print(doc, out):
  if out is None:
    sys.stdout.write(artifacts.dumps(doc))
  else:
    artifacts.write_json(out, doc)


# ------------------------------------------------------------------------------
# Loading documents
# ------------------------------------------------------------------------------
def _load_emulators(paths):
  ems = collections.OrderedDict()
  for path in paths:
    em = emulators.Emulator.from_json(artifacts.read_json(path))
    ems[em.output_name] = em
  return ems


def _load_disc(path):
  if path is None:
    return None
  return discrepancy.DiscrepancySpec.from_json(artifacts.read_json(path))


def _load_graph(path):
  return chain.ModelGraph.from_json(artifacts.read_json(path),
                                    artifacts.make_resolver(path))


def _load_exogenous(path):
  directory = os.path.dirname(os.path.abspath(path))

  def load_samples(reference, column):
    return artifacts.load_samples(os.path.join(directory, reference), column)

  return chain.exogenous_from_json(artifacts.read_json(path), load_samples)


def _load_grid(path, graph):
  """Decision grid with columns ordered as the graph's decisions."""
  table = artifacts.read_table(path)
  names = list(graph.decision_names)
  columns = list(table.names[:table.n_inputs])
  if sorted(columns) != sorted(names):
    raise ValueError('Grid {} has columns {}, the graph decides {}.'.format(
        path, columns, names))
  order = [columns.index(n) for n in names]
  pick = lambda v: None if v is None else v[order]
  ordered = artifacts.Table(names, table.values[:, order], len(names),
                            pick(table.lower), pick(table.upper))
  return decisions.DecisionSet(ordered.values, artifacts.space_of(ordered))


# ------------------------------------------------------------------------------
# Model interface
# ------------------------------------------------------------------------------
@subcommand('design', 'Latin hypercube design over an input space.')
def define_design(fv):
  flags.DEFINE_string('space', None, 'Input space JSON.', flag_values=fv)
  flags.DEFINE_integer('n', None, 'Runs; default 10 per dimension.',
                       lower_bound=1, flag_values=fv)
  flags.DEFINE_integer('seed', None, 'Seed.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Design CSV.', flag_values=fv)
  flags.mark_flags_as_required(['space', 'out'], flag_values=fv)

  def run(config):
    space = designs.InputSpace.from_json(artifacts.read_json(fv.space))
    n = designs.default_design_size(space) if fv.n is None else fv.n
    seed = _seed(fv, config)
    artifacts.write_design(fv.out, designs.latin_hypercube(space, n, seed))
    return RunResult([fv.space], seed, fv.out)

  return run


@subcommand('run', 'Run a simulator over a design.')
def define_run(fv):
  flags.DEFINE_string('sim', None, 'Command line of an external simulator, or '
                      'py:module:function.', flag_values=fv)
  flags.DEFINE_string('design', None, 'Design CSV.', flag_values=fv)
  flags.DEFINE_list('outputs', ['y'], 'Output names.', flag_values=fv)
  flags.DEFINE_boolean('nondeterministic', False, 'The simulator is not '
                       'deterministic.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Runs CSV.', flag_values=fv)
  flags.mark_flags_as_required(['sim', 'design', 'out'], flag_values=fv)

  def run(unused_config):
    design = artifacts.read_design(fv.design)
    with simulators.get_simulator(fv.sim, fv.outputs, not fv.nondeterministic,
                                  design.space.n_dims) as handle:
      runs = simulators.run_design(handle, design)
    artifacts.write_design(fv.out, runs)
    return RunResult([fv.design], None, fv.out)

  return run


# ------------------------------------------------------------------------------
# Emulators
# ------------------------------------------------------------------------------
@subcommand('fit', 'Fit an emulator to one output of a runs CSV.')
def define_fit(fv):
  flags.DEFINE_string('design', None, 'Runs CSV.', flag_values=fv)
  flags.DEFINE_string('output', None, 'Output to emulate; default the first.',
                      flag_values=fv)
  flags.DEFINE_enum('trend', None, list(emulators.BASES), 'Trend basis.',
                    flag_values=fv)
  flags.DEFINE_enum('mode', None, list(emulators.HYPER_MODES),
                    'Hyperparameter mode.', flag_values=fv)
  flags.DEFINE_boolean('log_transform', None, 'Emulate log(y).',
                       flag_values=fv)
  flags.DEFINE_float('variance', None, 'Fixed residual variance (mode fixed).',
                     flag_values=fv)
  flags.DEFINE_list('lengths', None, 'Fixed correlation lengths (mode fixed).',
                    flag_values=fv)
  flags.DEFINE_string('coarse_design', None, 'Runs CSV of a coarse model for '
                      'a multi-level emulator.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Emulator JSON.', flag_values=fv)
  flags.mark_flags_as_required(['design', 'out'], flag_values=fv)

  def run(unused_config):
    design = artifacts.read_design(fv.design)
    lengths = (None if fv.lengths is None else
               [core.parse_decimal(v) for v in fv.lengths])
    kwargs = _kwargs(trend_basis=fv.trend, hyper_mode=fv.mode,
                     output=fv.output, log_transform=fv.log_transform,
                     variance=fv.variance, correlation_lengths=lengths)
    inputs = [fv.design]
    if fv.coarse_design:
      coarse = artifacts.read_design(fv.coarse_design, design.space)
      em = emulators.fit_multilevel(coarse, design, **kwargs)
      inputs.append(fv.coarse_design)
    else:
      em = emulators.fit(design, **kwargs)
    artifacts.write_json(fv.out, em.to_json())
    return RunResult(inputs, None, fv.out)

  return run


@subcommand('validate', 'Leave-one-out diagnostics of an emulator.')
def define_validate(fv):
  flags.DEFINE_string('em', None, 'Emulator JSON.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Diagnostics JSON; default stdout.',
                      flag_values=fv)
  flags.mark_flag_as_required('em', flag_values=fv)

  def run(unused_config):
    em = emulators.Emulator.from_json(artifacts.read_json(fv.em))
    report = emulators.validate_loo(em)
    doc = {
        'format_version': artifacts.FORMAT_VERSION,
        'output_name': em.output_name,
        'n_runs': em.n_runs,
        'errors': [None if np.isnan(e) else float(e) for e in report.errors],
        'within_2': report.within_2,
        'within_3': report.within_3,
        'degenerate_indices': list(report.degenerate_indices),
    }
    _write_or_print(doc, fv.out)
    return RunResult([fv.em], None, fv.out)

  return run


# ------------------------------------------------------------------------------
# Discrepancy and calibration
# ------------------------------------------------------------------------------
@subcommand('discrepancy', 'Assess internal discrepancy by perturbation.')
def define_discrepancy(fv):
  flags.DEFINE_string('sim', None, 'Simulator, as for `run`.', flag_values=fv)
  flags.DEFINE_string('design', None, 'Base points CSV.', flag_values=fv)
  flags.DEFINE_list('outputs', ['y'], 'Output names.', flag_values=fv)
  flags.DEFINE_string('plan', None, 'Perturbation plan JSON; without it the '
                      'replicate noise of a non-deterministic simulator is '
                      'assessed.', flag_values=fv)
  flags.DEFINE_integer('replicates', 10, 'Replicates without a plan.',
                       flag_values=fv)
  flags.DEFINE_boolean('emulate', False, 'Emulate internal variance over the '
                       'input space.', flag_values=fv)
  flags.DEFINE_enum('external_mode', None, list(discrepancy.EXTERNAL_MODES),
                    'External discrepancy mode.', flag_values=fv)
  flags.DEFINE_float('external_scale', None, 'External discrepancy scale.',
                     flag_values=fv)
  flags.DEFINE_integer('seed', None, 'Seed.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Discrepancy JSON.', flag_values=fv)
  flags.mark_flags_as_required(['sim', 'design', 'out'], flag_values=fv)

  def run(config):
    seed = _seed(fv, config)
    base = artifacts.read_design(fv.design).without_responses()
    inputs = [fv.design]
    with simulators.get_simulator(fv.sim, fv.outputs, fv.plan is not None,
                                  base.space.n_dims) as handle:
      if fv.plan:
        plan = discrepancy.PerturbationPlan.from_json(
            artifacts.read_json(fv.plan))
        spec = discrepancy.assess_internal(handle, base, plan, seed)
        inputs.append(fv.plan)
      else:
        spec = discrepancy.assess_replicate_noise(handle, base, fv.replicates,
                                                  seed)
    if fv.emulate:
      spec = discrepancy.emulate_internal(spec)
    spec = spec.replace(**_kwargs(external_mode=fv.external_mode,
                                  external_scale=fv.external_scale))
    artifacts.write_json(fv.out, spec.to_json())
    return RunResult(inputs, seed, fv.out)

  return run


@subcommand('match', 'History match candidate inputs against observations.')
def define_match(fv):
  flags.DEFINE_multi_string('em', None, 'Emulator JSON, one per output.',
                            flag_values=fv)
  flags.DEFINE_string('disc', None, 'Discrepancy JSON.', flag_values=fv)
  flags.DEFINE_string('obs', None, 'Observations JSON.', flag_values=fv)
  flags.DEFINE_string('candidates', None, 'Candidate inputs CSV.',
                      flag_values=fv)
  flags.DEFINE_float('cutoff', None, 'Implausibility cutoff.', flag_values=fv)
  flags.DEFINE_boolean('inflate', False, 'Also estimate the external '
                       'discrepancy inflation.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Retained space JSON.', flag_values=fv)
  flags.mark_flags_as_required(['em', 'obs', 'candidates', 'out'],
                               flag_values=fv)

  def run(config):
    ems = _load_emulators(fv.em)
    space = next(iter(ems.values())).space
    candidates = artifacts.read_design(fv.candidates, space)
    observations = calibration.observations_from_json(
        artifacts.read_json(fv.obs))
    retained = calibration.history_match(
        ems, _load_disc(fv.disc), observations, candidates,
        **_kwargs(cutoff=_setting(fv, config, 'cutoff')))
    doc = retained.to_json()
    if fv.inflate:
      doc['inflation'] = calibration.estimate_inflation(retained)
    artifacts.write_json(fv.out, doc)
    return RunResult(fv.em + [fv.disc, fv.obs, fv.candidates], None, fv.out)

  return run


@subcommand('forecast', 'Forecast outputs over a retained space.')
def define_forecast(fv):
  flags.DEFINE_string('retained', None, 'Retained space JSON.', flag_values=fv)
  flags.DEFINE_multi_string('em', None, 'Emulator JSON, one per output.',
                            flag_values=fv)
  flags.DEFINE_string('disc', None, 'Discrepancy JSON.', flag_values=fv)
  flags.DEFINE_list('outputs', None, 'Outputs to forecast; default all.',
                    flag_values=fv)
  flags.DEFINE_integer('n', None, 'Samples (default 10000).',
                       lower_bound=1, flag_values=fv)
  flags.DEFINE_integer('seed', None, 'Seed.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Forecast samples CSV.', flag_values=fv)
  flags.mark_flags_as_required(['retained', 'em', 'out'], flag_values=fv)

  def run(config):
    seed = _seed(fv, config)
    ems = _load_emulators(fv.em)
    retained = calibration.RetainedSpace.from_json(
        artifacts.read_json(fv.retained))
    outputs = list(fv.outputs or ems)
    samples = calibration.forecast(
        ems, _load_disc(fv.disc), retained,
        _n_samples(fv, config),
        core.substream(seed, 'calibration', 'forecast'), outputs)
    artifacts.write_table(fv.out, outputs, samples)
    return RunResult([fv.retained, fv.disc] + fv.em, seed, fv.out)

  return run


# ------------------------------------------------------------------------------
# Chained models
# ------------------------------------------------------------------------------
@subcommand('propagate', 'Monte Carlo propagation through a model graph.')
def define_propagate(fv):
  flags.DEFINE_string('graph', None, 'Model graph JSON.', flag_values=fv)
  flags.DEFINE_string('exo', None, 'Exogenous inputs JSON.', flag_values=fv)
  flags.DEFINE_string('decide', None, 'Decision values JSON.', flag_values=fv)
  flags.DEFINE_integer('n', None, 'Samples (default 10000).',
                       lower_bound=1, flag_values=fv)
  flags.DEFINE_integer('seed', None, 'Seed.', flag_values=fv)
  flags.DEFINE_boolean('intermediate', False, 'Also write every non-terminal '
                       'node output.', flag_values=fv)
  flags.DEFINE_string('out', None, 'Samples CSV.', flag_values=fv)
  flags.mark_flag_as_required('out', flag_values=fv)

  def run(config):
    seed = _seed(fv, config)
    graph_path = _path(fv, config, 'graph')
    exo_path = _path(fv, config, 'exo')
    chosen = None
    if fv.decide:
      chosen = {k: v for k, v in artifacts.read_json(fv.decide).items()
                if k != 'format_version'}
    result = chain.propagate(_load_graph(graph_path),
                             _load_exogenous(exo_path), chosen,
                             _n_samples(fv, config), seed,
                             keep_intermediate=fv.intermediate)
    columns = list(result.columns)
    if fv.intermediate:
      columns += [k for k in result.intermediate if k not in columns]
    samples = np.stack([result.column(c) for c in columns], axis=1)
    artifacts.write_table(fv.out, columns, samples)
    return RunResult([graph_path, exo_path, fv.decide], seed, fv.out)

  return run


# ------------------------------------------------------------------------------
# Decisions
# ------------------------------------------------------------------------------
def _define_decision_flags(fv):
  flags.DEFINE_string('graph', None, 'Model graph JSON.', flag_values=fv)
  flags.DEFINE_string('exo', None, 'Exogenous inputs JSON.', flag_values=fv)
  flags.DEFINE_string('grid', None, 'Decision grid CSV.', flag_values=fv)
  flags.DEFINE_integer('n', None, 'Outcome samples per decision '
                       '(default 10000).', lower_bound=1,
                       flag_values=fv)
  flags.DEFINE_integer('seed', None, 'Seed.', flag_values=fv)
  flags.DEFINE_float('epsilon', None, 'Nearness, as a fraction of the range.',
                     flag_values=fv)
  flags.DEFINE_list('thresholds', None, 'attribute:value pairs for '
                    'P(outcome < value) in risk profiles.', flag_values=fv)
  flags.DEFINE_string('plot_data', None, 'Directory for plot-data CSVs.',
                      flag_values=fv)
  flags.DEFINE_string('report', None, 'Report JSON.', flag_values=fv)
  flags.mark_flag_as_required('report', flag_values=fv)


def _write_report(fv, config, doc_kwargs):
  manifest = _manifest(fv, config, fv.report)
  doc = report_util.report(manifest, **doc_kwargs)
  artifacts.write_json(fv.report, doc)
  if fv.plot_data:
    report_util.write_plot_data(fv.plot_data,
                                doc_kwargs.get('risk_profiles', ()),
                                doc_kwargs.get('pareto'))
  return manifest


@subcommand('decide', 'Expected-utility staged rejection over a grid.')
def define_decide(fv):
  _define_decision_flags(fv)
  flags.DEFINE_string('utility', None, 'Utility JSON.', flag_values=fv)
  flags.DEFINE_integer('stages', None, 'Rejection stages.', flag_values=fv)
  flags.DEFINE_integer('budget', None, 'Evaluations per stage; default all.',
                       flag_values=fv)
  flags.DEFINE_float('k_bound', None, 'Bound half-width in standard errors.',
                     flag_values=fv)

  def run(config):
    seed = _seed(fv, config)
    paths = [_path(fv, config, k) for k in ('graph', 'exo', 'utility', 'grid')]
    graph = _load_graph(paths[0])
    u = utilities.UtilitySpec.from_json(artifacts.read_json(paths[2]))
    model = decisions.ChainOutcomes(graph, _load_exogenous(paths[1]),
                                    u.attribute_names)
    n = _n_samples(fv, config)
    result = decisions.staged_rejection(
        _load_grid(paths[3], graph), decisions.EUEvaluator(model, u, n, seed),
        **_kwargs(stages=_setting(fv, config, 'stages'),
                  budget=_setting(fv, config, 'budget'),
                  k_bound=_setting(fv, config, 'k_bound')))
    thresholds = _thresholds(fv.thresholds)
    profiles = [
        decisions.risk_profile(model, result.candidates[i], n,
                               core.derive_seed(seed, 'decide', int(i)),
                               thresholds)
        for i in result.active_indices]
    manifest = _write_report(fv, config, _kwargs(
        decision_set=result, risk_profiles=profiles,
        epsilon=_setting(fv, config, 'epsilon'),
        extra={'analysis': {'operation': 'decide', 'seed': seed,
                            'n_samples': n, 'utility': u.to_json()}}))
    return RunResult(paths, seed, fv.report), manifest

  return run


def _parse_attrs(entries):
  names, orientations = [], []
  for entry in entries:
    name, _, orientation = entry.rpartition(':')
    if not name or orientation not in ORIENTATION_ALIASES:
      raise app.UsageError('Attribute {!r} is not column:min or '
                           'column:max.'.format(entry))
    names.append(name)
    orientations.append(ORIENTATION_ALIASES[orientation])
  return names, orientations


@subcommand('pareto', 'Pareto boundary of a decision grid.')
def define_pareto(fv):
  _define_decision_flags(fv)
  flags.DEFINE_list('attrs', None, 'column:min or column:max per attribute.',
                    flag_values=fv)
  flags.DEFINE_float('k_bound', None, 'Bound half-width in standard errors.',
                     flag_values=fv)
  flags.mark_flag_as_required('attrs', flag_values=fv)

  def run(config):
    seed = _seed(fv, config)
    names, orientations = _parse_attrs(fv.attrs)
    paths = [_path(fv, config, k) for k in ('graph', 'exo', 'grid')]
    graph = _load_graph(paths[0])
    model = decisions.ChainOutcomes(graph, _load_exogenous(paths[1]), names)
    n = _n_samples(fv, config)
    evaluators = [decisions.AttributeEvaluator(model, a, n, seed)
                  for a in names]
    result = decisions.pareto_front(
        _load_grid(paths[2], graph), evaluators, orientations,
        attribute_names=names,
        **_kwargs(k_bound=_setting(fv, config, 'k_bound'),
                  epsilon=_setting(fv, config, 'epsilon')))
    thresholds = _thresholds(fv.thresholds)
    profiles = [
        decisions.risk_profile(model, result.candidates[i], n,
                               core.derive_seed(seed, 'decide', int(i)),
                               thresholds)
        for i in result.boundary]
    manifest = _write_report(fv, config, dict(
        risk_profiles=profiles, pareto=result,
        extra={'analysis': {'operation': 'pareto', 'seed': seed,
                            'n_samples': n}}))
    return RunResult(paths, seed, fv.report), manifest

  return run


@subcommand('tree', 'Solve a sequential decision tree by backward induction.')
def define_tree(fv):
  flags.DEFINE_string('tree', None, 'Decision tree JSON.', flag_values=fv)
  flags.DEFINE_string('utility', None, 'Utility JSON.', flag_values=fv)
  flags.DEFINE_string('informed', None, 'The same tree with an observation '
                      'first; reports the value of information.',
                      flag_values=fv)
  flags.DEFINE_string('out', None, 'Policy JSON; default stdout.',
                      flag_values=fv)
  flags.mark_flags_as_required(['tree', 'utility'], flag_values=fv)

  def run(unused_config):
    tree = trees.DecisionTree.from_json(artifacts.read_json(fv.tree))
    u = utilities.UtilitySpec.from_json(artifacts.read_json(fv.utility))
    policy, value = trees.solve_tree(tree, u)
    doc = {
        'format_version': artifacts.FORMAT_VERSION,
        'policy': tree.policy_labels(policy),
        'policy_indices': policy,
        'expected_utility': value,
    }
    inputs = [fv.tree, fv.utility]
    if fv.informed:
      informed = trees.DecisionTree.from_json(artifacts.read_json(fv.informed))
      doc['value_of_information'] = trees.value_of_information(tree, informed,
                                                               u)
      inputs.append(fv.informed)
    _write_or_print(doc, fv.out)
    return RunResult(inputs, None, fv.out)

  return run


# ------------------------------------------------------------------------------
# Ledger and report
# ------------------------------------------------------------------------------
@subcommand('audit', 'Verify a lock file: `emuchain audit verify --lock=...`.')
def define_audit(fv):

  def run(unused_config):
    path = fv.lock or artifacts.LOCK_NAME
    lock = artifacts.read_json(path)
    ledger.validate_lock(lock)
    sys.stdout.write(artifacts.dumps({
        'verified': True,
        'records': len(lock.get('audit', [])),
        'manifest': lock.get('manifest') is not None,
    }))
    return None

  return run


@subcommand('report', 'Report with risk profiles of every grid decision.')
def define_report(fv):
  _define_decision_flags(fv)
  flags.DEFINE_list('columns', None, 'Outcome columns; default the terminal '
                    'outputs.', flag_values=fv)

  def run(config):
    inputs = []
    profiles = []
    grid = _path(fv, config, 'grid', required=False)
    seed = None
    if grid:
      seed = _seed(fv, config)
      inputs = [_path(fv, config, 'graph'), _path(fv, config, 'exo'), grid]
      graph = _load_graph(inputs[0])
      model = decisions.ChainOutcomes(graph, _load_exogenous(inputs[1]),
                                      fv.columns)
      n = _n_samples(fv, config)
      candidates = _load_grid(grid, graph)
      profiles = [
          decisions.risk_profile(model, candidates.candidates[i], n,
                                 core.derive_seed(seed, 'decide', i),
                                 _thresholds(fv.thresholds))
          for i in range(candidates.n_candidates)]
    manifest = _write_report(fv, config, dict(risk_profiles=profiles))
    return RunResult(inputs, seed, fv.report), manifest

  return run


# ------------------------------------------------------------------------------
# Entry points
# ------------------------------------------------------------------------------
def usage():
  lines = [__doc__, 'Subcommands:']
  lines.extend('  {:<12} {}'.format(name, help_text)
               for name, (help_text, _) in SUBCOMMANDS.items())
  return '\n'.join(lines) + '\n'


def _report_error(e):
  sys.stderr.write(json.dumps({
      'error': type(e).__name__,
      'message': str(e),
      'details': core.to_jsonable(getattr(e, 'details', {})),
  }, sort_keys=True) + '\n')


OUTPUT_FLAGS = ('out', 'report', 'plot_data', 'lock')


def _input_paths(fv):
  """Existing files named by the parsed flags, outputs excluded."""
  paths = []
  for name, value in sorted(fv.flag_values_dict().items()):
    if name in OUTPUT_FLAGS:
      continue
    for v in value if isinstance(value, list) else [value]:
      if isinstance(v, str) and os.path.isfile(v):
        paths.append(v)
  return paths


def _record_failure(name, fv, e):
  """Audit record for a run that exited with a domain error."""
  if name == 'audit' or not fv.is_parsed():
    return
  inputs = _input_paths(fv)
  output = getattr(fv, 'out', None) or getattr(fv, 'report', None)
  lock_path = fv.lock
  if lock_path is None and (output or inputs):
    lock_path = artifacts.lock_path_for(output or inputs[0])
  if lock_path is None:
    logging.warning('emuchain %s failed with no file to place a lock next '
                    'to; the failure is not audited.', name)
    return
  error = {'exit_code': 1, 'error': type(e).__name__, 'message': str(e)}
  try:
    artifacts.record_run(lock_path, name, inputs, getattr(fv, 'seed', None),
                         None, fv.rationale, error=error)
  except (core.EmuchainError, ValueError, OSError) as lock_error:
    logging.warning('Could not audit the failed run in %s: %s', lock_path,
                    lock_error)


def main(argv):
  """Run one subcommand; returns the process exit code."""
  args = list(argv[1:])
  if not args or args[0] in ('-h', '--help', 'help'):
    (sys.stdout if args else sys.stderr).write(usage())
    return 0 if args else 2
  name = args.pop(0)
  if name not in SUBCOMMANDS:
    sys.stderr.write('Unknown subcommand {!r}.\n{}'.format(name, usage()))
    return 2
  if name == 'audit':
    if not args or args.pop(0) != 'verify':
      sys.stderr.write('Usage: emuchain audit verify --lock=PATH\n')
      return 2

  fv = flags.FlagValues()
  runner = SUBCOMMANDS[name][1](fv)
  _define_common(fv)
  if any(a in ('-h', '--help', '--helpfull') for a in args):
    sys.stdout.write('emuchain {}: {}\n\n{}\n'.format(
        name, SUBCOMMANDS[name][0], fv.get_help()))
    return 0

  try:
    extra = fv(['emuchain ' + name] + args)
    if len(extra) > 1:
      raise app.UsageError('Unexpected arguments {}.'.format(extra[1:]))
    logging.set_verbosity(fv.verbosity)
    parse_gin(fv)
    config = PipelineConfig.load(fv.config)
    outcome = runner(config)
    if outcome is None:
      return 0
    manifest = None
    if not isinstance(outcome, RunResult):
      outcome, manifest = outcome
    lock_path = fv.lock or artifacts.lock_path_for(
        outcome.output or outcome.inputs[0])
    artifacts.record_run(lock_path, name, [p for p in outcome.inputs if p],
                         outcome.seed, outcome.output, fv.rationale, manifest)
    return 0
  except (flags.Error, app.UsageError) as e:
    sys.stderr.write('emuchain {}: {}\n'.format(name, e))
    return 2
  except FileNotFoundError as e:
    sys.stderr.write('emuchain {}: no such file: {}\n'.format(name,
                                                              e.filename))
    return 2
  except (core.EmuchainError, ValueError, KeyError) as e:
    logging.error('emuchain %s failed: %s', name, e)
    _report_error(e)
    _record_failure(name, fv, e)
    return 1


def _parse_global_flags(argv):
  # Subcommands parse their own FlagValues inside main().
  flags.FLAGS(argv[:1])
  return argv


def console_entry_point():
  """From pip installed script."""
  app.run(main, flags_parser=_parse_global_flags)


if __name__ == '__main__':
  console_entry_point()
