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
"""Chains of emulated models with attached discrepancy.

A ModelGraph strings ModelNode() objects together. Every input dimension of a
node is bound to a string key or a constant. Keys are nested lookups into the
values produced so far, so "x/rainfall" is an exogenous parameter,
"d/dose" a decision and "hydrology/flow" the output of an upstream node. The
graph is sorted topologically and propagate() draws, per sample and node in
order, the node inputs, one emulator draw per output and one discrepancy
draw.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import concurrent.futures
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Text, Union

from absl import logging
from emuchain import core
from emuchain import designs
from emuchain import discrepancy
from emuchain import emulators
import gin
import networkx as nx
import numpy as np
from scipy import stats

FORMAT_VERSION = 1
EXOGENOUS = 'x'
DECISION = 'd'
RESERVED_NAMES = (EXOGENOUS, DECISION)
INDEPENDENCE_CAVEAT = (
    'Structural discrepancy is assumed independent across models; dependent '
    'discrepancies between linked models are not represented.')
COHERENCE_CAVEAT = (
    'Emulators are sampled pointwise-independently across samples.')

# Define Types.
Binding = Union[Text, float]
Emulators = Mapping[Text, emulators.Emulator]


def _split_key(key: Text):
  parts = key.split('/')
  if len(parts) != 2 or not all(parts):
    raise core.GraphError(
        'Binding {!r} is not of the form "x/<name>", "d/<name>" or '
        '"<node>/<output>".'.format(key))
  return parts[0], parts[1]


# ModelNode --------------------------------------------------------------------
class ModelNode(object):
  """One emulated sub-model, its discrepancy and its input bindings."""

  def __init__(self,
               name: Text,
               emulators_by_output: Emulators,
               bindings: Mapping[Text, Binding],
               disc: Optional[discrepancy.DiscrepancySpec] = None):
    """Constructor.

    Args:
      name: Node name, unique within a graph. "x" and "d" are reserved.
      emulators_by_output: One emulator per output. All share one input space.
      bindings: Input dimension name -> key ("x/<name>", "d/<name>",
        "<node>/<output>") or a numeric constant.
      disc: Discrepancy over (a subset of) the node's outputs.

    Raises:
      GraphError: On a reserved name, an unbound or unknown input, or
        discrepancy outputs the node does not have.
    """
    if not name or name in RESERVED_NAMES or '/' in name:
      raise core.GraphError('Invalid node name {!r}.'.format(name))
    if not emulators_by_output:
      raise core.GraphError('Node {} has no emulators.'.format(name))
    self.name = name
    self.emulators = collections.OrderedDict(emulators_by_output)
    self.output_names = tuple(self.emulators)
    spaces = {em.space.names for em in self.emulators.values()}
    if len(spaces) != 1:
      raise core.GraphError(
          'Emulators of node {} disagree on input dimensions: {}.'.format(
              name, sorted(spaces)))
    self.input_names = spaces.pop()

    bindings = dict(bindings)
    unbound = [d for d in self.input_names if d not in bindings]
    unknown = [d for d in bindings if d not in self.input_names]
    if unbound:
      raise core.GraphError('Unbound inputs {} on node {}.'.format(
          unbound, name), node=name, unbound=unbound)
    if unknown:
      raise core.GraphError('Node {} has no inputs {}.'.format(name, unknown),
                            node=name, unknown=unknown)
    for value in bindings.values():
      if isinstance(value, str):
        _split_key(value)
      elif not np.isfinite(float(value)):
        raise core.GraphError('Constant bindings must be finite.')
    self.bindings = collections.OrderedDict(
        (d, bindings[d]) for d in self.input_names)

    if disc is not None:
      extra = [o for o in disc.output_names if o not in self.output_names]
      if extra:
        raise core.GraphError(
            'Discrepancy outputs {} are not outputs of node {}.'.format(
                extra, name))
    self.discrepancy = disc

  def references(self, kind: Optional[Text] = None):
    """(source, field) pairs of the string bindings, optionally one kind."""
    refs = []
    for value in self.bindings.values():
      if isinstance(value, str):
        source, field = _split_key(value)
        if kind is None or source == kind:
          refs.append((source, field))
    return refs

  @property
  def upstream(self):
    return [r for r in self.references() if r[0] not in RESERVED_NAMES]

  def evaluate(self,
               values: Dict[Text, Any],
               n: int,
               emulator_rng: np.random.Generator,
               discrepancy_rng: np.random.Generator) -> Dict[Text, np.ndarray]:
    """Draw this node's outputs for n samples given the values so far.

    Args:
      values: Nested dict of resolved values, {"x": {...}, "d": {...},
        "<node>": {"<output>": array}}.
      n: Number of samples.
      emulator_rng: Stream for the emulator draws.
      discrepancy_rng: Stream for the discrepancy draws.

    Returns:
      Dict of output name -> array [n].
    """
    columns = []
    for value in self.bindings.values():
      if isinstance(value, str):
        column = core.nested_lookup(value, values)
      else:
        column = float(value)
      columns.append(np.broadcast_to(np.asarray(column, np.float64), (n,)))
    inputs = np.stack(columns, axis=1)

    draws = np.zeros((n, len(self.output_names)))
    for j, em in enumerate(self.emulators.values()):
      pred = em.predict_batch(inputs)
      if np.any(pred.extrapolated):
        logging.log_first_n(
            logging.WARNING, 'Node %s: %d inputs outside the emulator space.',
            5, self.name, int(np.sum(pred.extrapolated)))
      z = emulator_rng.standard_normal(n)
      draw = pred.mean + np.sqrt(pred.variance) * z
      draws[:, j] = np.exp(draw) if em.log_transform else draw

    disc = self.discrepancy
    if disc is not None and not disc.is_zero:
      cols = [self.output_names.index(o) for o in disc.output_names]
      draws[:, cols] += discrepancy.sample_discrepancy_batch(
          disc, inputs, draws[:, cols], discrepancy_rng)
    return {o: draws[:, j] for j, o in enumerate(self.output_names)}

  def to_json(self, emulator_refs: Optional[Mapping[Text, Text]] = None
             ) -> Dict[Text, Any]:
    """JSON form; emulators inline unless a reference per output is given."""
    if emulator_refs is None:
      ems = {o: em.to_json() for o, em in self.emulators.items()}
    else:
      ems = {o: emulator_refs[o] for o in self.output_names}
    return {
        'name': self.name,
        'emulators': ems,
        'bindings': dict(self.bindings),
        'discrepancy': (None if self.discrepancy is None else
                        self.discrepancy.to_json()),
    }


# ModelGraph -------------------------------------------------------------------
class ModelGraph(object):
  """A DAG of ModelNode() objects, kept in topological order."""

  def __init__(self, nodes: Sequence[ModelNode] = ()):
    self._nodes = []
    self.order = []
    self.dag = nx.DiGraph()
    for node in nodes:
      self._nodes.append(node)
    self._sort()

  @property
  def nodes(self):
    return list(self._nodes)

  def node(self, name: Text) -> ModelNode:
    for node in self._nodes:
      if node.name == name:
        return node
    raise core.GraphError('No node named {}.'.format(name))

  def add_node(self, node: ModelNode):
    """Add a node and recompute the topological order."""
    self._nodes.append(node)
    try:
      self._sort()
    except core.GraphError:
      self._nodes.pop()
      self._sort()
      raise

  def _sort(self):
    """Topological order; ready nodes are taken in insertion order."""
    names = [n.name for n in self._nodes]
    if len(set(names)) != len(names):
      raise core.GraphError('Node names must be unique, got {}.'.format(names))
    by_name = {n.name: n for n in self._nodes}
    dag = nx.DiGraph()
    dag.add_nodes_from(names)
    for node in self._nodes:
      for source, field in node.upstream:
        if source not in by_name:
          raise core.GraphError(
              'Node {} binds to unknown node {}.'.format(node.name, source))
        if field not in by_name[source].output_names:
          raise core.GraphError(
              'Node {} binds to {}/{}, but {} has outputs {}.'.format(
                  node.name, source, field, source,
                  by_name[source].output_names))
        dag.add_edge(source, node.name)
    position = {name: i for i, name in enumerate(names)}
    try:
      order = list(nx.lexicographical_topological_sort(dag,
                                                       key=position.get))
    except nx.NetworkXUnfeasible:
      cycle = sorted({source for source, _ in nx.find_cycle(dag)})
      raise core.GraphError(
          'Model graph has a cycle through {}.'.format(cycle), nodes=cycle)
    self.dag = dag
    self.order = [by_name[name] for name in order]

  def _names_of(self, kind: Text):
    names = []
    for node in self.order:
      for _, field in node.references(kind):
        if field not in names:
          names.append(field)
    return names

  @property
  def exogenous_names(self):
    return self._names_of(EXOGENOUS)

  @property
  def decision_names(self):
    return self._names_of(DECISION)

  @property
  def terminal_columns(self):
    """'node/output' keys of the outputs no other node consumes."""
    consumed = {r for n in self._nodes for r in n.upstream}
    return ['{}/{}'.format(n.name, o) for n in self.order
            for o in n.output_names if (n.name, o) not in consumed]

  def subgraph(self, names: Sequence[Text]) -> 'ModelGraph':
    """The named nodes alone; bindings to other nodes become exogenous.

    A binding "<node>/<output>" to a node outside the subgraph is rebound to
    the exogenous key "x/<node>.<output>".
    """
    keep = set(names)
    nodes = []
    for node in self.order:
      if node.name not in keep:
        continue
      bindings = {}
      for dim, value in node.bindings.items():
        if isinstance(value, str):
          source, field = _split_key(value)
          if source not in RESERVED_NAMES and source not in keep:
            value = '{}/{}.{}'.format(EXOGENOUS, source, field)
        bindings[dim] = value
      nodes.append(ModelNode(node.name, node.emulators, bindings,
                             node.discrepancy))
    missing = keep - {n.name for n in nodes}
    if missing:
      raise core.GraphError('No nodes named {}.'.format(sorted(missing)))
    return ModelGraph(nodes)

  def to_json(self, emulator_refs=None) -> Dict[Text, Any]:
    refs = emulator_refs or {}
    return {
        'format_version': FORMAT_VERSION,
        'nodes': [n.to_json(refs.get(n.name)) for n in self._nodes],
    }

  @classmethod
  def from_json(cls,
                doc: Dict[Text, Any],
                resolve: Optional[Callable[[Text], Dict[Text, Any]]] = None
               ) -> 'ModelGraph':
    """Build a graph; string emulator entries are passed to `resolve`."""
    version = doc.get('format_version')
    if version != FORMAT_VERSION:
      raise ValueError('Unsupported graph format_version {}.'.format(version))
    nodes = []
    for entry in doc['nodes']:
      ems = collections.OrderedDict()
      for output, em_doc in entry['emulators'].items():
        if isinstance(em_doc, str):
          if resolve is None:
            raise core.GraphError(
                'Emulator reference {} needs a resolver.'.format(em_doc))
          em_doc = resolve(em_doc)
        ems[output] = emulators.Emulator.from_json(em_doc)
      disc = entry.get('discrepancy')
      nodes.append(ModelNode(
          entry['name'], ems, entry['bindings'],
          None if disc is None else
          discrepancy.DiscrepancySpec.from_json(disc)))
    return cls(nodes)


# Exogenous inputs -------------------------------------------------------------
class Empirical(object):
  """An exogenous input given by samples.

  Unpaired samples are resampled with replacement. Paired samples are used in
  order, row i feeding propagated sample i, so several paired columns from
  one earlier propagation keep their joint distribution.
  """

  def __init__(self, values, paired: bool = False):
    self.values = core.frozen_array(values, ndim=1)
    if self.values.size == 0:
      raise ValueError('Empirical input needs samples.')
    self.paired = bool(paired)


def _check_exogenous(name, spec):
  if isinstance(spec, Empirical) or hasattr(spec, 'rvs'):
    return spec
  try:
    return float(spec)
  except (TypeError, ValueError):
    raise core.GraphError(
        'Exogenous input {} must be a number, a distribution or Empirical, '
        'got {!r}.'.format(name, spec))


def _draw_exogenous(spec, n: int, start: int, rng: np.random.Generator):
  if isinstance(spec, Empirical):
    if spec.paired:
      return spec.values[start:start + n]
    return spec.values[rng.integers(0, spec.values.size, size=n)]
  if hasattr(spec, 'rvs'):
    return np.asarray(spec.rvs(size=n, random_state=rng), np.float64)
  return np.full(n, spec)


def exogenous_from_json(doc: Mapping[Text, Any],
                        load_samples: Optional[Callable[..., Any]] = None
                       ) -> Dict[Text, Any]:
  """Exogenous inputs from their JSON form.

  Entries are numbers, {"dist": "normal", "mean": m, "sd": s},
  {"dist": "uniform", "lower": a, "upper": b} or
  {"empirical": <file>, "column": <name>, "paired": bool}; empirical files are
  read through `load_samples(file, column)`.
  """
  exogenous = {}
  for name, entry in doc.items():
    if name == 'format_version':
      continue
    if not isinstance(entry, dict):
      exogenous[name] = _check_exogenous(name, entry)
    elif entry.get('dist') == 'normal':
      exogenous[name] = stats.norm(entry.get('mean', 0.0), entry['sd'])
    elif entry.get('dist') == 'uniform':
      exogenous[name] = stats.uniform(entry['lower'],
                                      entry['upper'] - entry['lower'])
    elif 'empirical' in entry:
      if load_samples is None:
        raise core.GraphError('Empirical input {} needs a loader.'.format(name))
      values = load_samples(entry['empirical'], entry.get('column', name))
      exogenous[name] = Empirical(values, entry.get('paired', False))
    else:
      raise core.GraphError('Cannot read exogenous input {}: {}.'.format(
          name, entry))
  return exogenous


# Propagation ------------------------------------------------------------------
class PropagationResult(object):
  """Terminal samples (one column per terminal output) and their seed."""

  def __init__(self,
               samples: np.ndarray,
               columns: Sequence[Text],
               seed: int,
               intermediate: Optional[Dict[Text, np.ndarray]] = None):
    self.samples = samples
    self.columns = tuple(columns)
    self.seed = seed
    self.intermediate = intermediate

  @property
  def n_samples(self) -> int:
    return self.samples.shape[0]

  def column(self, key: Text) -> np.ndarray:
    if key in self.columns:
      return self.samples[:, self.columns.index(key)]
    if self.intermediate is not None and key in self.intermediate:
      return self.intermediate[key]
    raise KeyError('No column {} in {}.'.format(key, self.columns))


def _resolve_decisions(graph: ModelGraph, decisions) -> Dict[Text, float]:
  names = graph.decision_names
  if decisions is None:
    decisions = {}
  if not isinstance(decisions, dict):
    values = np.asarray(decisions, np.float64).ravel()
    if values.size != len(names):
      raise core.GraphError(
          'Decision vector has {} entries, the graph has decisions {}.'.format(
              values.size, names))
    decisions = dict(zip(names, values))
  missing = [d for d in names if d not in decisions]
  if missing:
    raise core.GraphError('Unbound decisions {}.'.format(missing),
                          unbound=missing)
  return {d: float(decisions[d]) for d in names}


def _resolve_exogenous(graph: ModelGraph, exogenous, n_samples: int):
  exogenous = dict(exogenous or {})
  missing = [x for x in graph.exogenous_names if x not in exogenous]
  if missing:
    raise core.GraphError('Unbound exogenous inputs {}.'.format(missing),
                          unbound=missing)
  resolved = {}
  for name in graph.exogenous_names:
    spec = _check_exogenous(name, exogenous[name])
    if (isinstance(spec, Empirical) and spec.paired and
        spec.values.size != n_samples):
      raise core.GraphError(
          'Paired input {} has {} samples, propagating {}.'.format(
              name, spec.values.size, n_samples))
    resolved[name] = spec
  return resolved


def _propagate_chunk(graph, exogenous, decisions, seed, chunk, start, n,
                     keep_intermediate):
  values = {
      EXOGENOUS: {
          name: _draw_exogenous(
              spec, n, start,
              core.substream(seed, 'chain', 'exogenous', name, chunk))
          for name, spec in exogenous.items()
      },
      DECISION: decisions,
  }
  for node in graph.order:
    values[node.name] = node.evaluate(
        values, n,
        core.substream(seed, 'chain', 'emulator', node.name, chunk),
        core.substream(seed, 'chain', 'discrepancy', node.name, chunk))
  terminal = np.stack([core.nested_lookup(key, values)
                       for key in graph.terminal_columns], axis=1)
  intermediate = None
  if keep_intermediate:
    intermediate = {'{}/{}'.format(node.name, o): values[node.name][o]
                    for node in graph.order for o in node.output_names}
  return terminal, intermediate


@gin.configurable
def propagate(graph: ModelGraph,
              exogenous: Mapping[Text, Any],
              decisions=None,
              n_samples: int = 10000,
              seed: int = 0,
              keep_intermediate: bool = False,
              chunk_size: int = 8192) -> PropagationResult:
  """Propagate uncertainty through the graph by Monte Carlo.

  Args:
    graph: A valid ModelGraph.
    exogenous: Exogenous name -> number, scipy.stats frozen distribution or
      Empirical samples.
    decisions: Decision name -> value, or a vector in graph.decision_names
      order.
    n_samples: Number of samples.
    seed: Master seed. Samples are split into chunks of chunk_size rows and
      every (purpose, node, chunk) owns a substream, so results do not depend
      on the worker count.
    keep_intermediate: Keep every node output, keyed "node/output".
    chunk_size: Rows per chunk.

  Returns:
    PropagationResult with one column per terminal output.

  Raises:
    GraphError: On unbound exogenous inputs or decisions.
  """
  if n_samples < 1:
    raise ValueError('n_samples must be >= 1, got {}.'.format(n_samples))
  if not graph.order:
    raise core.GraphError('Cannot propagate an empty graph.')
  decisions = _resolve_decisions(graph, decisions)
  exogenous = _resolve_exogenous(graph, exogenous, n_samples)
  for node in graph.order:
    logging.debug('Node (%s) inputs: %s', node.name, dict(node.bindings))

  starts = list(range(0, n_samples, chunk_size))
  n_workers = min(core.num_threads(), len(starts))
  with concurrent.futures.ThreadPoolExecutor(max_workers=n_workers) as pool:
    futures = [
        pool.submit(_propagate_chunk, graph, exogenous, decisions, seed, c,
                    start, min(chunk_size, n_samples - start),
                    keep_intermediate)
        for c, start in enumerate(starts)
    ]
    parts = [f.result() for f in futures]

  samples = np.concatenate([p[0] for p in parts], axis=0)
  intermediate = None
  if keep_intermediate:
    intermediate = {key: np.concatenate([p[1][key] for p in parts])
                    for key in parts[0][1]}
  logging.info('Propagated %d samples through %s.', n_samples,
               ' -> '.join(n.name for n in graph.order))
  return PropagationResult(samples, graph.terminal_columns, seed, intermediate)


# Combined emulation -----------------------------------------------------------
class CombinedEmulator(object):
  """The chained system as one stochastic model of the decisions.

  predict(decision) returns the emulated mean of the terminal output and the
  emulated variance exp(log-variance emulator mean).
  """

  def __init__(self,
               mean_emulator: emulators.Emulator,
               log_variance_emulator: emulators.Emulator,
               output_name: Text):
    self.mean_emulator = mean_emulator
    self.log_variance_emulator = log_variance_emulator
    self.output_name = output_name

  def predict(self, decision) -> emulators.Prediction:
    mean = self.mean_emulator.predict(decision)
    log_variance = self.log_variance_emulator.predict(decision)
    return emulators.Prediction(mean.mean, float(np.exp(log_variance.mean)),
                                mean.extrapolated)

  def to_json(self) -> Dict[Text, Any]:
    return {'format_version': FORMAT_VERSION,
            'type': 'combined_emulator',
            'output_name': self.output_name,
            'mean': self.mean_emulator.to_json(),
            'log_variance': self.log_variance_emulator.to_json()}


@gin.configurable
def emulate_combined(graph: ModelGraph,
                     exogenous: Mapping[Text, Any],
                     decision_grid: designs.DesignSet,
                     n_inner: int = 1000,
                     seed: int = 0,
                     output: Optional[Text] = None,
                     trend_basis: Text = 'linear',
                     variance_floor: float = core.VARIANCE_FLOOR,
                     **fit_kwargs) -> CombinedEmulator:
  """Emulate mean and log-variance of a terminal output over decisions.

  Args:
    graph: The model graph.
    exogenous: Exogenous inputs, as for propagate().
    decision_grid: Decisions, one per row, over the graph's decision names.
    n_inner: Samples per decision, >= 30.
    seed: Master seed; decision i propagates with a seed derived from (seed,
      i).
    output: Terminal column "node/output"; optional with one terminal.
    trend_basis: Trend basis of both emulators.
    variance_floor: Floor on sample variances before taking logs.
    **fit_kwargs: Passed to emulators.fit().

  Returns:
    CombinedEmulator.

  Raises:
    GraphError: If the grid does not span the graph's decisions.
    FitError: If the grid is too small for the trend basis.
  """
  if n_inner < 30:
    raise ValueError('n_inner must be >= 30, got {}.'.format(n_inner))
  if set(decision_grid.space.names) != set(graph.decision_names):
    raise core.GraphError(
        'Decision grid dimensions {} do not match graph decisions {}.'.format(
            decision_grid.space.names, graph.decision_names))
  terminals = graph.terminal_columns
  if output is None:
    if len(terminals) != 1:
      raise ValueError('Graph has terminals {}; name the output.'.format(
          terminals))
    output = terminals[0]

  means = np.zeros(decision_grid.n_runs)
  variances = np.zeros(decision_grid.n_runs)
  for i, point in enumerate(decision_grid.points):
    decisions = dict(zip(decision_grid.space.names, point))
    result = propagate(graph, exogenous, decisions, n_inner,
                       core.derive_seed(seed, 'combined', i))
    column = result.column(output)
    means[i] = np.mean(column)
    variances[i] = np.var(column, ddof=1)

  name = output.replace('/', '.')
  mean_em = emulators.fit(
      decision_grid.without_responses().with_responses(means, [name]),
      trend_basis, **fit_kwargs)
  log_var = np.log(np.maximum(variances, variance_floor))
  log_var_em = emulators.fit(
      decision_grid.without_responses().with_responses(log_var, [name]),
      trend_basis, **fit_kwargs)
  return CombinedEmulator(mean_em, log_var_em, output)
