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
"""Tests for emuchain.chain."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os
from unittest import mock

from absl.testing import absltest
from emuchain import chain
from emuchain import core
from emuchain import designs
from emuchain import discrepancy
from emuchain import emulators
import numpy as np
from scipy import stats

N_SAMPLES = 100000


def linear_emulator(dims, coefficients, intercept=0.0, output='y'):
  """Exactly reproduced linear emulator; dims are (name, lower, upper)."""
  space = designs.InputSpace(dims)
  design = designs.latin_hypercube(space, 4 * len(dims) + 2, seed=0)
  responses = intercept + design.points @ np.asarray(coefficients, np.float64)
  return emulators.fit(design.with_responses(responses, [output]), 'linear')


def unit_noise(output='y'):
  return discrepancy.external_only([output], 'absolute', 1.0)


def linear_gaussian_graph(first_disc=None, second_disc=None):
  """node1: y = 2 x + delta_1, node2: y = node1 + 3 + delta_2."""
  first = chain.ModelNode(
      'node1', {'y': linear_emulator([('u', -8.0, 8.0)], [2.0])},
      {'u': 'x/x'}, first_disc)
  second = chain.ModelNode(
      'node2', {'y': linear_emulator([('v', -30.0, 30.0)], [1.0], 3.0)},
      {'v': 'node1/y'}, second_disc)
  return chain.ModelGraph([first, second])


class ModelNodeTest(absltest.TestCase):

  def setUp(self):
    super(ModelNodeTest, self).setUp()
    self.em = linear_emulator([('u', 0.0, 1.0)], [1.0])

  def test_unbound_input_raises(self):
    with self.assertRaises(core.GraphError):
      chain.ModelNode('a', {'y': self.em}, {})

  def test_unknown_input_raises(self):
    with self.assertRaises(core.GraphError):
      chain.ModelNode('a', {'y': self.em}, {'u': 1.0, 'w': 'x/w'})

  def test_reserved_name_raises(self):
    with self.assertRaises(core.GraphError):
      chain.ModelNode('x', {'y': self.em}, {'u': 0.5})

  def test_malformed_binding_raises(self):
    with self.assertRaises(core.GraphError):
      chain.ModelNode('a', {'y': self.em}, {'u': 'rainfall'})

  def test_discrepancy_outputs_must_exist(self):
    with self.assertRaises(core.GraphError):
      chain.ModelNode('a', {'y': self.em}, {'u': 0.5}, unit_noise('z'))


class ModelGraphTest(absltest.TestCase):

  def setUp(self):
    super(ModelGraphTest, self).setUp()
    self.em = linear_emulator([('u', 0.0, 1.0)], [1.0])

  def node(self, name, binding):
    return chain.ModelNode(name, {'y': self.em}, {'u': binding})

  def test_topological_order(self):
    graph = chain.ModelGraph([self.node('b', 'a/y'), self.node('a', 'x/x')])
    self.assertEqual([n.name for n in graph.order], ['a', 'b'])
    self.assertEqual(graph.terminal_columns, ['b/y'])
    self.assertEqual(graph.exogenous_names, ['x'])

  def test_independent_nodes_keep_insertion_order(self):
    graph = chain.ModelGraph([self.node('c', 'b/y'), self.node('z', 'x/x'),
                              self.node('b', 'x/x'), self.node('a', 'z/y')])
    self.assertEqual([n.name for n in graph.order], ['z', 'b', 'c', 'a'])
    self.assertTrue(graph.dag.has_edge('z', 'a'))
    self.assertEqual(graph.dag.number_of_edges(), 2)

  def test_cycle_raises(self):
    with self.assertRaises(core.GraphError) as cm:
      chain.ModelGraph([self.node('a', 'b/y'), self.node('b', 'a/y'),
                        self.node('c', 'a/y')])
    self.assertEqual(cm.exception.details['nodes'], ['a', 'b'])

  def test_unknown_upstream_raises(self):
    with self.assertRaises(core.GraphError):
      chain.ModelGraph([self.node('a', 'ghost/y')])

  def test_unknown_upstream_output_raises(self):
    with self.assertRaises(core.GraphError):
      chain.ModelGraph([self.node('a', 'x/x'), self.node('b', 'a/z')])

  def test_add_node_recomputes_order(self):
    graph = chain.ModelGraph([self.node('a', 'd/dose')])
    graph.add_node(self.node('b', 'a/y'))
    self.assertEqual(graph.terminal_columns, ['b/y'])
    self.assertEqual(graph.decision_names, ['dose'])

  def test_rejected_node_leaves_graph_unchanged(self):
    graph = chain.ModelGraph([self.node('a', 'x/x')])
    with self.assertRaises(core.GraphError):
      graph.add_node(self.node('a', 'x/x'))
    self.assertEqual([n.name for n in graph.order], ['a'])

  def test_subgraph_rebinds_outside_outputs(self):
    graph = chain.ModelGraph([self.node('a', 'x/x'), self.node('b', 'a/y')])
    sub = graph.subgraph(['b'])
    self.assertEqual(sub.exogenous_names, ['a.y'])

  def test_json_round_trip(self):
    graph = linear_gaussian_graph(unit_noise(), unit_noise())
    restored = chain.ModelGraph.from_json(graph.to_json())
    exogenous = {'x': stats.norm(0.0, 1.0)}
    np.testing.assert_array_equal(
        chain.propagate(restored, exogenous, n_samples=100, seed=1).samples,
        chain.propagate(graph, exogenous, n_samples=100, seed=1).samples)


class PropagateTest(absltest.TestCase):

  def test_identity_chain(self):
    identity = linear_emulator([('u', 0.0, 10.0)], [1.0])
    graph = chain.ModelGraph([
        chain.ModelNode('a', {'y': identity}, {'u': 'x/x'}),
        chain.ModelNode('b', {'y': identity}, {'u': 'a/y'}),
    ])
    result = chain.propagate(graph, {'x': 4.0}, n_samples=50, seed=0)
    self.assertEqual(result.samples.shape, (50, 1))
    np.testing.assert_allclose(result.samples, 4.0, atol=1e-10)

  def test_linear_gaussian_moments(self):
    graph = linear_gaussian_graph(unit_noise(), unit_noise())
    result = chain.propagate(graph, {'x': stats.norm(0.0, 1.0)},
                             n_samples=N_SAMPLES, seed=7)
    terminal = result.column('node2/y')
    self.assertLess(abs(np.mean(terminal) - 3.0),
                    4.0 * np.sqrt(6.0 / N_SAMPLES))
    self.assertLess(abs(np.var(terminal) - 6.0),
                    4.0 * 6.0 * np.sqrt(2.0 / N_SAMPLES))

  def test_same_seed_same_samples(self):
    graph = linear_gaussian_graph(unit_noise(), unit_noise())
    exogenous = {'x': stats.norm(0.0, 1.0)}
    first = chain.propagate(graph, exogenous, n_samples=1000, seed=3)
    second = chain.propagate(graph, exogenous, n_samples=1000, seed=3)
    np.testing.assert_array_equal(first.samples, second.samples)

  def test_worker_count_does_not_change_samples(self):
    graph = linear_gaussian_graph(unit_noise(), unit_noise())
    exogenous = {'x': stats.uniform(-1.0, 2.0)}
    results = []
    for threads in ['1', '4']:
      with mock.patch.dict(os.environ, {'EMUCHAIN_THREADS': threads}):
        results.append(chain.propagate(graph, exogenous, n_samples=1000,
                                       seed=5, chunk_size=128).samples)
    np.testing.assert_array_equal(results[0], results[1])

  def test_composition_of_exact_emulators(self):
    first = linear_emulator([('u', -1.0, 1.0)], [2.0], 1.0)
    second = linear_emulator([('v', -5.0, 5.0)], [-0.5], 3.0)
    graph = chain.ModelGraph([
        chain.ModelNode('f', {'y': first}, {'u': 'x/x'}),
        chain.ModelNode('g', {'y': second}, {'v': 'f/y'}),
    ])
    result = chain.propagate(graph, {'x': stats.uniform(-1.0, 2.0)},
                             n_samples=1000, seed=11, keep_intermediate=True)
    x = (result.column('f/y') - 1.0) / 2.0
    self.assertTrue(np.all(np.abs(x) <= 1.0 + 1e-12))
    np.testing.assert_allclose(result.column('g/y'),
                               -0.5 * (2.0 * x + 1.0) + 3.0, atol=1e-8)

  def test_zero_discrepancy_is_bitwise_no_discrepancy(self):
    exogenous = {'x': stats.norm(0.0, 1.0)}
    plain = chain.propagate(linear_gaussian_graph(), exogenous,
                            n_samples=500, seed=2)
    zeroed = chain.propagate(
        linear_gaussian_graph(discrepancy.zero(['y']), discrepancy.zero(['y'])),
        exogenous, n_samples=500, seed=2)
    np.testing.assert_array_equal(plain.samples, zeroed.samples)

  def test_modular_composition_reproduces_full_graph(self):
    graph = linear_gaussian_graph(unit_noise(), unit_noise())
    exogenous = {'x': stats.norm(0.0, 1.0)}
    full = chain.propagate(graph, exogenous, n_samples=N_SAMPLES, seed=9)
    upstream = chain.propagate(graph.subgraph(['node1']), exogenous,
                               n_samples=N_SAMPLES, seed=9)
    frozen = chain.Empirical(upstream.column('node1/y'), paired=True)
    downstream = chain.propagate(graph.subgraph(['node2']),
                                 {'node1.y': frozen},
                                 n_samples=N_SAMPLES, seed=9)
    statistic = stats.ks_2samp(full.column('node2/y'),
                               downstream.column('node2/y')).statistic
    self.assertLess(statistic, 1.36 * np.sqrt(2.0 / N_SAMPLES))

  def test_cross_node_discrepancy_is_independent(self):
    constant = linear_emulator([('u', 0.0, 1.0)], [0.0], 1.0)
    graph = chain.ModelGraph([
        chain.ModelNode('a', {'y': constant}, {'u': 0.5}, unit_noise()),
        chain.ModelNode('b', {'y': constant}, {'u': 0.5}, unit_noise()),
    ])
    result = chain.propagate(graph, {}, n_samples=N_SAMPLES, seed=4)
    correlation = np.corrcoef(result.column('a/y'), result.column('b/y'))[0, 1]
    self.assertLess(abs(correlation), 4.0 / np.sqrt(N_SAMPLES))

  def test_removing_discrepancy_never_increases_variance(self):
    exogenous = {'x': stats.norm(0.0, 1.0)}
    with_disc = linear_gaussian_graph(unit_noise(), unit_noise())
    without = linear_gaussian_graph(None, unit_noise())
    variances = np.array([
        [np.var(chain.propagate(g, exogenous, n_samples=2000, seed=s).samples)
         for g in (with_disc, without)]
        for s in range(20)
    ])
    self.assertGreaterEqual(np.mean(variances[:, 0]), np.mean(variances[:, 1]))

  def test_missing_exogenous_raises(self):
    with self.assertRaises(core.GraphError):
      chain.propagate(linear_gaussian_graph(), {}, n_samples=10)

  def test_wrong_decision_vector_raises(self):
    em = linear_emulator([('u', 0.0, 1.0)], [1.0])
    graph = chain.ModelGraph([chain.ModelNode('a', {'y': em}, {'u': 'd/u'})])
    with self.assertRaises(core.GraphError):
      chain.propagate(graph, {}, [0.1, 0.2], n_samples=10)

  def test_paired_samples_must_match_count(self):
    graph = linear_gaussian_graph().subgraph(['node2'])
    with self.assertRaises(core.GraphError):
      chain.propagate(graph, {'node1.y': chain.Empirical([1.0, 2.0], True)},
                      n_samples=10)

  def test_exogenous_from_json(self):
    exogenous = chain.exogenous_from_json({
        'format_version': 1,
        'a': 2.5,
        'b': {'dist': 'normal', 'mean': 1.0, 'sd': 2.0},
        'c': {'dist': 'uniform', 'lower': -1.0, 'upper': 3.0},
    })
    self.assertEqual(exogenous['a'], 2.5)
    self.assertEqual(exogenous['b'].std(), 2.0)
    self.assertEqual(exogenous['c'].support(), (-1.0, 3.0))


class EmulateCombinedTest(absltest.TestCase):

  def setUp(self):
    super(EmulateCombinedTest, self).setUp()
    self.decisions = designs.InputSpace([('dose', 0.0, 1.0)], ['dose'])
    self.grid = designs.DesignSet(np.linspace(0.0, 1.0, 6)[:, np.newaxis],
                                  self.decisions)

  def test_deterministic_graph(self):
    em = linear_emulator([('u', 0.0, 1.0)], [2.0], 1.0)
    graph = chain.ModelGraph([chain.ModelNode('a', {'y': em}, {'u': 'd/dose'})])
    combined = chain.emulate_combined(graph, {}, self.grid, n_inner=30, seed=0)
    for dose in self.grid.points[:, 0]:
      mean, variance = combined.predict([dose])
      self.assertAlmostEqual(mean, 2.0 * dose + 1.0, places=8)
      self.assertAlmostEqual(variance, core.VARIANCE_FLOOR, places=15)

  def test_decision_shifting_the_input_mean(self):
    first = linear_emulator([('u', -8.0, 8.0), ('dose', 0.0, 1.0)], [2.0, 2.0])
    second = linear_emulator([('v', -30.0, 30.0)], [1.0], 3.0)
    graph = chain.ModelGraph([
        chain.ModelNode('node1', {'y': first}, {'u': 'x/x', 'dose': 'd/dose'},
                        unit_noise()),
        chain.ModelNode('node2', {'y': second}, {'v': 'node1/y'}, unit_noise()),
    ])
    combined = chain.emulate_combined(graph, {'x': stats.norm(0.0, 1.0)},
                                      self.grid, n_inner=2000, seed=1)
    mean, variance = combined.predict([0.35])
    self.assertLess(abs(mean - (2.0 * 0.35 + 3.0)), 0.25)
    self.assertLess(abs(variance - 6.0), 1.5)

  def test_single_decision_grid_raises(self):
    em = linear_emulator([('u', 0.0, 1.0)], [2.0], 1.0)
    graph = chain.ModelGraph([chain.ModelNode('a', {'y': em}, {'u': 'd/dose'})])
    grid = designs.DesignSet([[0.5]], self.decisions)
    with self.assertRaises(core.FitError):
      chain.emulate_combined(graph, {}, grid, n_inner=30)

  def test_too_few_inner_samples_raise(self):
    em = linear_emulator([('u', 0.0, 1.0)], [2.0], 1.0)
    graph = chain.ModelGraph([chain.ModelNode('a', {'y': em}, {'u': 'd/dose'})])
    with self.assertRaises(ValueError):
      chain.emulate_combined(graph, {}, self.grid, n_inner=10)


if __name__ == '__main__':
  absltest.main()
