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
"""Tests for emuchain.trees."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import json
import os

from absl.testing import absltest
from absl.testing import parameterized
from emuchain import core
from emuchain import trees
from emuchain import utilities
import numpy as np

LINEAR = utilities.UtilitySpec(utilities.Linear())
LOG = utilities.UtilitySpec(utilities.LogShifted(2.0))
CORPUS = os.path.join(os.path.dirname(__file__), 'testdata',
                      'tree_corpus.json')


def two_stage_tree():
  """Safe payoff 1, or a long shot whose loss can be partly mitigated."""
  mitigation = trees.DecisionNode(
      [('accept', trees.Leaf(-1.0)),
       ('mitigate', trees.ChanceNode([(0.5, trees.Leaf(0.0)),
                                      (0.5, trees.Leaf(-1.2))]))],
      name='stage2')
  risky = trees.ChanceNode([(0.1, trees.Leaf(20.0)), (0.9, mitigation)])
  return trees.DecisionTree(
      trees.DecisionNode([('safe', trees.Leaf(1.0)), ('risky', risky)],
                         name='stage1'))


def random_tree(rng, max_decisions=6):
  count = [0]

  def build(depth):
    if depth == 0 or rng.uniform() < 0.2:
      return trees.Leaf(rng.uniform(-10.0, 10.0))
    if count[0] < max_decisions and rng.uniform() < 0.5:
      count[0] += 1
      n = rng.integers(2, 4)
      return trees.DecisionNode([('o{}'.format(i), build(depth - 1))
                                 for i in range(n)])
    probabilities = rng.dirichlet(np.ones(2))
    probabilities[-1] = 1.0 - probabilities[0]
    return trees.ChanceNode([(p, build(depth - 1)) for p in probabilities])

  return trees.DecisionTree(build(4))


def load_corpus():
  with open(CORPUS) as f:
    return json.load(f)['trees']


def taken_decisions(tree, policy):
  """The part of a policy at decision nodes the policy actually reaches."""
  taken = {}
  stack = [tree.root]
  while stack:
    node = stack.pop()
    if isinstance(node, trees.DecisionNode):
      taken[node.name] = policy[node.name]
      stack.append(node.children[policy[node.name]])
    elif isinstance(node, trees.ChanceNode):
      stack.extend(child for p, child in node.branches if p > 0.0)
  return taken


class DecisionTreeTest(absltest.TestCase):

  def test_decision_nodes_are_named_depth_first(self):
    tree = trees.DecisionTree(trees.DecisionNode([
        ('a', trees.DecisionNode([('x', trees.Leaf(1.0))])),
        ('b', trees.DecisionNode([('y', trees.Leaf(2.0))])),
    ]))
    self.assertEqual(tree.decision_names, ('D0', 'D1', 'D2'))
    self.assertEqual(tree.node('D2').labels, ['y'])

  def test_probabilities_must_sum_to_one(self):
    with self.assertRaises(core.DecisionError):
      trees.ChanceNode([(0.5, trees.Leaf(1.0)), (0.4, trees.Leaf(0.0))])

  def test_shared_node_raises(self):
    leaf = trees.Leaf(1.0)
    with self.assertRaises(core.DecisionError):
      trees.DecisionTree(trees.DecisionNode([('a', leaf), ('b', leaf)]))

  def test_reward_lengths_must_agree(self):
    with self.assertRaises(core.DecisionError):
      trees.DecisionTree(trees.DecisionNode([('a', trees.Leaf(1.0)),
                                             ('b', trees.Leaf([1.0, 2.0]))]))

  def test_duplicate_names_raise(self):
    inner = trees.DecisionNode([('x', trees.Leaf(1.0))], name='same')
    with self.assertRaises(core.DecisionError):
      trees.DecisionTree(trees.DecisionNode([('a', inner)], name='same'))

  def test_unknown_json_type_raises(self):
    with self.assertRaises(core.DecisionError):
      trees.DecisionTree.from_json({'root': {'type': 'oracle'}})

  def test_json_round_trip(self):
    tree = two_stage_tree()
    restored = trees.DecisionTree.from_json(tree.to_json())
    self.assertEqual(restored.to_json(), tree.to_json())
    self.assertEqual(trees.solve_tree(restored, LINEAR),
                     trees.solve_tree(tree, LINEAR))


class SolveTreeTest(absltest.TestCase):

  def test_single_decision(self):
    tree = trees.DecisionTree(trees.DecisionNode(
        [('a', trees.Leaf(2.0)), ('b', trees.Leaf(5.0)),
         ('c', trees.Leaf(3.0))]))
    policy, value = trees.solve_tree(tree, LINEAR)
    self.assertEqual(value, 5.0)
    self.assertEqual(policy, {'D0': 1})

  def test_ties_pick_the_lowest_index(self):
    tree = trees.DecisionTree(trees.DecisionNode(
        [('a', trees.Leaf(1.0)), ('b', trees.Leaf(4.0)),
         ('c', trees.Leaf(4.0))]))
    self.assertEqual(trees.solve_tree(tree, LINEAR)[0], {'D0': 1})

  def test_chance_node(self):
    tree = trees.DecisionTree(trees.ChanceNode([(0.5, trees.Leaf(4.0)),
                                                (0.5, trees.Leaf(0.0))]))
    self.assertEqual(trees.solve_tree(tree, LINEAR), ({}, 2.0))

  def test_two_stage_risk_neutral(self):
    tree = two_stage_tree()
    policy, value = trees.solve_tree(tree, LINEAR)
    self.assertEqual(tree.policy_labels(policy),
                     {'stage1': 'risky', 'stage2': 'mitigate'})
    self.assertAlmostEqual(value, 0.1 * 20.0 + 0.9 * -0.6)

  def test_two_stage_risk_averse(self):
    tree = two_stage_tree()
    policy, value = trees.solve_tree(tree, LOG)
    self.assertEqual(tree.policy_labels(policy),
                     {'stage1': 'safe', 'stage2': 'mitigate'})
    self.assertAlmostEqual(value, np.log(3.0))

  def test_matches_policy_enumeration(self):
    for seed in range(20):
      tree = random_tree(np.random.default_rng(seed))
      policy, value = trees.solve_tree(tree, LINEAR)
      policies = list(trees.enumerate_policies(tree))
      values = [trees.policy_value(tree, LINEAR, p) for p in policies]
      self.assertAlmostEqual(value, max(values), places=12)
      self.assertEqual(taken_decisions(tree, policy),
                       taken_decisions(tree, policies[int(np.argmax(values))]))
      self.assertAlmostEqual(trees.policy_value(tree, LINEAR, policy), value,
                             places=12)

  def test_affine_utility_keeps_the_policy(self):
    for seed in range(10):
      tree = random_tree(np.random.default_rng(seed))
      policy, value = trees.solve_tree(tree, LINEAR)
      shifted_policy, shifted_value = trees.solve_tree(
          tree, LINEAR.affine(3.0, 1.0))
      self.assertEqual(shifted_policy, policy)
      self.assertAlmostEqual(shifted_value, 3.0 * value + 1.0, places=9)

  def test_attribute_count_mismatch_raises(self):
    u = utilities.UtilitySpec([utilities.Linear(), utilities.Linear()])
    with self.assertRaises(core.DecisionError):
      trees.solve_tree(two_stage_tree(), u)

  def test_value_of_information(self):
    prior = trees.DecisionTree(trees.DecisionNode([
        ('act', trees.ChanceNode([(0.4, trees.Leaf(10.0)),
                                  (0.6, trees.Leaf(-5.0))])),
        ('wait', trees.Leaf(0.0)),
    ]))
    informed = trees.DecisionTree(trees.ChanceNode([
        (0.4, trees.DecisionNode([('act', trees.Leaf(10.0)),
                                  ('wait', trees.Leaf(0.0))])),
        (0.6, trees.DecisionNode([('act', trees.Leaf(-5.0)),
                                  ('wait', trees.Leaf(0.0))])),
    ]))
    self.assertAlmostEqual(
        trees.value_of_information(prior, informed, LINEAR), 3.0)


class CorpusTest(parameterized.TestCase):

  @parameterized.named_parameters(*[(entry['name'], entry)
                                    for entry in load_corpus()])
  def test_matches_first_optimal_enumerated_policy(self, entry):
    tree = trees.DecisionTree.from_json(entry)
    self.assertLessEqual(len(tree.decision_nodes), 6)
    u = utilities.UtilitySpec(utilities.utility_from_json(entry['utility']))
    policy, value = trees.solve_tree(tree, u)

    enumerated = [(trees.policy_value(tree, u, p), p)
                  for p in trees.enumerate_policies(tree)]
    best = max(v for v, _ in enumerated)
    first = next(p for v, p in enumerated if v >= best - 1e-12)
    self.assertAlmostEqual(value, best, places=12)
    self.assertEqual(taken_decisions(tree, policy),
                     taken_decisions(tree, first))
    if 'expected_value' in entry:
      self.assertAlmostEqual(value, entry['expected_value'], places=12)
      self.assertEqual(policy, entry['expected_policy'])


if __name__ == '__main__':
  absltest.main()
