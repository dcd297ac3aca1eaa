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
"""Sequential decisions as finite decision trees, solved backwards.

A tree mixes decision nodes (choose one option), chance nodes (branches with
probabilities) and leaves (reward vectors). solve_tree() works from the leaves
to the root: a leaf is worth its utility, a chance node the probability
weighted sum of its branches and a decision node the best of its options.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import itertools
from typing import Any, Dict, Iterator, Optional, Sequence, Text, Tuple

from absl import logging
from emuchain import core
from emuchain import utilities
import numpy as np

FORMAT_VERSION = 1
PROBABILITY_TOLERANCE = 1e-12

# Define Types.
Policy = Dict[Text, int]


# ---------------------- Nodes -------------------------------------------------
class Leaf(object):
  """Terminal reward vector."""

  def __init__(self, reward):
    self.reward = core.frozen_array(np.atleast_1d(reward), ndim=1)

  def to_json(self) -> Dict[Text, Any]:
    return {'type': 'leaf', 'reward': self.reward.tolist()}


class ChanceNode(object):
  """Branches [(probability, node)] with probabilities summing to one."""

  def __init__(self, branches: Sequence[Tuple[float, Any]]):
    self.branches = [(float(p), node) for p, node in branches]
    if not self.branches:
      raise core.DecisionError('A chance node needs at least one branch.')
    probabilities = np.array([p for p, _ in self.branches])
    if np.any(probabilities < 0.0):
      raise core.DecisionError('Negative branch probability.',
                               probabilities=probabilities)
    if abs(np.sum(probabilities) - 1.0) > PROBABILITY_TOLERANCE:
      raise core.DecisionError(
          'Chance node probabilities sum to {!r}, not 1.'.format(
              float(np.sum(probabilities))), probabilities=probabilities)

  @property
  def children(self):
    return [node for _, node in self.branches]

  def to_json(self) -> Dict[Text, Any]:
    return {'type': 'chance',
            'branches': [{'probability': p, 'node': node.to_json()}
                         for p, node in self.branches]}


class DecisionNode(object):
  """Options [(label, node)]; the name keys the node in a policy."""

  def __init__(self,
               options: Sequence[Tuple[Text, Any]],
               name: Optional[Text] = None):
    self.options = [(str(label), node) for label, node in options]
    self.name = name
    if not self.options:
      raise core.DecisionError('A decision node needs at least one option.')

  @property
  def children(self):
    return [node for _, node in self.options]

  @property
  def labels(self):
    return [label for label, _ in self.options]

  def to_json(self) -> Dict[Text, Any]:
    return {'type': 'decision', 'name': self.name,
            'options': [{'label': label, 'node': node.to_json()}
                        for label, node in self.options]}


def _children(node):
  return [] if isinstance(node, Leaf) else node.children


# ---------------------- Trees -------------------------------------------------
class DecisionTree(object):
  """A validated tree with uniquely named decision nodes.

  Unnamed decision nodes are named D0, D1, ... in depth-first order. Every
  node object may appear only once, which rules out cycles and shared
  subtrees.
  """

  def __init__(self, root):
    self.root = root
    self.decision_nodes = []
    seen = set()
    stack = [root]
    n_attributes = set()
    while stack:
      node = stack.pop()
      if not isinstance(node, (Leaf, ChanceNode, DecisionNode)):
        raise core.DecisionError('Unknown tree node {!r}.'.format(node))
      if id(node) in seen:
        raise core.DecisionError('A node appears twice in the tree.')
      seen.add(id(node))
      if isinstance(node, Leaf):
        n_attributes.add(node.reward.size)
      if isinstance(node, DecisionNode):
        self.decision_nodes.append(node)
      stack.extend(reversed(_children(node)))

    if len(n_attributes) != 1:
      raise core.DecisionError(
          'Leaves disagree on the reward length: {}.'.format(
              sorted(n_attributes)))
    self.n_attributes = n_attributes.pop()

    taken = {node.name for node in self.decision_nodes if node.name}
    counter = itertools.count()
    for node in self.decision_nodes:
      while not node.name:
        candidate = 'D{}'.format(next(counter))
        if candidate not in taken:
          node.name = candidate
          taken.add(candidate)
    names = [node.name for node in self.decision_nodes]
    if len(set(names)) != len(names):
      raise core.DecisionError('Duplicate decision node names in {}.'.format(
          names))

  @property
  def decision_names(self) -> Tuple[Text, ...]:
    return tuple(node.name for node in self.decision_nodes)

  def node(self, name: Text) -> DecisionNode:
    for node in self.decision_nodes:
      if node.name == name:
        return node
    raise KeyError('No decision node named {}.'.format(name))

  def policy_labels(self, policy: Policy) -> Dict[Text, Text]:
    return {name: self.node(name).labels[index]
            for name, index in policy.items()}

  def to_json(self) -> Dict[Text, Any]:
    return {'format_version': FORMAT_VERSION, 'root': self.root.to_json()}

  @classmethod
  def from_json(cls, doc: Dict[Text, Any]) -> 'DecisionTree':
    return cls(_node_from_json(doc['root'] if 'root' in doc else doc))


def _node_from_json(doc: Dict[Text, Any]):
  kind = doc.get('type')
  if kind == 'leaf':
    return Leaf(doc['reward'])
  if kind == 'chance':
    return ChanceNode([(b['probability'], _node_from_json(b['node']))
                       for b in doc['branches']])
  if kind == 'decision':
    return DecisionNode([(o['label'], _node_from_json(o['node']))
                         for o in doc['options']], doc.get('name'))
  raise core.DecisionError('Unknown tree node type {!r}.'.format(kind))


# ---------------------- Solving -----------------------------------------------
def _utility(u: utilities.UtilitySpec, leaf: Leaf) -> float:
  return float(u(leaf.reward))


def _solve(node, u, policy: Policy) -> float:
  if isinstance(node, Leaf):
    return _utility(u, node)
  if isinstance(node, ChanceNode):
    return sum(p * _solve(child, u, policy) for p, child in node.branches)
  values = [_solve(child, u, policy) for child in node.children]
  # First maximum wins ties.
  best = int(np.argmax(values))
  policy[node.name] = best
  return values[best]


def solve_tree(tree: DecisionTree,
               u: utilities.UtilitySpec) -> Tuple[Policy, float]:
  """Backward induction.

  Args:
    tree: The decision tree.
    u: Utility over the leaf reward vectors.

  Returns:
    (policy, value): the best option index for every decision node (also
    those off the optimal path) and the expected utility at the root.
  """
  if u.n_attributes != tree.n_attributes:
    raise core.DecisionError(
        'Utility has {} attributes but the leaves have {}.'.format(
            u.n_attributes, tree.n_attributes))
  policy = {}
  value = _solve(tree.root, u, policy)
  logging.info('Tree solved: root value %.6g, policy %s.', value,
               tree.policy_labels(policy))
  return policy, value


def policy_value(tree: DecisionTree,
                 u: utilities.UtilitySpec,
                 policy: Policy) -> float:
  """Expected utility of following a fixed policy from the root."""

  def value(node):
    if isinstance(node, Leaf):
      return _utility(u, node)
    if isinstance(node, ChanceNode):
      return sum(p * value(child) for p, child in node.branches)
    return value(node.children[policy[node.name]])

  return value(tree.root)


def enumerate_policies(tree: DecisionTree) -> Iterator[Policy]:
  """Every combination of one option per decision node."""
  names = tree.decision_names
  ranges = [range(len(node.options)) for node in tree.decision_nodes]
  for choice in itertools.product(*ranges):
    yield dict(zip(names, choice))


def value_of_information(prior_tree: DecisionTree,
                         informed_tree: DecisionTree,
                         u: utilities.UtilitySpec) -> float:
  """Expected-utility gain from deciding after an observation.

  `informed_tree` is the same problem with a chance node for the observation
  placed ahead of the decisions it informs. The gain is in utility units and
  is never negative when both trees describe the same problem.
  """
  _, prior = solve_tree(prior_tree, u)
  _, informed = solve_tree(informed_tree, u)
  logging.info('Value of information: %.6g (prior %.6g, informed %.6g).',
               informed - prior, prior, informed)
  return informed - prior
