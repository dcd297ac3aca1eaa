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
"""Tests for emuchain.designs."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest
from absl.testing import parameterized
from emuchain import designs
import numpy as np


class InputSpaceTest(absltest.TestCase):

  def test_decision_and_parameter_dims_partition_names(self):
    space = designs.InputSpace([('d', 0, 1), ('x', -1, 1), ('y', 2, 3)],
                               decision_dims=['d'])
    self.assertEqual(space.decision_dims, ('d',))
    self.assertEqual(space.parameter_dims, ('x', 'y'))

  def test_bounds_must_increase(self):
    with self.assertRaises(ValueError):
      designs.InputSpace([('x', 1.0, 1.0)])

  def test_names_must_be_unique(self):
    with self.assertRaises(ValueError):
      designs.InputSpace([('x', 0, 1), ('x', 0, 2)])

  def test_unknown_decision_dim_raises(self):
    with self.assertRaises(ValueError):
      designs.InputSpace([('x', 0, 1)], decision_dims=['d'])

  def test_json_round_trip(self):
    space = designs.InputSpace([('d', 0, 1), ('x', -1, 1)], ['d'])
    self.assertEqual(designs.InputSpace.from_json(space.to_json()), space)


class DesignSetTest(absltest.TestCase):

  def setUp(self):
    super(DesignSetTest, self).setUp()
    self.space = designs.InputSpace([('x', 0.0, 1.0)])

  def test_points_outside_bounds_raise(self):
    with self.assertRaises(ValueError):
      designs.DesignSet([[1.5]], self.space)

  def test_repeated_points_raise(self):
    with self.assertRaises(ValueError):
      designs.DesignSet([[0.5], [0.5]], self.space)

  def test_response_shape_is_checked(self):
    with self.assertRaises(ValueError):
      designs.DesignSet([[0.1], [0.2]], self.space, [1.0, 2.0, 3.0], ['y'])

  def test_column_lookup(self):
    design = designs.DesignSet([[0.1], [0.2]], self.space,
                               [[1.0, 2.0], [3.0, 4.0]], ['a', 'b'])
    np.testing.assert_array_equal(design.column('b'), [2.0, 4.0])


class LatinHypercubeTest(parameterized.TestCase):

  def test_single_point_lies_in_unit_interval(self):
    space = designs.InputSpace([('x', 0.0, 1.0)])
    design = designs.latin_hypercube(space, 1, seed=3)
    self.assertEqual(design.points.shape, (1, 1))
    self.assertGreaterEqual(design.points[0, 0], 0.0)
    self.assertLess(design.points[0, 0], 1.0)

  def test_one_point_per_unit_stratum(self):
    space = designs.InputSpace([('x', 0.0, 4.0)])
    design = designs.latin_hypercube(space, 4, seed=11)
    cells = np.sort(np.floor(design.points[:, 0]))
    np.testing.assert_array_equal(cells, [0.0, 1.0, 2.0, 3.0])

  @parameterized.named_parameters(
      ('seed_0', 0),
      ('seed_7', 7),
      ('seed_123', 123),
  )
  def test_every_stratum_is_hit_in_every_dimension(self, seed):
    space = designs.InputSpace([('a', -1, 1), ('b', 0, 10), ('c', 5, 6)])
    design = designs.latin_hypercube(space, 50, seed=seed)
    strata = designs.stratum_indices(design)
    for dim in range(space.n_dims):
      np.testing.assert_array_equal(np.sort(strata[:, dim]), np.arange(50))
      counts = np.histogram(design.points[:, dim], bins=50,
                            range=(space.lower[dim], space.upper[dim]))[0]
      np.testing.assert_array_equal(counts, np.ones(50))

  def test_points_respect_bounds(self):
    space = designs.InputSpace([('a', -3, -2), ('b', 100, 1000)])
    design = designs.latin_hypercube(space, 200, seed=5)
    self.assertTrue(np.all(design.points >= space.lower))
    self.assertTrue(np.all(design.points <= space.upper))

  def test_same_seed_gives_identical_design(self):
    space = designs.InputSpace([('a', 0, 1), ('b', 0, 1)])
    first = designs.latin_hypercube(space, 30, seed=9)
    second = designs.latin_hypercube(space, 30, seed=9)
    np.testing.assert_array_equal(first.points, second.points)

  def test_zero_points_raise(self):
    space = designs.InputSpace([('x', 0, 1)])
    with self.assertRaises(ValueError):
      designs.latin_hypercube(space, 0, seed=1)

  def test_default_size_is_ten_per_dimension(self):
    space = designs.InputSpace([('a', 0, 1), ('b', 0, 1), ('c', 0, 1)])
    self.assertEqual(designs.default_design_size(space), 30)


if __name__ == '__main__':
  absltest.main()
