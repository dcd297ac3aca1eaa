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
"""Tests for emuchain.core."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os
from unittest import mock

from absl.testing import absltest
from absl.testing import parameterized
from emuchain import core
import numpy as np


class UtilitiesTest(parameterized.TestCase):

  def test_nested_lookup(self):
    nested = {'node': {'output': 3.0}, 'x': {'price': 1.0}}
    self.assertEqual(core.nested_lookup('node/output', nested), 3.0)
    self.assertEqual(core.nested_lookup('x/price', nested), 1.0)

  def test_nested_lookup_missing_key_raises(self):
    with self.assertRaises(KeyError):
      core.nested_lookup('node/missing', {'node': {}})

  @parameterized.named_parameters(
      ('third', 1.0 / 3.0),
      ('tiny', 5e-324),
      ('large', 1.7976931348623157e308),
      ('negative', -2.5),
  )
  def test_decimal_format_round_trips(self, value):
    self.assertEqual(core.parse_decimal(core.format_decimal(value)), value)

  def test_non_numeric_token_raises(self):
    with self.assertRaises(ValueError):
      core.parse_decimal('abc')

  def test_standardize_maps_bounds_to_unit_interval(self):
    lower, upper = np.array([0.0, -2.0]), np.array([4.0, 2.0])
    z = core.standardize(np.array([[0.0, -2.0], [4.0, 2.0], [2.0, 0.0]]),
                         lower, upper)
    np.testing.assert_allclose(z, [[-1, -1], [1, 1], [0, 0]])
    np.testing.assert_allclose(core.unstandardize(z, lower, upper),
                               [[0.0, -2.0], [4.0, 2.0], [2.0, 0.0]])

  def test_errors_are_value_errors_with_details(self):
    error = core.FitError('bad', condition_number=np.float64(1e20))
    self.assertIsInstance(error, ValueError)
    self.assertEqual(error.details, {'condition_number': 1e20})


class StreamTest(absltest.TestCase):

  def test_same_keys_give_same_stream(self):
    a = core.substream(7, 'chain', 'emulator', 3).standard_normal(5)
    b = core.substream(7, 'chain', 'emulator', 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)

  def test_different_keys_give_different_streams(self):
    a = core.substream(7, 'chain', 'emulator', 3).standard_normal(5)
    b = core.substream(7, 'chain', 'emulator', 4).standard_normal(5)
    c = core.substream(8, 'chain', 'emulator', 3).standard_normal(5)
    self.assertFalse(np.array_equal(a, b))
    self.assertFalse(np.array_equal(a, c))

  def test_negative_seed_raises(self):
    with self.assertRaises(ValueError):
      core.substream(-1)

  def test_derive_seed_is_deterministic(self):
    self.assertEqual(core.derive_seed(1, 'decide', 4),
                     core.derive_seed(1, 'decide', 4))


class ThreadsTest(absltest.TestCase):

  def test_environment_caps_threads(self):
    with mock.patch.dict(os.environ, {'EMUCHAIN_THREADS': '3'}):
      self.assertEqual(core.num_threads(), 3)

  def test_at_least_one_thread(self):
    with mock.patch.dict(os.environ, {'EMUCHAIN_THREADS': '0'}):
      self.assertEqual(core.num_threads(), 1)

  def test_bad_value_raises(self):
    with mock.patch.dict(os.environ, {'EMUCHAIN_THREADS': 'many'}):
      with self.assertRaises(ValueError):
        core.num_threads()


if __name__ == '__main__':
  absltest.main()
