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
"""Tests for emuchain.utilities."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

from absl.testing import absltest
from absl.testing import parameterized
from emuchain import core
from emuchain import utilities
import numpy as np

GAMBLE_A = utilities.Gamble([(0.0, 1.0)])
GAMBLE_B = utilities.Gamble([(20.0, 0.1), (-1.0, 0.9)])


class UtilityFormTest(parameterized.TestCase):

  def test_log_shifted_outside_domain_raises(self):
    with self.assertRaises(core.UtilityDomainError) as cm:
      utilities.LogShifted(2.0)([1.0, -3.0])
    self.assertEqual(cm.exception.details['reward'], -3.0)

  def test_negative_exponential_is_concave_and_increasing(self):
    u = utilities.NegativeExponential(0.5)
    values = u(np.linspace(-5.0, 5.0, 11))
    self.assertTrue(np.all(np.diff(values) > 0.0))
    self.assertTrue(np.all(np.diff(values, 2) < 0.0))

  def test_tabulated_interpolates_and_rejects_outside(self):
    u = utilities.Tabulated([0.0, 10.0, 20.0], [0.0, 8.0, 10.0])
    self.assertAlmostEqual(float(u(5.0)), 4.0)
    self.assertTrue(u.concave)
    with self.assertRaises(core.UtilityDomainError):
      u(25.0)

  @parameterized.named_parameters(
      ('linear', {'type': 'linear'}),
      ('log_shifted', {'type': 'log_shifted', 'c': 2.0}),
      ('negative_exponential', {'type': 'negative_exponential',
                                'risk_coefficient': 0.3}),
      ('tabulated', {'type': 'tabulated', 'rewards': [0.0, 1.0],
                     'utilities': [0.0, 2.0]}),
  )
  def test_json_form(self, doc):
    self.assertEqual(utilities.utility_from_json(doc).to_json(), doc)


class UtilitySpecTest(absltest.TestCase):

  def test_weights_must_have_a_positive_entry(self):
    with self.assertRaises(ValueError):
      utilities.UtilitySpec([utilities.Linear()], [0.0])

  def test_negative_weight_raises(self):
    with self.assertRaises(ValueError):
      utilities.UtilitySpec([utilities.Linear(), utilities.Linear()],
                            [1.0, -1.0])

  def test_decreasing_table_fails_monotonicity(self):
    with self.assertRaises(ValueError):
      utilities.UtilitySpec(utilities.Tabulated([0.0, 1.0], [1.0, 0.0]))

  def test_additive_weights(self):
    u = utilities.UtilitySpec([utilities.Linear(), utilities.LogShifted(1.0)],
                              [2.0, 3.0], ['money', 'health'])
    self.assertAlmostEqual(float(u([1.5, 0.0])), 3.0)
    np.testing.assert_allclose(u([[1.0, np.e - 1.0], [0.0, 0.0]]), [5.0, 0.0])

  def test_affine_transform(self):
    u = utilities.UtilitySpec(utilities.LogShifted(2.0))
    v = u.affine(3.0, -1.0)
    rewards = np.array([0.0, 1.0, 5.0])
    np.testing.assert_allclose(v(rewards), 3.0 * u(rewards) - 1.0)

  def test_json_round_trip(self):
    u = utilities.UtilitySpec(
        [utilities.NegativeExponential(0.1), utilities.Linear()], [1.0, 0.5],
        ['benefit', 'cost'], scale=2.0)
    restored = utilities.UtilitySpec.from_json(u.to_json())
    rewards = np.array([[1.0, -2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(restored(rewards), u(rewards))
    self.assertEqual(restored.attribute_names, ('benefit', 'cost'))


class GambleTest(absltest.TestCase):

  def test_probabilities_must_sum_to_one(self):
    with self.assertRaises(ValueError):
      utilities.Gamble([(1.0, 0.5), (2.0, 0.4)])

  def test_negative_probability_raises(self):
    with self.assertRaises(ValueError):
      utilities.Gamble([(1.0, 1.5), (2.0, -0.5)])

  def test_linear_utility_is_expected_reward(self):
    u = utilities.UtilitySpec(utilities.Linear())
    gamble = utilities.Gamble([(7.0, 0.6), (-2.0, 0.4)])
    self.assertAlmostEqual(utilities.utility_of_gamble(u, gamble),
                           0.6 * 7.0 + 0.4 * -2.0)

  def test_expected_payoff_of_long_shot(self):
    u = utilities.UtilitySpec(utilities.Linear())
    self.assertAlmostEqual(utilities.utility_of_gamble(u, GAMBLE_B), 1.1)

  def test_log_utility_prefers_the_sure_thing(self):
    u = utilities.UtilitySpec(utilities.LogShifted(2.0))
    value_a = utilities.utility_of_gamble(u, GAMBLE_A)
    value_b = utilities.utility_of_gamble(u, GAMBLE_B)
    self.assertAlmostEqual(value_a, np.log(2.0))
    self.assertAlmostEqual(value_b, 0.1 * np.log(22.0))
    self.assertGreater(value_a, value_b)

  def test_gamble_outside_domain_raises(self):
    u = utilities.UtilitySpec(utilities.LogShifted(0.5))
    with self.assertRaises(core.UtilityDomainError):
      utilities.utility_of_gamble(u, GAMBLE_B)

  def test_concave_utilities_are_risk_averse(self):
    rng = np.random.default_rng(0)
    forms = [utilities.LogShifted(30.0), utilities.NegativeExponential(0.2),
             utilities.Affine(utilities.LogShifted(20.0), 2.0, 1.0)]
    for form in forms:
      u = utilities.UtilitySpec(form)
      for _ in range(20):
        rewards = rng.uniform(-15.0, 15.0, size=4)
        probabilities = rng.dirichlet(np.ones(4))
        probabilities[-1] = 1.0 - np.sum(probabilities[:-1])
        gamble = utilities.Gamble(list(zip(rewards, probabilities)))
        self.assertLess(utilities.utility_of_gamble(u, gamble),
                        float(u(gamble.expected_reward[0])))

  def test_certainty_equivalent(self):
    u = utilities.UtilitySpec(utilities.LogShifted(2.0))
    certain = utilities.certainty_equivalent(u, GAMBLE_B)
    # exp(0.1 log 22) - 2.
    self.assertAlmostEqual(certain, 22.0**0.1 - 2.0, places=9)
    self.assertLess(certain, GAMBLE_B.expected_reward[0])


if __name__ == '__main__':
  absltest.main()
