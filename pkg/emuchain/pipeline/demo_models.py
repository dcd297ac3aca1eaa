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
"""Two linked toy models for the end-to-end demo.

`supply` turns a capacity decision and an uncertain demand factor into a cost
and a delivered output; `market` turns the delivered output, an uncertain
price and the cost into revenue and net benefit. Referenced from the CLI as
py:emuchain.pipeline.demo_models:supply and ...:market.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import numpy as np

SUPPLY_SPACE = {
    'format_version': 1,
    'dims': [{'name': 'demand', 'lower': 0.5, 'upper': 1.5},
             {'name': 'capacity', 'lower': 0.0, 'upper': 10.0}],
    'decision_dims': ['capacity'],
}
SUPPLY_OUTPUTS = ('cost', 'delivered')

MARKET_SPACE = {
    'format_version': 1,
    'dims': [{'name': 'delivered', 'lower': 0.0, 'upper': 12.0},
             {'name': 'price', 'lower': 0.5, 'upper': 2.0},
             {'name': 'cost', 'lower': 0.0, 'upper': 12.0}],
}
MARKET_OUTPUTS = ('revenue', 'net_benefit')


def supply(point, demand_shock=0.0):
  demand, capacity = point[0] + demand_shock, point[1]
  cost = 1.0 + 0.8 * capacity + 0.02 * capacity**2
  delivered = capacity * demand * (1.0 - 0.03 * capacity)
  return np.array([cost, delivered])


def market(point):
  delivered, price, cost = point
  revenue = price * delivered - 0.02 * delivered**2
  return np.array([revenue, revenue - cost])


def graph_document(supply_refs, market_refs):
  """Model graph JSON for the demo, emulators given by file reference."""
  return {
      'format_version': 1,
      'nodes': [
          {'name': 'supply', 'emulators': dict(supply_refs),
           'bindings': {'demand': 'x/demand', 'capacity': 'd/capacity'}},
          {'name': 'market', 'emulators': dict(market_refs),
           'bindings': {'delivered': 'supply/delivered', 'price': 'x/price',
                        'cost': 'supply/cost'},
           'discrepancy': {
               'output_names': list(MARKET_OUTPUTS),
               'external': {'mode': 'absolute', 'scale': 0.1,
                            'inflation': 1.0}}},
      ],
  }


EXOGENOUS = {
    'format_version': 1,
    'demand': {'dist': 'uniform', 'lower': 0.5, 'upper': 1.5},
    'price': {'dist': 'normal', 'mean': 1.2, 'sd': 0.2},
}
