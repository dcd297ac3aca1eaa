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
"""Base module for the emuchain simulator emulation and decision library."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

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

from emuchain.version import __version__
