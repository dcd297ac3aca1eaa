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
"""Library of shared numerical helpers and the emuchain error types."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import os
import zlib
from typing import Any, Dict, Sequence, Text, Union

import numpy as np

Number = Union[int, float, np.ndarray]

# Smallest variance used wherever a variance is moved to the log scale.
VARIANCE_FLOOR = 1e-12

# Eigenvalues above this (negative) value are treated as zero.
EIGENVALUE_FLOOR = -1e-10


# Errors -----------------------------------------------------------------------
class EmuchainError(ValueError):
  """Base class for domain errors raised by emuchain.

  Subclasses ValueError so that callers written against plain ValueError keep
  working. `details` is a JSON-serializable dict used in CLI error reports.
  """

  def __init__(self, message: Text, **details: Any):
    super(EmuchainError, self).__init__(message)
    self.details = {k: to_jsonable(v) for k, v in details.items()}


class SimulatorError(EmuchainError):
  """A simulator evaluation failed (spawn, protocol, timeout or arity)."""


class FitError(EmuchainError):
  """An emulator could not be fitted."""


class DiscrepancyError(EmuchainError):
  """A discrepancy specification is invalid or could not be assessed."""


class CalibrationError(EmuchainError):
  """History matching or forecasting preconditions were violated."""


class GraphError(EmuchainError):
  """A model graph is malformed (cycle, unbound input, missing output)."""


class UtilityDomainError(EmuchainError):
  """A reward lies outside the domain of a utility function."""


class DecisionError(EmuchainError):
  """A decision problem is malformed."""


class LedgerError(EmuchainError):
  """An uncertainty manifest is incomplete or an audit chain is broken."""


# Utility Functions ------------------------------------------------------------
def make_iterable(x):
  """Ensure that x is an iterable."""
  return x if isinstance(x, collections.abc.Iterable) else [x]


def nested_lookup(nested_key: Text,
                  nested_dict: Dict[Text, Any],
                  delimiter: Text = '/') -> Any:
  """Returns the value of a nested dict according to a parsed input string.

  Args:
    nested_key: String of the form "key/key/key...".
    nested_dict: Nested dictionary.
    delimiter: String that splits the nested keys.

  Returns:
    value: Value of the key from the nested dictionary.
  """
  keys = nested_key.split(delimiter)
  value = nested_dict
  for key in keys:
    value = value[key]
  return value


def to_jsonable(value: Any) -> Any:
  """Convert numpy scalars and arrays (possibly nested) to plain python."""
  if isinstance(value, np.ndarray):
    return value.tolist()
  if isinstance(value, np.generic):
    return value.item()
  if isinstance(value, dict):
    return {str(k): to_jsonable(v) for k, v in value.items()}
  if isinstance(value, (list, tuple)):
    return [to_jsonable(v) for v in value]
  return value


def frozen_array(x, ndim: int = None) -> np.ndarray:
  """Copy x to a read-only float64 array, optionally checking its rank."""
  array = np.array(x, dtype=np.float64)
  if ndim is not None and array.ndim != ndim:
    raise ValueError('Expected an array of rank {}, got shape {}.'.format(
        ndim, array.shape))
  array.flags.writeable = False
  return array


# Decimal formatting -----------------------------------------------------------
def format_decimal(x: float) -> Text:
  """Shortest decimal string that round-trips to the same float64."""
  return repr(float(x))


def parse_decimal(token: Text) -> float:
  """Parse a decimal token, raising ValueError for non-numeric text."""
  try:
    return float(token)
  except ValueError:
    raise ValueError('Non-numeric token: {!r}'.format(token))


def format_row(values: Sequence[float]) -> Text:
  return ' '.join(format_decimal(v) for v in values)


# Input standardization --------------------------------------------------------
def standardize(points: np.ndarray,
                lower: np.ndarray,
                upper: np.ndarray) -> np.ndarray:
  """Map native-unit points onto [-1, 1] per dimension."""
  points = np.asarray(points, dtype=np.float64)
  return 2.0 * (points - lower) / (upper - lower) - 1.0


def unstandardize(z: np.ndarray,
                  lower: np.ndarray,
                  upper: np.ndarray) -> np.ndarray:
  """Inverse of standardize()."""
  z = np.asarray(z, dtype=np.float64)
  return lower + (z + 1.0) * (upper - lower) / 2.0


# Random streams ---------------------------------------------------------------
def _key_to_int(key: Union[int, Text]) -> int:
  if isinstance(key, (int, np.integer)):
    if key < 0:
      raise ValueError('Stream keys must be non-negative, got {}.'.format(key))
    return int(key)
  return zlib.crc32(str(key).encode('utf-8'))


def seed_sequence(seed: int, *keys: Union[int, Text]) -> np.random.SeedSequence:
  """Counter-based seed sequence keyed by (seed, key, key, ...)."""
  if seed is None or int(seed) < 0:
    raise ValueError('A non-negative integer seed is required, got {}.'.format(
        seed))
  return np.random.SeedSequence(
      entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))


def substream(seed: int, *keys: Union[int, Text]) -> np.random.Generator:
  """Independent generator for one (module, operation, index) stream.

  The same (seed, keys) always yields the same stream, independently of how
  many other streams were created before it or on which thread.

  Args:
    seed: Master seed.
    *keys: Integers or strings naming the stream, e.g. ('chain', 'emulator',
      node_index, chunk_index).

  Returns:
    A numpy Generator.
  """
  return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys: Union[int, Text]) -> int:
  """Integer seed for a child operation, derived like substream()."""
  return int(seed_sequence(seed, *keys).generate_state(1, np.uint32)[0])


# Concurrency ------------------------------------------------------------------
def num_threads() -> int:
  """Worker count, capped by the EMUCHAIN_THREADS environment variable."""
  value = os.environ.get('EMUCHAIN_THREADS')
  if value:
    try:
      return max(1, int(value))
    except ValueError:
      raise ValueError(
          'EMUCHAIN_THREADS must be an integer, got {!r}.'.format(value))
  return max(1, os.cpu_count() or 1)
