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
"""Reading and writing pipeline artifacts.

Structured documents are JSON with a `format_version`. Bulk numbers are CSV
files whose first line is a tag comment:

  # emuchain format_version=1 n_inputs=2 lower=0.0,0.0 upper=1.0,1.0
  a,b,y
  0.25,0.75,3.5

The first n_inputs columns are inputs (lower/upper, when present, are their
bounds) and the rest are outputs. Every write goes to a temporary file in the
target directory that is then renamed over the target.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import json
import os
import tempfile
from typing import Any, Callable, Dict, Optional, Sequence, Text

from absl import logging
from emuchain import core
from emuchain import designs
from emuchain import ledger
import numpy as np

FORMAT_VERSION = 1
CSV_TAG = '# emuchain'
LOCK_NAME = 'analysis.lock.json'

Table = collections.namedtuple('Table',
                               ('names', 'values', 'n_inputs', 'lower',
                                'upper'))


# Atomic writes ----------------------------------------------------------------
def write_text(path: Text, text: Text):
  """Write text to path atomically."""
  directory = os.path.dirname(os.path.abspath(path))
  os.makedirs(directory, exist_ok=True)
  fd, temp_path = tempfile.mkstemp(dir=directory, prefix='.emuchain-')
  try:
    with os.fdopen(fd, 'w', newline='\n') as f:
      f.write(text)
    os.replace(temp_path, path)
  except BaseException:
    if os.path.exists(temp_path):
      os.remove(temp_path)
    raise


def dumps(doc: Any) -> Text:
  return json.dumps(core.to_jsonable(doc), indent=2, sort_keys=True) + '\n'


def write_json(path: Text, doc: Any):
  write_text(path, dumps(doc))
  logging.info('Wrote %s', path)


def read_json(path: Text) -> Dict[Text, Any]:
  with open(path) as f:
    try:
      return json.load(f)
    except ValueError as e:
      raise ValueError('{} is not valid JSON: {}'.format(path, e))


# Tables -----------------------------------------------------------------------
def _format_header(n_inputs, lower, upper):
  fields = [CSV_TAG, 'format_version={}'.format(FORMAT_VERSION),
            'n_inputs={}'.format(n_inputs)]
  if lower is not None:
    fields.append('lower=' + ','.join(core.format_decimal(v) for v in lower))
    fields.append('upper=' + ','.join(core.format_decimal(v) for v in upper))
  return ' '.join(fields)


def format_table(names: Sequence[Text],
                 values: np.ndarray,
                 n_inputs: int = 0,
                 lower=None,
                 upper=None) -> Text:
  values = np.atleast_2d(np.asarray(values, np.float64))
  if values.size and values.shape[1] != len(names):
    raise ValueError('{} columns for names {}.'.format(values.shape[1], names))
  lines = [_format_header(n_inputs, lower, upper), ','.join(names)]
  lines.extend(','.join(core.format_decimal(v) for v in row)
               for row in values if row.size)
  return '\n'.join(lines) + '\n'


def write_table(path: Text, names, values, n_inputs=0, lower=None, upper=None):
  write_text(path, format_table(names, values, n_inputs, lower, upper))
  logging.info('Wrote %s', path)


def read_table(path: Text) -> Table:
  """Read a CSV table; the tag line is optional for hand-written files."""
  with open(path) as f:
    lines = [line.strip() for line in f if line.strip()]
  if not lines:
    raise ValueError('{} is empty.'.format(path))
  meta = {}
  if lines[0].startswith('#'):
    for token in lines.pop(0).split()[1:]:
      key, _, value = token.partition('=')
      meta[key] = value
  if meta.get('format_version', str(FORMAT_VERSION)) != str(FORMAT_VERSION):
    raise ValueError('{} has unsupported format_version {}.'.format(
        path, meta['format_version']))
  names = [n.strip() for n in lines[0].split(',')]
  rows = []
  for i, line in enumerate(lines[1:]):
    tokens = line.split(',')
    if len(tokens) != len(names):
      raise ValueError('{} row {} has {} fields, expected {}.'.format(
          path, i, len(tokens), len(names)))
    rows.append([core.parse_decimal(t.strip()) for t in tokens])
  values = np.array(rows, np.float64).reshape(len(rows), len(names))
  n_inputs = int(meta.get('n_inputs', len(names)))

  def bounds(key):
    if key not in meta:
      return None
    return np.array([core.parse_decimal(v) for v in meta[key].split(',')])

  return Table(names, values, n_inputs, bounds('lower'), bounds('upper'))


# Designs ----------------------------------------------------------------------
def write_design(path: Text, design: designs.DesignSet):
  names = list(design.space.names) + list(design.output_names)
  values = design.points
  if design.has_responses:
    values = np.concatenate([design.points, design.responses], axis=1)
  write_table(path, names, values, design.space.n_dims, design.space.lower,
              design.space.upper)


def space_of(table: Table) -> designs.InputSpace:
  """Input space from a table's bounds, else its bounding box."""
  names = table.names[:table.n_inputs]
  if table.lower is not None:
    lower, upper = table.lower, table.upper
  else:
    points = table.values[:, :table.n_inputs]
    lower, upper = np.min(points, axis=0), np.max(points, axis=0)
    upper = np.where(upper > lower, upper, lower + 1.0)
    logging.info('No bounds in the table; using the bounding box of its '
                 'points.')
  return designs.InputSpace(list(zip(names, lower, upper)))


def read_design(path: Text,
                space: Optional[designs.InputSpace] = None
               ) -> designs.DesignSet:
  table = read_table(path)
  k = table.n_inputs
  if space is None:
    space = space_of(table)
  elif tuple(table.names[:k]) != space.names:
    raise ValueError('{} columns {} do not match the space {}.'.format(
        path, table.names[:k], space.names))
  points = table.values[:, :k]
  if k == len(table.names):
    return designs.DesignSet(points, space)
  return designs.DesignSet(points, space, table.values[:, k:],
                           table.names[k:])


def load_samples(path: Text, column: Text) -> np.ndarray:
  table = read_table(path)
  if column not in table.names:
    raise ValueError('{} has no column {}; columns are {}.'.format(
        path, column, table.names))
  return table.values[:, table.names.index(column)]


# Graph documents --------------------------------------------------------------
def make_resolver(base_path: Text) -> Callable[[Text], Dict[Text, Any]]:
  """Resolve emulator file references relative to a document's directory."""
  directory = os.path.dirname(os.path.abspath(base_path))

  def resolve(reference):
    return read_json(os.path.join(directory, reference))

  return resolve


# Lock file --------------------------------------------------------------------
def lock_path_for(output_path: Text) -> Text:
  return os.path.join(os.path.dirname(os.path.abspath(output_path)),
                      LOCK_NAME)


def read_lock(path: Text) -> Dict[Text, Any]:
  if not os.path.exists(path):
    return ledger.empty_lock()
  return read_json(path)


def record_run(lock_path: Text,
               operation: Text,
               input_paths: Sequence[Text],
               seed: Optional[int],
               output_path: Optional[Text],
               rationale: Text = '',
               manifest: Optional[Dict[Text, Any]] = None,
               error: Optional[Dict[Text, Any]] = None) -> Dict[Text, Any]:
  """Append an audit record for one CLI run to the lock file.

  Failed runs pass `error` and are recorded without an output hash.
  """
  lock = read_lock(lock_path)
  inputs = {os.path.basename(p): ledger.hash_file(p)
            for p in input_paths if p and os.path.isfile(p)}
  output = None
  if error is None and output_path and os.path.isfile(output_path):
    output = ledger.hash_file(output_path)
  record = ledger.make_record(operation, inputs, seed, output, rationale,
                              error=error)
  lock['audit'] = ledger.append_audit(lock.get('audit', []), record)
  if manifest is not None:
    lock['manifest'] = manifest
  write_json(lock_path, lock)
  return lock
