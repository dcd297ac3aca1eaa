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
"""Uncertainty manifest and hash-chained audit trail.

Every analysis declares how it treats each of nine sources of uncertainty:
quantified by a module, bounded by an order-of-magnitude assessment, or
ignored with a stated rationale. Silence is an error.

The audit trail is a list of records, each holding the SHA-256 of its own
canonical JSON and of the record before it.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import collections
import datetime
import hashlib
import json
from typing import Any, Dict, List, Mapping, Optional, Sequence, Text, Tuple

from absl import logging
from emuchain import core

FORMAT_VERSION = 1
HASH_ALGORITHM = 'sha256'
GENESIS = '0' * 64

SOURCE_KINDS = ('parametric', 'condition', 'functional', 'stochastic',
                'solution', 'structural', 'measurement', 'multi_model',
                'decision')
TREATMENTS = ('quantified', 'order_of_magnitude', 'ignored')

# Module -> source kind it quantifies.
QUANTIFIED_BY = collections.OrderedDict([
    ('calibration', 'parametric'),
    ('emulator', 'functional'),
    ('discrepancy', 'structural'),
    ('observations', 'measurement'),
    ('chain', 'multi_model'),
    ('decision', 'decision'),
])

# Define Types.
Manifest = Dict[Text, Dict[Text, Any]]
AuditChain = List[Dict[Text, Any]]


# ---------------------- Manifest ----------------------------------------------
def build_manifest(
    modules: Sequence[Text],
    rationales: Optional[Mapping[Text, Text]] = None,
    magnitudes: Optional[Mapping[Text, Tuple[float, Text]]] = None
) -> Manifest:
  """One entry per source kind for an analysis using `modules`.

  Args:
    modules: Names from QUANTIFIED_BY used by the analysis.
    rationales: Kind -> why it is ignored, for every kind no module covers
      and no magnitude bounds.
    magnitudes: Kind -> (order-of-magnitude value, rationale).

  Returns:
    Dict kind -> entry, in SOURCE_KINDS order.

  Raises:
    LedgerError: If an uncovered kind has no rationale.
  """
  unknown = [m for m in modules if m not in QUANTIFIED_BY]
  if unknown:
    raise core.LedgerError(
        'Unknown modules {}, options are {}.'.format(unknown,
                                                     list(QUANTIFIED_BY)),
        modules=unknown)
  rationales = dict(rationales or {})
  magnitudes = dict(magnitudes or {})
  quantified = {QUANTIFIED_BY[m]: m for m in modules}

  manifest = collections.OrderedDict()
  missing = []
  for kind in SOURCE_KINDS:
    if kind in quantified:
      manifest[kind] = {'treatment': 'quantified', 'module': quantified[kind]}
    elif kind in magnitudes:
      value, rationale = magnitudes[kind]
      manifest[kind] = {'treatment': 'order_of_magnitude',
                        'value': float(value), 'rationale': str(rationale)}
    elif rationales.get(kind):
      manifest[kind] = {'treatment': 'ignored', 'rationale': rationales[kind]}
    else:
      missing.append(kind)
  if missing:
    raise core.LedgerError(
        'Uncertainty sources {} are neither quantified nor given a '
        'rationale.'.format(missing), missing=missing)
  return dict(manifest)


def validate_manifest(manifest: Mapping[Text, Mapping[Text, Any]]) -> None:
  """Raise LedgerError unless all nine kinds carry a valid treatment."""
  kinds = set(manifest)
  if kinds != set(SOURCE_KINDS):
    raise core.LedgerError(
        'Manifest kinds {} differ from {}.'.format(sorted(kinds),
                                                   list(SOURCE_KINDS)),
        missing=sorted(set(SOURCE_KINDS) - kinds),
        unexpected=sorted(kinds - set(SOURCE_KINDS)))
  for kind, entry in manifest.items():
    treatment = entry.get('treatment')
    if treatment not in TREATMENTS:
      raise core.LedgerError('{} has treatment {!r}.'.format(kind, treatment))
    if treatment == 'quantified' and not entry.get('module'):
      raise core.LedgerError('{} is quantified by no module.'.format(kind))
    if treatment != 'quantified' and not entry.get('rationale'):
      raise core.LedgerError('{} lacks a rationale.'.format(kind),
                             missing=[kind])


# ---------------------- Hashing -----------------------------------------------
def canonical_json(doc: Any) -> bytes:
  return json.dumps(core.to_jsonable(doc), sort_keys=True,
                    separators=(',', ':')).encode('utf-8')


def hash_document(doc: Any) -> Text:
  return hashlib.sha256(canonical_json(doc)).hexdigest()


def hash_file(path: Text) -> Text:
  digest = hashlib.sha256()
  with open(path, 'rb') as f:
    for block in iter(lambda: f.read(1 << 16), b''):
      digest.update(block)
  return digest.hexdigest()


# ---------------------- Audit trail -------------------------------------------
AuditRecord = collections.namedtuple(
    'AuditRecord',
    ('timestamp', 'operation', 'inputs', 'seed', 'output', 'rationale',
     'error'))


def make_record(operation: Text,
                inputs: Mapping[Text, Text],
                seed: Optional[int],
                output: Optional[Text],
                rationale: Text = '',
                timestamp: Optional[Text] = None,
                error: Optional[Mapping[Text, Any]] = None) -> AuditRecord:
  """Record of one operation; inputs map artifact names to their hashes.

  A failed operation carries `error` (exit code, error class and message)
  and has no output hash.
  """
  if timestamp is None:
    timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
  return AuditRecord(timestamp, operation, dict(inputs), seed, output,
                     rationale, None if error is None else dict(error))


def _record_hash(entry: Mapping[Text, Any]) -> Text:
  return hash_document({k: v for k, v in entry.items() if k != 'hash'})


def verify_chain(chain: AuditChain) -> None:
  """Check every record's hash and link; raise LedgerError at a break."""
  previous = GENESIS
  for i, entry in enumerate(chain):
    if entry.get('previous') != previous:
      raise core.LedgerError('Audit record {} does not link to its '
                             'predecessor.'.format(i), index=i)
    if entry.get('hash') != _record_hash(entry):
      raise core.LedgerError('Audit record {} fails its hash.'.format(i),
                             index=i)
    previous = entry['hash']


def append_audit(chain: AuditChain, record: AuditRecord) -> AuditChain:
  """A new chain with `record` appended; the existing chain must verify."""
  verify_chain(chain)
  entry = dict(record._asdict())
  entry['previous'] = chain[-1]['hash'] if chain else GENESIS
  entry['hash'] = _record_hash(entry)
  logging.debug('Audit record %d: %s -> %s.', len(chain), record.operation,
                entry['hash'])
  return list(chain) + [entry]


# ---------------------- Lock document -----------------------------------------
def empty_lock() -> Dict[Text, Any]:
  return {'format_version': FORMAT_VERSION, 'hash_algorithm': HASH_ALGORITHM,
          'manifest': None, 'audit': []}


def validate_lock(lock: Mapping[Text, Any]) -> None:
  """Verify the audit chain and, when present, the manifest of a lock."""
  if lock.get('hash_algorithm', HASH_ALGORITHM) != HASH_ALGORITHM:
    raise core.LedgerError('Unsupported hash algorithm {!r}.'.format(
        lock.get('hash_algorithm')))
  verify_chain(lock.get('audit', []))
  if lock.get('manifest') is not None:
    validate_manifest(lock['manifest'])
