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
"""Tests for emuchain.ledger."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import copy
import os

from absl.testing import absltest
from emuchain import core
from emuchain import ledger

FULL_PIPELINE = list(ledger.QUANTIFIED_BY)
RATIONALES = {
    'condition': 'Initial conditions are fixed by the scenario.',
    'stochastic': 'Both models are deterministic.',
    'solution': 'Solver error is far below emulator error.',
}


def record(i):
  return ledger.make_record('step{}'.format(i), {'in.json': 'ab' * 32}, i,
                            'cd' * 32, 'why', timestamp='2020-01-0{}'.format(i))


class ManifestTest(absltest.TestCase):

  def test_full_pipeline(self):
    manifest = ledger.build_manifest(FULL_PIPELINE, RATIONALES)
    self.assertEqual(list(manifest), list(ledger.SOURCE_KINDS))
    treatments = [e['treatment'] for e in manifest.values()]
    self.assertEqual(treatments.count('quantified'), 6)
    self.assertEqual(treatments.count('ignored'), 3)
    ledger.validate_manifest(manifest)

  def test_emulator_only_needs_eight_rationales(self):
    with self.assertRaises(core.LedgerError) as cm:
      ledger.build_manifest(['emulator'])
    self.assertLen(cm.exception.details['missing'], 8)
    self.assertNotIn('functional', cm.exception.details['missing'])

  def test_missing_rationale_raises(self):
    rationales = dict(RATIONALES)
    del rationales['solution']
    with self.assertRaises(core.LedgerError) as cm:
      ledger.build_manifest(FULL_PIPELINE, rationales)
    self.assertEqual(cm.exception.details['missing'], ['solution'])

  def test_order_of_magnitude(self):
    manifest = ledger.build_manifest(
        FULL_PIPELINE, {'condition': 'fixed', 'stochastic': 'deterministic'},
        magnitudes={'solution': (0.01, 'mesh refinement study')})
    self.assertEqual(manifest['solution'],
                     {'treatment': 'order_of_magnitude', 'value': 0.01,
                      'rationale': 'mesh refinement study'})

  def test_unknown_module_raises(self):
    with self.assertRaises(core.LedgerError):
      ledger.build_manifest(['oracle'])

  def test_validate_rejects_dropped_kind(self):
    manifest = ledger.build_manifest(FULL_PIPELINE, RATIONALES)
    del manifest['decision']
    with self.assertRaises(core.LedgerError):
      ledger.validate_manifest(manifest)


class AuditTest(absltest.TestCase):

  def test_single_record_verifies(self):
    chain = ledger.append_audit([], record(1))
    self.assertLen(chain, 1)
    self.assertEqual(chain[0]['previous'], ledger.GENESIS)
    ledger.verify_chain(chain)

  def test_records_keep_execution_order(self):
    chain = []
    for i in range(1, 6):
      chain = ledger.append_audit(chain, record(i))
    self.assertEqual([e['operation'] for e in chain],
                     ['step1', 'step2', 'step3', 'step4', 'step5'])
    ledger.verify_chain(chain)

  def test_mutated_hash_fails(self):
    chain = ledger.append_audit(ledger.append_audit([], record(1)), record(2))
    tampered = copy.deepcopy(chain)
    tampered[0]['hash'] = 'f' + tampered[0]['hash'][1:]
    with self.assertRaises(core.LedgerError):
      ledger.verify_chain(tampered)

  def test_every_field_mutation_fails(self):
    chain = ledger.append_audit(ledger.append_audit([], record(1)), record(2))
    for i in range(2):
      for key in ['timestamp', 'operation', 'seed', 'output', 'rationale']:
        tampered = copy.deepcopy(chain)
        tampered[i][key] = str(tampered[i][key]) + 'x'
        with self.assertRaises(core.LedgerError):
          ledger.verify_chain(tampered)

  def test_error_field_is_hashed(self):
    failed = ledger.make_record('fit', {}, None, None, timestamp='2020-01-03',
                                error={'exit_code': 1, 'error': 'FitError'})
    chain = ledger.append_audit(ledger.append_audit([], record(1)), failed)
    self.assertIsNone(chain[0]['error'])
    tampered = copy.deepcopy(chain)
    tampered[1]['error']['exit_code'] = 0
    with self.assertRaises(core.LedgerError):
      ledger.verify_chain(tampered)

  def test_append_to_broken_chain_raises(self):
    chain = ledger.append_audit([], record(1))
    chain[0]['seed'] = 99
    with self.assertRaises(core.LedgerError):
      ledger.append_audit(chain, record(2))

  def test_hash_file(self):
    path = os.path.join(absltest.get_default_test_tmpdir(), 'blob.txt')
    with open(path, 'wb') as f:
      f.write(b'abc')
    self.assertEqual(
        ledger.hash_file(path),
        'ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad')

  def test_lock_validation(self):
    lock = ledger.empty_lock()
    lock['audit'] = ledger.append_audit([], record(1))
    lock['manifest'] = ledger.build_manifest(FULL_PIPELINE, RATIONALES)
    ledger.validate_lock(lock)
    lock['manifest']['condition'] = {'treatment': 'ignored'}
    with self.assertRaises(core.LedgerError):
      ledger.validate_lock(lock)


if __name__ == '__main__':
  absltest.main()
