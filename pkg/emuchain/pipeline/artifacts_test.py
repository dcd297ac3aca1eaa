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
"""Tests for emuchain.pipeline.artifacts."""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import os

from absl.testing import absltest
from emuchain import designs
from emuchain import ledger
from emuchain.pipeline import artifacts
import numpy as np

SPACE = designs.InputSpace([('a', 0.0, 1.0), ('b', -2.0, 2.0)])


class TextTest(absltest.TestCase):

  def setUp(self):
    super(TextTest, self).setUp()
    self.directory = self.create_tempdir().full_path

  def test_write_leaves_no_temporary_files(self):
    path = os.path.join(self.directory, 'doc.json')
    artifacts.write_json(path, {'b': 1, 'a': [1.5, 2]})
    artifacts.write_json(path, {'c': 0.1})
    self.assertEqual(os.listdir(self.directory), ['doc.json'])
    self.assertEqual(artifacts.read_json(path), {'c': 0.1})

  def test_json_is_sorted_and_indented(self):
    self.assertEqual(artifacts.dumps({'b': 1, 'a': 2}),
                     '{\n  "a": 2,\n  "b": 1\n}\n')

  def test_invalid_json_names_the_file(self):
    path = os.path.join(self.directory, 'broken.json')
    with open(path, 'w') as f:
      f.write('{"a": ')
    with self.assertRaisesRegex(ValueError, 'broken.json'):
      artifacts.read_json(path)


class TableTest(absltest.TestCase):

  def setUp(self):
    super(TableTest, self).setUp()
    self.directory = self.create_tempdir().full_path

  def write(self, name, text):
    path = os.path.join(self.directory, name)
    with open(path, 'w') as f:
      f.write(text)
    return path

  def test_header_line(self):
    text = artifacts.format_table(['a', 'y'], [[0.5, 0.1]], 1, [0.0], [1.0])
    self.assertEqual(text.splitlines(), [
        '# emuchain format_version=1 n_inputs=1 lower=0.0 upper=1.0',
        'a,y',
        '0.5,0.1',
    ])

  def test_design_with_responses(self):
    design = designs.DesignSet([[0.25, -1.0], [0.75, 1.5]], SPACE,
                               [[3.0], [1.0 / 3.0]], ['y'])
    path = os.path.join(self.directory, 'runs.csv')
    artifacts.write_design(path, design)
    loaded = artifacts.read_design(path)
    self.assertEqual(loaded.space, SPACE)
    self.assertEqual(loaded.output_names, ('y',))
    np.testing.assert_array_equal(loaded.points, design.points)
    np.testing.assert_array_equal(loaded.responses, design.responses)

  def test_hand_written_table_uses_bounding_box(self):
    path = self.write('grid.csv', 'capacity\n2\n5\n8\n')
    design = artifacts.read_design(path)
    self.assertEqual(design.space.names, ('capacity',))
    np.testing.assert_array_equal(design.space.lower, [2.0])
    np.testing.assert_array_equal(design.space.upper, [8.0])

  def test_ragged_row_raises(self):
    path = self.write('bad.csv', 'a,b\n1,2\n3\n')
    with self.assertRaisesRegex(ValueError, 'row 1'):
      artifacts.read_table(path)

  def test_unsupported_version_raises(self):
    path = self.write('new.csv', '# emuchain format_version=9\na\n1\n')
    with self.assertRaises(ValueError):
      artifacts.read_table(path)

  def test_space_mismatch_raises(self):
    path = self.write('runs.csv', 'b,a\n0,0.5\n')
    with self.assertRaises(ValueError):
      artifacts.read_design(path, SPACE)

  def test_load_samples(self):
    path = self.write('samples.csv', 'x,z\n1,10\n2,20\n')
    np.testing.assert_array_equal(artifacts.load_samples(path, 'z'),
                                  [10.0, 20.0])
    with self.assertRaises(ValueError):
      artifacts.load_samples(path, 'w')


class LockTest(absltest.TestCase):

  def test_record_run_chains_records(self):
    directory = self.create_tempdir().full_path
    source = os.path.join(directory, 'in.json')
    output = os.path.join(directory, 'out.json')
    artifacts.write_json(source, {'a': 1})
    artifacts.write_json(output, {'b': 2})
    lock_path = artifacts.lock_path_for(output)
    self.assertEqual(os.path.basename(lock_path), artifacts.LOCK_NAME)

    artifacts.record_run(lock_path, 'first', [source], 3, output)
    lock = artifacts.record_run(lock_path, 'second', [source, None], None,
                                output, rationale='rerun')
    self.assertEqual(lock, artifacts.read_json(lock_path))
    ledger.validate_lock(lock)
    self.assertEqual([r['operation'] for r in lock['audit']],
                     ['first', 'second'])
    self.assertEqual(lock['audit'][0]['inputs'],
                     {'in.json': ledger.hash_file(source)})
    self.assertEqual(lock['audit'][1]['output'], ledger.hash_file(output))
    self.assertIsNone(lock['manifest'])

  def test_failed_run_has_no_output_hash(self):
    directory = self.create_tempdir().full_path
    output = os.path.join(directory, 'out.json')
    artifacts.write_json(output, {'stale': True})
    lock = artifacts.record_run(
        os.path.join(directory, artifacts.LOCK_NAME), 'fit', [], None, output,
        error={'exit_code': 1, 'error': 'FitError', 'message': 'singular'})
    ledger.validate_lock(lock)
    self.assertIsNone(lock['audit'][0]['output'])
    self.assertEqual(lock['audit'][0]['error']['error'], 'FitError')

  def test_missing_lock_is_empty(self):
    path = os.path.join(self.create_tempdir().full_path, 'none.json')
    self.assertEqual(artifacts.read_lock(path), ledger.empty_lock())


if __name__ == '__main__':
  absltest.main()
