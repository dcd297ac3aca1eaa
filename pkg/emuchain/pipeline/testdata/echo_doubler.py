#!/usr/bin/env python3
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
"""Reference external simulator for the line protocol.

Reads one line of space-separated decimals per request and replies with every
value doubled. Alternate modes exercise the failure paths:
  silent   never replies (timeouts)
  garbage  replies with a non-numeric token
  exit     exits without replying
"""

import sys


def main(argv):
  mode = argv[1] if len(argv) > 1 else 'double'
  for line in sys.stdin:
    if mode == 'silent':
      continue
    if mode == 'exit':
      return 3
    if mode == 'garbage':
      sys.stdout.write('not-a-number\n')
    else:
      values = [2.0 * float(token) for token in line.split()]
      sys.stdout.write(' '.join(repr(v) for v in values) + '\n')
    sys.stdout.flush()
  return 0


if __name__ == '__main__':
  sys.exit(main(sys.argv))
