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
"""Black-box simulator handles and design evaluation.

A simulator is either an in-process python function or an external executable
speaking a line protocol: the parent writes one line of space-separated
decimal inputs (followed by any perturbation values) to the child's stdin and
reads back exactly one line of space-separated decimal outputs. The child
serves requests until its stdin closes.
"""

from __future__ import absolute_import
from __future__ import division
from __future__ import print_function

import concurrent.futures
import importlib
import os
import queue
import shlex
import shutil
import subprocess
import threading
from typing import Any, Callable, Dict, List, Optional, Sequence, Text, Union

from absl import logging
from emuchain import core
from emuchain import designs
import gin
import numpy as np

# Define Types.
Perturbation = Optional[Dict[Text, Union[float, np.ndarray]]]


# Simulator Base Class ---------------------------------------------------------
class SimulatorHandle(object):
  """Abstract base class for simulators.

  Subclasses implement _evaluate(point, perturbation), returning one value
  per output name. Handles may hold resources (child processes), released by
  close(), and can be used as context managers.
  """

  kind = None

  def __init__(self,
               output_names: Sequence[Text],
               deterministic: bool = True,
               n_inputs: Optional[int] = None,
               name: Text = 'simulator'):
    if not output_names:
      raise ValueError('A simulator needs at least one output name.')
    self.output_names = tuple(output_names)
    self.deterministic = deterministic
    self.n_inputs = n_inputs
    self.name = name

  @property
  def n_outputs(self) -> int:
    return len(self.output_names)

  def _evaluate(self, point: np.ndarray, perturbation: Perturbation):
    raise NotImplementedError

  def close(self):
    pass

  def __enter__(self):
    return self

  def __exit__(self, *unused_exc):
    self.close()


class FunctionSimulator(SimulatorHandle):
  """In-process simulator wrapping fn(point, **perturbation) -> outputs."""

  kind = 'in-process'

  def __init__(self,
               fn: Callable[..., Any],
               output_names: Sequence[Text] = ('y',),
               deterministic: bool = True,
               n_inputs: Optional[int] = None,
               name: Text = None):
    super(FunctionSimulator, self).__init__(
        output_names, deterministic, n_inputs,
        name or getattr(fn, '__name__', 'function'))
    self.fn = fn

  def _evaluate(self, point, perturbation):
    return self.fn(point, **(perturbation or {}))


class _ChildProcess(object):
  """One persistent external child with a reader thread on its stdout."""

  def __init__(self, args: List[Text]):
    self.process = subprocess.Popen(
        args,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        universal_newlines=True,
        bufsize=1)
    self.lines = queue.Queue()
    self.reader = threading.Thread(target=self._read, daemon=True)
    self.reader.start()

  def _read(self):
    for line in self.process.stdout:
      self.lines.put(line)
    # End of stream.
    self.lines.put(None)

  def request(self, line: Text, timeout: float) -> Optional[Text]:
    """Send one request line, returning the reply or None on end of stream.

    Raises:
      queue.Empty: If no reply arrives within timeout seconds.
      OSError: If the child's stdin is closed.
    """
    self.process.stdin.write(line + '\n')
    self.process.stdin.flush()
    return self.lines.get(timeout=timeout)

  def close(self):
    if self.process.poll() is None:
      try:
        self.process.stdin.close()
        self.process.wait(timeout=5)
      except (OSError, subprocess.TimeoutExpired):
        self.process.kill()
        self.process.wait()


@gin.configurable
class ExternalSimulator(SimulatorHandle):
  """External executable speaking the line protocol.

  Each worker thread owns one persistent child, started on first use and
  reused until close().
  """

  kind = 'external'

  def __init__(self,
               command: Union[Text, Sequence[Text]],
               output_names: Sequence[Text] = ('y',),
               deterministic: bool = True,
               n_inputs: Optional[int] = None,
               timeout: float = 60.0,
               name: Text = None):
    """Constructor.

    Args:
      command: Command line, either a string (split like a shell would) or an
        argument list.
      output_names: Names of the outputs, one per reply token.
      deterministic: Whether repeated runs at one input agree.
      n_inputs: Expected input dimension, checked when given.
      timeout: Seconds to wait for each reply.
      name: Name used in logs.

    Raises:
      SimulatorError: If the executable cannot be found.
    """
    args = shlex.split(command) if isinstance(command, str) else list(command)
    if not args:
      raise ValueError('Empty simulator command.')
    super(ExternalSimulator, self).__init__(
        output_names, deterministic, n_inputs, name or args[0])
    executable = args[0]
    if not (shutil.which(executable) or
            (os.path.isfile(executable) and os.access(executable, os.X_OK))):
      raise core.SimulatorError(
          'Simulator executable not found or not executable: {}'.format(
              executable), command=args)
    self.args = args
    self.command = ' '.join(shlex.quote(a) for a in args)
    self.timeout = timeout
    self._local = threading.local()
    self._children = []
    self._lock = threading.Lock()

  def _child(self) -> _ChildProcess:
    child = getattr(self._local, 'child', None)
    if child is None or child.process.poll() is not None:
      try:
        child = _ChildProcess(self.args)
      except OSError as e:
        raise core.SimulatorError(
            'Could not start simulator {}: {}'.format(self.command, e))
      self._local.child = child
      with self._lock:
        self._children.append(child)
    return child

  def _discard_child(self):
    child = getattr(self._local, 'child', None)
    if child is not None:
      child.process.kill()
      child.process.wait()
      with self._lock:
        self._children.remove(child)
      self._local.child = None

  def _evaluate(self, point, perturbation):
    values = list(point)
    for value in (perturbation or {}).values():
      values.extend(np.ravel(value).tolist())
    line = core.format_row(values)
    child = self._child()
    try:
      reply = child.request(line, self.timeout)
    except queue.Empty:
      self._discard_child()
      raise core.SimulatorError(
          'Simulator timed out after {} s.'.format(self.timeout),
          point=point)
    except OSError as e:
      self._discard_child()
      raise core.SimulatorError(
          'Simulator closed its input: {}'.format(e), point=point)
    if reply is None:
      self._discard_child()
      raise core.SimulatorError(
          'Simulator exited (code {}) without replying.'.format(
              child.process.poll()), point=point)
    try:
      return [core.parse_decimal(token) for token in reply.split()]
    except ValueError as e:
      raise core.SimulatorError(
          'Malformed simulator output {!r}: {}'.format(reply.strip(), e),
          point=point)

  def close(self):
    with self._lock:
      children, self._children = self._children, []
    for child in children:
      child.close()
    self._local = threading.local()


def load_function(reference: Text) -> Callable[..., Any]:
  """Import a function from a 'py:package.module:function' reference."""
  if not reference.startswith('py:'):
    raise ValueError('Not a python reference: {}'.format(reference))
  try:
    module_name, function_name = reference[3:].rsplit(':', 1)
  except ValueError:
    raise ValueError('Expected py:<module>:<function>, got {}'.format(
        reference))
  module = importlib.import_module(module_name)
  return getattr(module, function_name)


def get_simulator(reference: Text,
                  output_names: Sequence[Text] = ('y',),
                  deterministic: bool = True,
                  n_inputs: Optional[int] = None) -> SimulatorHandle:
  """Build a handle from a command line or a 'py:module:function' string."""
  if reference.startswith('py:'):
    return FunctionSimulator(load_function(reference), output_names,
                             deterministic, n_inputs, name=reference)
  return ExternalSimulator(reference, output_names, deterministic, n_inputs)


# Evaluation -------------------------------------------------------------------
def evaluate(handle: SimulatorHandle,
             point,
             perturbation: Perturbation = None) -> np.ndarray:
  """Evaluate a simulator at one input point.

  Args:
    handle: The simulator.
    point: Input vector in native units.
    perturbation: Optional dict of perturbation values, passed to in-process
      functions as keyword arguments and to external simulators as trailing
      tokens in dict order.

  Returns:
    Output vector, one value per output name.

  Raises:
    SimulatorError: On a dimension mismatch, a failed evaluation, or an
      output of the wrong arity. The offending point is in `details`.
  """
  point = np.asarray(point, dtype=np.float64).ravel()
  if handle.n_inputs is not None and point.size != handle.n_inputs:
    raise core.SimulatorError(
        'Point has {} inputs, simulator {} expects {}.'.format(
            point.size, handle.name, handle.n_inputs), point=point)
  try:
    outputs = handle._evaluate(point, perturbation)  # pylint: disable=protected-access
    outputs = np.atleast_1d(np.asarray(outputs, dtype=np.float64)).ravel()
  except core.SimulatorError:
    raise
  except Exception as e:  # pylint: disable=broad-except
    raise core.SimulatorError(
        'Simulator {} failed: {}: {}'.format(handle.name,
                                             type(e).__name__, e),
        point=point)
  if outputs.size != handle.n_outputs:
    raise core.SimulatorError(
        'Simulator {} returned {} values, expected {} ({}).'.format(
            handle.name, outputs.size, handle.n_outputs, handle.output_names),
        point=point)
  return outputs


def _annotate(error: core.SimulatorError, row: int) -> core.SimulatorError:
  details = dict(error.details, row=row)
  annotated = core.SimulatorError('Row {}: {}'.format(row, error))
  annotated.details = details
  return annotated


def evaluate_many(handle: SimulatorHandle,
                  points: np.ndarray,
                  perturbations: Optional[Sequence[Perturbation]] = None,
                  skip_failures: bool = False) -> np.ndarray:
  """Evaluate many points concurrently, preserving row order.

  Rows are split into one contiguous block per worker, so an external
  simulator keeps one persistent child per worker for the whole call.

  Args:
    handle: The simulator.
    points: Matrix of input points, one per row.
    perturbations: Optional perturbation dict per row.
    skip_failures: If True, failed rows are logged and filled with NaN
      instead of raising.

  Returns:
    Matrix of outputs, one row per point.

  Raises:
    SimulatorError: Annotated with the failing row index.
  """
  points = np.atleast_2d(points)
  n = points.shape[0]
  if perturbations is not None and len(perturbations) != n:
    raise ValueError('Got {} perturbations for {} points.'.format(
        len(perturbations), n))
  results = np.full((n, handle.n_outputs), np.nan)

  def run_block(rows):
    for i in rows:
      perturbation = None if perturbations is None else perturbations[i]
      try:
        results[i] = evaluate(handle, points[i], perturbation)
      except core.SimulatorError as e:
        if not skip_failures:
          raise _annotate(e, int(i))
        logging.warning('Simulator failed at row %d: %s', i, e)

  n_workers = min(core.num_threads(), n)
  blocks = np.array_split(np.arange(n), n_workers)
  with concurrent.futures.ThreadPoolExecutor(max_workers=n_workers) as pool:
    futures = [pool.submit(run_block, block) for block in blocks]
    for future in futures:
      future.result()
  return results


def run_design(handle: SimulatorHandle,
               design: designs.DesignSet) -> designs.DesignSet:
  """Fill a design's responses by running the simulator at every point."""
  if design.has_responses:
    raise ValueError('Design already has responses.')
  if handle.n_inputs is not None and handle.n_inputs != design.space.n_dims:
    raise core.SimulatorError(
        'Simulator {} expects {} inputs, the design has {} dimensions.'.format(
            handle.name, handle.n_inputs, design.space.n_dims))
  if not handle.deterministic:
    logging.warning('Simulator %s is flagged non-deterministic; replicate '
                    'variance should feed internal discrepancy.', handle.name)
  logging.info('Running %s on %d design points.', handle.name, design.n_runs)
  responses = evaluate_many(handle, design.points)
  return design.with_responses(responses, handle.output_names)
