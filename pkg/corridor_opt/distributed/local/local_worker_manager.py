# coding=utf-8
# Copyright 2022 The corridor_opt Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Worker pool on the local machine, one process per worker.

Every worker object lives in a spawned process. The parent talks to it through
a stub exposing the worker's public methods; calling one sends a `Call` down a
pipe and returns a future, which a reader thread resolves when the matching
`Reply` comes back. Calls are correlated by a per-stub counter.

The hosting process answers priority methods straight from its receive loop
and runs everything else, in order, on a single background thread.
"""

import concurrent.futures
import dataclasses
import functools
import itertools
import multiprocessing
import os
import threading
from contextlib import AbstractContextManager
from multiprocessing import connection
from typing import Any, Callable, Dict, List, Optional

from absl import logging

from corridor_opt.distributed import worker

# Spawned rather than forked: the parent runs reader threads.
_CONTEXT = multiprocessing.get_context('spawn')

_JOIN_TIMEOUT_S = 10.0


@dataclasses.dataclass(frozen=True)
class Call:
  msgid: int
  method: str
  args: tuple
  kwargs: dict
  urgent: bool


@dataclasses.dataclass(frozen=True)
class Reply:
  msgid: int
  ok: bool
  value: Any


def _serve(pipe: connection.Connection, worker_class: 'type[worker.Worker]',
           args: tuple, kwargs: dict):
  """Hosting process entry point; returns when the parent sends None."""
  try:
    obj = worker_class(*args, **kwargs)
  except Exception as e:
    logging.error('cannot construct %s: %s', worker_class.__name__, e)
    raise
  executor = concurrent.futures.ThreadPoolExecutor(max_workers=1)
  send_lock = threading.Lock()

  def answer(msgid: int, fn: Callable[[], Any]):
    try:
      reply = Reply(msgid, True, fn())
    except Exception as e:  # pylint: disable=broad-except
      reply = Reply(msgid, False, e)
    with send_lock:
      pipe.send(reply)

  while (call := pipe.recv()) is not None:
    fn = functools.partial(
        getattr(obj, call.method), *call.args, **call.kwargs)
    if call.urgent:
      answer(call.msgid, fn)
    else:
      executor.submit(answer, call.msgid, fn)
  executor.shutdown(wait=True)


class WorkerStub:
  """Parent-side handle of one hosted worker."""

  def __init__(self, worker_class: 'type[worker.Worker]', *args, **kwargs):
    self._worker_class = worker_class
    self._pipe, child = _CONTEXT.Pipe()
    self._process = _CONTEXT.Process(
        target=_serve, args=(child, worker_class, args, kwargs), daemon=True)
    # msgid -> future; None once the hosting process is gone.
    self._pending: Optional[Dict[int, concurrent.futures.Future]] = {}
    self._lock = threading.Lock()
    self._msgids = itertools.count()
    self._process.start()
    # Only the child may hold this end, so its exit surfaces as EOF here.
    child.close()
    self._reader = threading.Thread(target=self._read_replies, daemon=True)
    self._reader.start()

  def _read_replies(self):
    while True:
      try:
        reply: Reply = self._pipe.recv()
      except (EOFError, OSError):
        break
      with self._lock:
        future = self._pending.pop(reply.msgid)
      # Resolved without the lock: done-callbacks may issue new calls.
      if reply.ok:
        future.set_result(reply.value)
      else:
        future.set_exception(reply.value)
    with self._lock:
      orphans, self._pending = self._pending, None
    for future in orphans.values():
      future.set_exception(concurrent.futures.CancelledError())
    logging.info('%s worker (pid %s) stopped', self._worker_class.__name__,
                 self._process.pid)

  @property
  def stopped(self) -> bool:
    return self._pending is None

  def call(self, method: str, *args, **kwargs) -> concurrent.futures.Future:
    future = concurrent.futures.Future()
    with self._lock:
      if self._pending is None:
        future.set_exception(concurrent.futures.CancelledError())
        return future
      msgid = next(self._msgids)
      self._pending[msgid] = future
      try:
        self._pipe.send(
            Call(msgid, method, args, kwargs,
                 self._worker_class.is_priority_method(method)))
      except (BrokenPipeError, OSError):
        del self._pending[msgid]
        future.set_exception(concurrent.futures.CancelledError())
    return future

  def __getattr__(self, name: str) -> Callable[..., concurrent.futures.Future]:
    if name.startswith('_') or not callable(
        getattr(self._worker_class, name, None)):
      raise AttributeError(
          f'{self._worker_class.__name__} has no public method {name}')
    return functools.partial(self.call, name)

  def __dir__(self):
    return [n for n in dir(self._worker_class) if not n.startswith('_')]

  def shutdown(self, timeout: float = _JOIN_TIMEOUT_S):
    """Lets queued calls finish, then stops the hosting process."""
    try:
      self._pipe.send(None)
    except (BrokenPipeError, OSError):
      pass
    self._process.join(timeout)
    if self._process.is_alive():
      logging.warning('killing unresponsive worker (pid %s)',
                      self._process.pid)
      self._process.kill()
      self._process.join()
    self._reader.join()
    self._pipe.close()

  def kill(self):
    self._process.kill()


class LocalWorkerPoolManager(AbstractContextManager):
  """`count` workers of `worker_class`, each hosted in its own process."""

  def __init__(self, worker_class: 'type[worker.Worker]', count: Optional[int],
               *args, **kwargs):
    count = count or os.cpu_count() or 1
    kwargs = worker.get_full_worker_args(worker_class, kwargs)
    logging.info('starting %d %s workers', count, worker_class.__name__)
    self._stubs = [
        WorkerStub(worker_class, *args, **kwargs) for _ in range(count)
    ]

  def __enter__(self) -> worker.FixedWorkerPool:
    return worker.FixedWorkerPool(workers=self.stubs, worker_concurrency=2)

  def __exit__(self, *unused):
    for stub in self._stubs:
      stub.shutdown()

  @property
  def stubs(self) -> List[WorkerStub]:
    return list(self._stubs)
