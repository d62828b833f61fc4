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
"""Pull-based dispatch of sweep cells onto a fixed set of workers.

Each worker starts with up to `buffer` cells in flight; whenever one of its
cells resolves, it pulls the next undispatched cell. Slow workers therefore
receive fewer cells.
"""

import concurrent.futures
import functools
import threading
from typing import Callable, List, Optional, Sequence, TypeVar

from corridor_opt.distributed import worker

T = TypeVar('T')

Job = Callable[[T], worker.WorkerFuture]


class _Dispatcher:
  """Hands out job indices and forwards worker results."""

  def __init__(self, work: Sequence[Job],
               results: List[concurrent.futures.Future]):
    self._work = work
    self._results = results
    self._remaining = iter(range(len(work)))
    self._lock = threading.Lock()

  def _claim(self) -> Optional[int]:
    with self._lock:
      return next(self._remaining, None)

  def feed(self, wkr: T):
    # Loops only past jobs that failed to dispatch.
    while (index := self._claim()) is not None:
      try:
        future = self._work[index](wkr)
      except Exception as e:  # pylint: disable=broad-except
        self._results[index].set_exception(e)
        continue
      future.add_done_callback(functools.partial(self._forward, wkr, index))
      return

  def _forward(self, wkr: T, index: int, done: worker.WorkerFuture):
    error = worker.get_exception(done)
    if error is None:
      self._results[index].set_result(done.result())
    else:
      self._results[index].set_exception(error)
    # Note: this runs in the thread resolving `done`; a job that blocks on
    # that same thread would deadlock.
    self.feed(wkr)


def schedule(work: Sequence[Job],
             workers: Sequence[T],
             buffer: int = 2) -> List[concurrent.futures.Future]:
  """Dispatches `work` over `workers`, keeping `buffer` jobs on each.

  Args:
    work: callables taking a worker and returning a future of its result.
    workers: the worker hosts; each job runs on exactly one of them.
    buffer: jobs kept in flight per worker.

  Returns:
    One future per job, in the order of `work`.
  """
  if buffer < 1:
    raise ValueError(f'buffer must be >= 1, got {buffer}')
  if work and not workers:
    raise ValueError('no workers to schedule on')
  results = [concurrent.futures.Future() for _ in work]
  dispatcher = _Dispatcher(work, results)
  if work:
    per_worker = min(buffer, -(-len(work) // len(workers)))
    for _ in range(per_worker):
      for wkr in workers:
        dispatcher.feed(wkr)
  return results
