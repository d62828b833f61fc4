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
"""What the sweep expects from a worker, and the pools that host workers.

A worker is a plain object whose public methods are invoked remotely: every
call returns a future instead of a value. Pools hand out the hosts of such
objects, either out of process (see `local.local_worker_manager`) or inline.
"""

import abc
import concurrent.futures
from typing import (Any, Callable, Dict, Iterable, List, Optional, Protocol,
                    TypeVar)

import gin


class Worker(Protocol):

  @classmethod
  def is_priority_method(cls, method_name: str) -> bool:
    """Priority methods are served ahead of any queued work."""
    del method_name
    return False


T = TypeVar('T')


class WorkerFuture(Protocol[T]):
  """The subset of `concurrent.futures.Future` the sweep relies on."""

  def result(self) -> T:
    raise NotImplementedError()

  def done(self) -> bool:
    raise NotImplementedError()

  def add_done_callback(self, fn: Callable[['WorkerFuture[T]'], Any]) -> None:
    raise NotImplementedError()


class WorkerPool(metaclass=abc.ABCMeta):
  """A set of worker hosts available to the sweep."""

  @abc.abstractmethod
  def get_currently_active(self) -> List[Any]:
    raise NotImplementedError()

  @abc.abstractmethod
  def get_worker_concurrency(self) -> int:
    """How many calls a single host can usefully have in flight."""
    raise NotImplementedError()


class FixedWorkerPool(WorkerPool):

  def __init__(self, workers: List[Any], worker_concurrency: int = 2):
    self._workers = workers
    self._worker_concurrency = worker_concurrency

  def get_currently_active(self):
    return self._workers

  def get_worker_concurrency(self):
    return self._worker_concurrency


class _InlineHost:
  """Runs a worker's methods synchronously, wrapping results in futures."""

  def __init__(self, obj: Any):
    self._obj = obj

  def __getattr__(self, name: str):
    if name.startswith('_'):
      raise AttributeError(name)
    method = getattr(self._obj, name)
    if not callable(method):
      raise AttributeError(f'{name} is not a method')

    def call(*args, **kwargs) -> concurrent.futures.Future:
      future = concurrent.futures.Future()
      try:
        future.set_result(method(*args, **kwargs))
      except Exception as e:  # pylint: disable=broad-except
        future.set_exception(e)
      return future

    return call


class InlineWorkerPool(FixedWorkerPool):
  """Hosts a single worker in the calling process.

  Used for single-worker sweeps and debugging: calls execute immediately and
  return already-resolved futures, so tracebacks stay in one process.
  """

  def __init__(self, worker_class: 'type[Worker]', *args, **kwargs):
    kwargs = get_full_worker_args(worker_class, kwargs)
    super().__init__([_InlineHost(worker_class(*args, **kwargs))],
                     worker_concurrency=1)

  def __enter__(self) -> WorkerPool:
    return self

  def __exit__(self, *unused):
    pass


def wait_for(futures: Iterable[WorkerFuture]) -> List[Optional[Exception]]:
  """Blocks until every future resolved; returns their exceptions in order."""
  futures = list(futures)
  for f in futures:
    try:
      f.result()
    except Exception:  # pylint: disable=broad-except
      pass
  return [get_exception(f) for f in futures]


def get_exception(worker_future: WorkerFuture) -> Optional[Exception]:
  assert worker_future.done()
  try:
    worker_future.result()
  except Exception as e:  # pylint: disable=broad-except
    return e
  return None


def get_full_worker_args(worker_class: 'type[Worker]',
                         current_kwargs: Dict[str, Any]) -> Dict[str, Any]:
  """Merges the gin bindings of `worker_class` over `current_kwargs`.

  Worker processes are spawned and do not inherit the parent's gin state, so
  the bindings travel as constructor arguments instead.
  """
  try:
    bindings = gin.get_bindings(worker_class)
  except ValueError:
    # Not registered with gin, as in tests.
    bindings = {}
  return {**current_kwargs, **bindings}
