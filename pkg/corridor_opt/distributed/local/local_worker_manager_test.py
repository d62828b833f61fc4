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
"""Tests for corridor_opt.distributed.local.local_worker_manager."""

import concurrent.futures
import time

from absl.testing import absltest

from corridor_opt.distributed import buffered_scheduler
from corridor_opt.distributed import worker
from corridor_opt.distributed.local import local_worker_manager


class Tally(worker.Worker):
  """Keeps a running total; `peek` jumps the queue."""

  def __init__(self, start: int = 0):
    self._total = start

  @classmethod
  def is_priority_method(cls, method_name: str) -> bool:
    return method_name == 'peek'

  def peek(self) -> str:
    return f'total {self._total}'

  def add(self, amount: int) -> int:
    self._total += amount
    return self._total

  def reject(self, volume: float):
    raise ValueError(f'volume must be > 0, got {volume}')


class NeedsArgument(worker.Worker):

  def __init__(self, required):
    self._required = required

  def value(self):
    return self._required


class Sleeper(worker.Worker):

  def nap(self):
    time.sleep(3600)


class LocalWorkerManagerTest(absltest.TestCase):

  def test_calls_are_routed_per_worker(self):
    with local_worker_manager.LocalWorkerPoolManager(Tally, 2,
                                                     start=10) as pool:
      first, second = pool.get_currently_active()
      done, not_done = concurrent.futures.wait([first.add(1), second.add(2)])
      self.assertLen(done, 2)
      self.assertEmpty(not_done)
      self.assertEqual(first.add(0).result(), 11)
      self.assertEqual(second.add(0).result(), 12)
      self.assertEqual(first.peek().result(), 'total 11')
      # An idle pause must not disturb the reader threads.
      time.sleep(1)
      self.assertEqual(second.peek().result(), 'total 12')

  def test_worker_exception_is_forwarded(self):
    with local_worker_manager.LocalWorkerPoolManager(Tally, 1) as pool:
      future = pool.get_currently_active()[0].reject(-1.0)
      with self.assertRaisesRegex(ValueError, 'volume must be > 0'):
        future.result()

  def test_unknown_method(self):
    with local_worker_manager.LocalWorkerPoolManager(Tally, 1) as pool:
      with self.assertRaises(AttributeError):
        _ = pool.get_currently_active()[0].no_such_method

  def test_constructor_failure_cancels_calls(self):
    with local_worker_manager.LocalWorkerPoolManager(NeedsArgument,
                                                     1) as pool:
      with self.assertRaises(concurrent.futures.CancelledError):
        pool.get_currently_active()[0].value().result()

  def test_killed_worker_cancels_pending_calls(self):
    manager = local_worker_manager.LocalWorkerPoolManager(Sleeper, 1)
    with manager as pool:
      stub = pool.get_currently_active()[0]
      future = stub.nap()
      self.assertFalse(future.done())
      stub.kill()
      with self.assertRaises(concurrent.futures.CancelledError):
        future.result()
      self.assertTrue(stub.stopped)
      with self.assertRaises(concurrent.futures.CancelledError):
        stub.nap().result()

  def test_schedules_over_processes(self):
    with local_worker_manager.LocalWorkerPoolManager(Tally, 2) as pool:
      work = [lambda w, i=i: w.add(i) for i in range(1, 11)]
      futures = buffered_scheduler.schedule(
          work,
          pool.get_currently_active(),
          buffer=pool.get_worker_concurrency())
      self.assertEqual(worker.wait_for(futures), [None] * 10)
      totals = [w.add(0).result() for w in pool.get_currently_active()]
      self.assertEqual(sum(totals), sum(range(1, 11)))


if __name__ == '__main__':
  absltest.main()
