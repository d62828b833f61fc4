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
"""Tests for corridor_opt.distributed.buffered_scheduler."""

import collections
import concurrent.futures
import threading
import time

from absl.testing import absltest

from corridor_opt.distributed import buffered_scheduler
from corridor_opt.distributed import worker


class _TimedHost:
  """Completes each call on a timer thread after `delay` seconds."""

  def __init__(self, name: str, delay: float):
    self.name = name
    self._delay = delay
    self.calls = 0
    self._lock = threading.Lock()

  def run(self, value):
    future = concurrent.futures.Future()

    def finish():
      with self._lock:
        self.calls += 1
      future.set_result((self.name, value))

    threading.Timer(self._delay, finish).start()
    return future


def _cell(value):
  return lambda host: host.run(value)


class BufferedSchedulerTest(absltest.TestCase):

  def test_every_job_runs_once_in_order(self):
    hosts = [_TimedHost(f'w{i}', 0.05) for i in range(4)]
    futures = buffered_scheduler.schedule([_cell(v) for v in range(20)],
                                          hosts)
    self.assertEqual(worker.wait_for(futures), [None] * 20)
    self.assertEqual([f.result()[1] for f in futures], list(range(20)))
    self.assertEqual(sum(h.calls for h in hosts), 20)

  def test_slow_worker_gets_only_its_buffer(self):
    slow = _TimedHost('slow', 1.0)
    hosts = [slow] + [_TimedHost(f'w{i}', 0.05) for i in range(3)]
    futures = buffered_scheduler.schedule([_cell(v) for v in range(20)],
                                          hosts,
                                          buffer=2)
    worker.wait_for(futures)
    by_host = collections.Counter(f.result()[0] for f in futures)
    self.assertEqual(by_host['slow'], 2)
    self.assertEqual(sum(by_host.values()), 20)

  def test_failures_do_not_stop_the_sweep(self):
    host = _TimedHost('w', 0.01)

    def broken(unused_host):
      raise RuntimeError('cannot dispatch')

    def failing(unused_host):
      future = concurrent.futures.Future()
      future.set_exception(ValueError('cell failed'))
      return future

    work = [_cell(0), broken, failing, _cell(3)]
    futures = buffered_scheduler.schedule(work, [host], buffer=1)
    errors = worker.wait_for(futures)
    self.assertIsNone(errors[0])
    self.assertIsInstance(errors[1], RuntimeError)
    self.assertIsInstance(errors[2], ValueError)
    self.assertIsNone(errors[3])

  def test_empty_work(self):
    self.assertEqual(buffered_scheduler.schedule([], []), [])

  def test_rejects_bad_arguments(self):
    with self.assertRaises(ValueError):
      buffered_scheduler.schedule([_cell(0)], [])
    with self.assertRaises(ValueError):
      buffered_scheduler.schedule([_cell(0)], [_TimedHost('w', 0.0)],
                                  buffer=0)

  def test_faster_than_serial(self):
    hosts = [_TimedHost(f'w{i}', 0.2) for i in range(4)]
    start = time.monotonic()
    worker.wait_for(
        buffered_scheduler.schedule([_cell(v) for v in range(8)], hosts))
    self.assertLess(time.monotonic() - start, 8 * 0.2)


if __name__ == '__main__':
  absltest.main()
