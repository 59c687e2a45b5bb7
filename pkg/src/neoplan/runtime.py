"""Static-partition fork-join thread pool.

One worker per physical core by default (hyper-threads are not used).  The
scheduler thread is the single producer for every worker's task queue, and
each worker is the single consumer of its own queue.  A parallel region
splits an index range into N contiguous chunks, one per worker, and blocks
until all chunks complete.
"""

from __future__ import annotations

import logging
import os
import queue
import threading

import psutil

log = logging.getLogger(__name__)

_SHUTDOWN = object()


def physical_cores() -> int:
    n = psutil.cpu_count(logical=False)
    return n or psutil.cpu_count() or 1


def default_num_threads() -> int:
    env = os.environ.get("NEOPLAN_NUM_THREADS")
    if env:
        return max(1, int(env))
    return physical_cores()


class ThreadPool:
    """Fixed set of workers executing disjoint-range tasks.

    Tasks submitted in one parallel region must touch disjoint data; the
    join at the end of the region establishes happens-before back to the
    caller.
    """

    def __init__(self, num_workers: int | None = None):
        if num_workers is None:
            num_workers = default_num_threads()
        cores = physical_cores()
        if num_workers > cores:
            log.warning("requested %d workers on %d physical cores", num_workers, cores)
        self.num_workers = max(1, num_workers)
        self._queues = [queue.SimpleQueue() for _ in range(self.num_workers)]
        self._lock = threading.Lock()
        self._done = threading.Condition(self._lock)
        self._pending = 0
        self._errors: list[BaseException] = []
        self._closed = False
        self._workers = []
        for i in range(self.num_workers):
            t = threading.Thread(target=self._worker, args=(i,), daemon=True,
                                 name=f"neoplan-worker-{i}")
            t.start()
            self._workers.append(t)

    def _worker(self, idx: int):
        try:
            os.sched_setaffinity(0, {idx % physical_cores()})
        except (AttributeError, OSError):
            log.debug("core pinning unavailable for worker %d", idx)
        q = self._queues[idx]
        while True:
            task = q.get()
            if task is _SHUTDOWN:
                return
            fn, args = task
            try:
                fn(*args)
            except BaseException as e:  # surfaced to the caller after join
                with self._lock:
                    self._errors.append(e)
            finally:
                with self._done:
                    self._pending -= 1
                    if self._pending == 0:
                        self._done.notify_all()

    def run_tasks(self, tasks):
        """Run (fn, args) tuples, one per worker slot, and join.

        tasks longer than the worker count wrap around round-robin.
        """
        if self._closed:
            raise RuntimeError("pool is closed")
        tasks = list(tasks)
        if not tasks:
            return
        with self._done:
            self._pending += len(tasks)
        for i, task in enumerate(tasks):
            self._queues[i % self.num_workers].put(task)
        with self._done:
            while self._pending:
                self._done.wait()
            errors, self._errors = self._errors, []
        if errors:
            raise errors[0]

    def close(self):
        if self._closed:
            return
        self._closed = True
        for q in self._queues:
            q.put(_SHUTDOWN)
        for t in self._workers:
            t.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def split_ranges(n_items: int, n_parts: int) -> list[tuple[int, int]]:
    """Contiguous ranges of size ceil(n/N); trailing ranges may be empty."""
    chunk = -(-n_items // n_parts) if n_items else 0
    out = []
    for i in range(n_parts):
        lo = min(i * chunk, n_items)
        hi = min(lo + chunk, n_items)
        out.append((lo, hi))
    return out


def parallel_for(pool: ThreadPool, n_items: int, body) -> None:
    """Run body(start, stop) over an even static partition of [0, n_items)."""
    ranges = split_ranges(n_items, pool.num_workers)
    tasks = [(body, (lo, hi)) for lo, hi in ranges if hi > lo]
    if len(tasks) <= 1:
        # nothing to fan out; run inline to avoid handoff latency
        for fn, args in tasks:
            fn(*args)
        return
    pool.run_tasks(tasks)
