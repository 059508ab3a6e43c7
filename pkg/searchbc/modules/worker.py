from queue import Queue
from threading import Lock
from typing import Any, Callable, Optional, TypeVar

from .baseModule import BaseModule

K = TypeVar('K')
R = TypeVar('R')


class Worker(BaseModule[K]):
    """Stores each job's result under its key in a dict shared with the other workers."""

    def __init__(self, jobs: "Queue[K]", runner: Callable[[K], Any],
                 results: dict[K, Any], lock: Lock, name: str) -> None:
        super().__init__(jobs, name)
        self._runner = runner
        self._results = results
        self._lock = lock
        self.update_able: list[Callable[[Any], Any]] = []

    def on_result(self, method: Callable[[Any], Any]) -> None:
        self.update_able.append(method)

    def handle(self, job: K) -> None:
        result = self._runner(job)
        with self._lock:
            self._results[job] = result
        for method in self.update_able:
            method(result)


def run_keyed(keys: list[K], runner: Callable[[K], R], jobs: int = 1,
              on_result: Optional[Callable[[R], Any]] = None) -> dict[K, R]:
    """Run every key through runner on `jobs` workers; the result dict is
    returned in sorted key order whatever the completion order was."""
    queue: "Queue[K]" = Queue()
    for key in keys:
        queue.put(key)
    results: dict[K, R] = {}
    lock = Lock()
    count = max(1, min(jobs, len(keys)))
    workers = [Worker(queue, runner, results, lock, f'EpisodeWorker-{i}') for i in range(count)]
    for worker in workers:
        if on_result:
            worker.on_result(on_result)
        worker.start()
    for worker in workers:
        worker.join()
    for worker in workers:
        if worker.error is not None:
            raise worker.error
    return {key: results[key] for key in sorted(results)}  # type: ignore[type-var]
