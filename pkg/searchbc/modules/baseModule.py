from abc import abstractmethod
from dataclasses import dataclass
from logging import getLogger
from queue import Empty, Queue
from threading import Thread
from typing import Any, Generic, Optional, TypeVar

J = TypeVar('J')


@dataclass
class Status:
    running: bool = False
    completed: int = 0
    reason: str = 'Idle'


class BaseModule(Thread, Generic[J]):
    """Daemon thread that takes jobs off a shared queue until it is empty,
    terminated, or a job raises."""

    def __init__(self, jobs: "Queue[J]", name: Optional[str] = None) -> None:
        super().__init__(name=name or self.__class__.__name__, daemon=True)
        self._jobs = jobs
        self._log = getLogger(__name__)
        self._running = True
        self._status = Status()
        self._error: Optional[BaseException] = None

    @property
    def status(self) -> Status:
        return self._status

    @property
    def error(self) -> Optional[BaseException]:
        return self._error

    @abstractmethod
    def handle(self, job: J) -> Any:
        raise NotImplementedError

    def _drop_pending(self) -> None:
        while True:
            try:
                self._jobs.get_nowait()
            except Empty:
                return

    def run(self) -> None:
        self._log.debug(f'Starting: {self.name}')
        self._status.running = True
        while self._running:
            try:
                job = self._jobs.get_nowait()
            except Empty:
                break
            try:
                self.handle(job)
            except Exception as e:
                self._log.exception(f'{self.name} failed on job {job}')
                self._error = e
                self._status.reason = f'Failed: {e}'
                self._drop_pending()
                break
            self._status.completed += 1
        else:
            self._status.reason = 'Terminated'
        self._status.running = False
        if self._error is None and self._running:
            self._status.reason = 'Done'
        self._log.debug(f'{self.name}: {self._status.reason} after {self._status.completed} jobs')

    def terminate(self) -> None:
        self._running = False
