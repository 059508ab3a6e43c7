import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import Literal, Optional

from ..demos.types import ActionRecord, Embedding, SituationRef, as_embedding
from .index import DimensionMismatch, EmptyIndexError, LatentIndex, l1_distance

Phase = Literal['warming', 'searching', 'following']
Trigger = Literal['initial', 'divergence', 'time', 'end_of_trajectory']
TRIGGERS: tuple[Trigger, ...] = ('initial', 'divergence', 'time', 'end_of_trajectory')


class ControllerConfigError(Exception):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    warmup: int = 0
    max_steps: int = 100
    div_threshold: float = 0.0

    def __post_init__(self):
        if self.warmup < 0:
            raise ControllerConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.max_steps < 1:
            raise ControllerConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if not math.isfinite(self.div_threshold) or self.div_threshold < 0:
            raise ControllerConfigError(f"div_threshold must be >= 0, got {self.div_threshold}")


@dataclass
class ControllerState:
    step_count: int = 0
    phase: Phase = 'searching'
    current_ref: Optional[SituationRef] = None
    steps_followed: int = 0
    last_distance: Optional[float] = None


@dataclass(frozen=True)
class SearchEvent:
    step: int
    trigger: Trigger
    chosen: SituationRef
    distance_at_trigger: Optional[float]
    distance_of_chosen: float


@dataclass(frozen=True)
class StepOutput:
    action: Optional[ActionRecord] = None
    event: Optional[SearchEvent] = None
    distance: Optional[float] = None


@dataclass
class Controller:
    """Search, copy, and re-search on divergence or timeout over a fixed index."""
    index: LatentIndex
    config: ControllerConfig
    state: ControllerState = field(init=False)
    _events: list[SearchEvent] = field(init=False, default_factory=list)

    def __post_init__(self):
        if self.index.size == 0:
            raise EmptyIndexError("controller needs a nonempty index")
        self._log = getLogger(__name__)
        self.reset()

    def reset(self) -> None:
        self.state = ControllerState(phase='warming' if self.config.warmup > 0 else 'searching')
        self._events = []

    @property
    def event_log(self) -> list[SearchEvent]:
        return list(self._events)

    def step(self, embed: Embedding) -> StepOutput:
        embed = as_embedding(embed)
        if embed.shape[0] != self.index.dimension:
            raise DimensionMismatch(f"embedding has dimension {embed.shape[0]}, index has {self.index.dimension}")
        state = self.state

        if state.step_count < self.config.warmup:
            state.step_count += 1
            state.phase = 'warming' if state.step_count < self.config.warmup else 'searching'
            return StepOutput()

        trigger: Optional[Trigger] = None
        distance: Optional[float] = None
        ref = state.current_ref
        if state.phase == 'searching' or ref is None:
            trigger = 'initial'
        elif state.steps_followed >= self.config.max_steps:
            trigger = 'time'
        elif not self.index.contains(ref):
            trigger = 'end_of_trajectory'
        else:
            distance = l1_distance(embed, self.index.embedding_at(ref))
            if distance > self.config.div_threshold:
                trigger = 'divergence'

        event: Optional[SearchEvent] = None
        if trigger is not None:
            result = self.index.nearest(embed)
            event = SearchEvent(
                step=state.step_count,
                trigger=trigger,
                chosen=result.ref,
                distance_at_trigger=distance,
                distance_of_chosen=result.distance
            )
            self._events.append(event)
            self._log.debug(f'Search at step {event.step}: {trigger} -> '
                            f'({result.ref.traj_id}, {result.ref.offset}) d={result.distance:.6g}')
            if distance is None:
                distance = result.distance
            state.current_ref = result.ref
            state.steps_followed = 0

        assert state.current_ref is not None
        action = self.index.action_at(state.current_ref)
        state.current_ref = state.current_ref.advanced()
        state.steps_followed += 1
        state.step_count += 1
        state.phase = 'following'
        state.last_distance = distance
        return StepOutput(action=action, event=event, distance=distance)


def new_controller(index: LatentIndex, config: ControllerConfig) -> Controller:
    return Controller(index, config)


def controller_step(controller: Controller, embed: Embedding) -> StepOutput:
    return controller.step(embed)


def reset(controller: Controller) -> None:
    controller.reset()


def event_log(controller: Controller) -> list[SearchEvent]:
    return controller.event_log
