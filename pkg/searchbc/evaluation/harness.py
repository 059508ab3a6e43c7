import time
from abc import abstractmethod
from collections import Counter
from dataclasses import replace
from logging import getLogger
from typing import Any, Callable, Optional, Sequence

import numpy as np
import numpy.typing as npt

from ..demos.types import (ActionRecord, ActionSchema, DemoSet, Embedding,
                           derive_seed, make_generator, subset)
from ..env.gridnav import (EVAL_SALT, GridConfig, GridState,
                           env_step, expert_policy, generate_world, grid_action,
                           observe)
from ..modules.worker import run_keyed
from ..search.controller import (Controller, ControllerConfig, SearchEvent,
                                 StepOutput)
from ..search.encoders import Encoder, make_encoder
from ..search.index import LatentIndex, build_index, calibrate_threshold
from .types import (AblationResult, EpisodeResult, SearchStats, SeedBreakdown,
                    SuiteParams, SuiteResult)

BASELINE_KINDS: tuple[str, ...] = ('random', 'majority', 'expert')
SLIDING_WINDOW = 16

ScoreFn = Callable[[GridState, GridConfig], float]
WindowFn = Callable[[npt.NDArray[np.float64]], float]

_log = getLogger(__name__)


class HarnessError(Exception):
    pass


def consecutive_detector(labels: Sequence[bool], k: int) -> tuple[bool, Optional[int]]:
    """Index of the k-th label of the earliest run of k consecutive trues."""
    if k < 1:
        raise HarnessError(f"K must be >= 1, got {k}")
    run = 0
    for i, label in enumerate(labels):
        run = run + 1 if label else 0
        if run == k:
            return True, i
    return False, None


def sliding_score(scores: Sequence[float], window: int = SLIDING_WINDOW,
                  window_fn: Optional[WindowFn] = None) -> float:
    """Mean over every contiguous window of window_fn(window); window_fn
    defaults to the window mean."""
    if window < 1:
        raise HarnessError(f"window must be >= 1, got {window}")
    values = np.asarray(scores, dtype=np.float64)
    if values.size < window:
        raise HarnessError(f"{values.size} scores is shorter than window {window}")
    if window_fn is None:
        if np.all(values == values[0]):
            return float(values[0])
        return float(np.lib.stride_tricks.sliding_window_view(values, window).mean(axis=1).mean())
    windows = np.lib.stride_tricks.sliding_window_view(values, window)
    return float(np.mean([window_fn(w) for w in windows]))


def proximity_score(state: GridState, config: GridConfig) -> float:
    """1 in the goal, falling linearly with BFS distance to it."""
    x, y = state.position
    distance = int(state.goal_distance[y, x])
    if distance < 0:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - distance / (2 * config.size))))


class Policy:
    name: str = 'policy'

    def reset(self) -> None:
        pass

    @abstractmethod
    def act(self, state: GridState, config: GridConfig, embedding: Embedding) -> StepOutput:
        raise NotImplementedError


class SearchPolicy(Policy):
    name = 'sbc'

    def __init__(self, index: LatentIndex, config: ControllerConfig) -> None:
        self.controller = Controller(index, config)

    def reset(self) -> None:
        self.controller.reset()

    def act(self, state: GridState, config: GridConfig, embedding: Embedding) -> StepOutput:
        return self.controller.step(embedding)


class ExpertPolicy(Policy):
    name = 'expert'

    def __init__(self, noise_eps: float = 0.0, seed: int = 0) -> None:
        self.noise_eps = noise_eps
        self.seed = seed

    def act(self, state: GridState, config: GridConfig, embedding: Embedding) -> StepOutput:
        return StepOutput(action=expert_policy(state, config, self.noise_eps, self.seed))


class RandomPolicy(Policy):
    name = 'random'

    def __init__(self, vocabulary: Sequence[ActionRecord], seed: int) -> None:
        if not vocabulary:
            raise HarnessError("random policy needs at least one action")
        self.vocabulary = list(vocabulary)
        self.seed = seed
        self.reset()

    def reset(self) -> None:
        self._rng = make_generator(self.seed)

    def act(self, state: GridState, config: GridConfig, embedding: Embedding) -> StepOutput:
        return StepOutput(action=self.vocabulary[int(self._rng.integers(len(self.vocabulary)))])


class MajorityPolicy(Policy):
    name = 'majority'

    def __init__(self, action: ActionRecord) -> None:
        self.action = action

    def act(self, state: GridState, config: GridConfig, embedding: Embedding) -> StepOutput:
        return StepOutput(action=self.action)


def action_vocabulary(schema: ActionSchema, demos: Optional[DemoSet] = None) -> list[ActionRecord]:
    """Valid actions in canonical order: first appearance in (traj_id, offset)
    order when demos are given, else the one-hot records of an all-boolean
    schema."""
    if demos is not None and demos.trajectories:
        seen: dict[ActionRecord, None] = {}
        for trajectory in sorted(demos.trajectories, key=lambda t: t.id):
            for action in trajectory.actions:
                seen.setdefault(action, None)
        return list(seen)
    if all(e.kind == 'boolean' for e in schema.entries) and schema.entries:
        return [ActionRecord(tuple((e.name, e.name == on.name) for e in schema.entries))
                for on in schema.entries]
    raise HarnessError("a schema with real controls needs demos to define its action vocabulary")


def majority_action(demos: DemoSet) -> ActionRecord:
    if not demos.trajectories or demos.frame_count == 0:
        raise HarnessError("majority baseline needs demos")
    counts: Counter[ActionRecord] = Counter()
    for trajectory in demos.trajectories:
        counts.update(trajectory.actions)
    order = action_vocabulary(demos.schema, demos)
    return max(order, key=lambda a: (counts[a], -order.index(a)))


def baseline_policy(kind: str, schema: ActionSchema, demos: Optional[DemoSet] = None,
                    seed: int = 0) -> Policy:
    match kind:
        case 'random':
            return RandomPolicy(action_vocabulary(schema, demos), seed)
        case 'majority':
            if demos is None:
                raise HarnessError("majority baseline needs demos")
            return MajorityPolicy(majority_action(demos))
        case 'expert':
            return ExpertPolicy(0.0, seed)
        case _:
            raise HarnessError(f"unknown baseline {kind!r}; valid kinds: {', '.join(BASELINE_KINDS)}")


def run_episode(config: GridConfig, policy: Policy, encoder: Encoder, success_steps: int = 100,
                max_episode_steps: Optional[int] = None, score_fn: ScoreFn = proximity_score,
                score_window: int = SLIDING_WINDOW, stop_on_success: bool = True,
                episode: int = 0, world: Optional[GridState] = None) -> EpisodeResult:
    """observe -> encode -> policy -> env_step until the success run completes
    (or the cap, when stop_on_success is off). Steps without an action are
    played as 'stay'. `world` replaces the world generated from config."""
    cap = max_episode_steps or config.max_episode_steps
    config = replace(config, max_episode_steps=cap)
    if encoder.input_dim != config.observation_length:
        raise HarnessError(f"encoder expects {encoder.input_dim} inputs, observations have {config.observation_length}")

    state = replace(world, steps=0, max_steps=cap) if world is not None else generate_world(config)
    encoder.reset_history()
    policy.reset()
    obs = observe(state, config)
    labels: list[bool] = []
    scores: list[float] = []
    events: list[SearchEvent] = []
    copied = 0
    run = 0
    stay = grid_action('stay')
    while not state.done:
        output = policy.act(state, config, encoder.encode(obs))
        if output.event is not None:
            events.append(output.event)
        if output.action is not None:
            copied += 1
        state, obs, in_goal = env_step(state, config, output.action or stay)
        labels.append(in_goal)
        scores.append(score_fn(state, config))
        run = run + 1 if in_goal else 0
        if stop_on_success and run >= success_steps:
            break

    success, first = consecutive_detector(labels, success_steps)
    steps_to_success = first + 1 if first is not None else None
    mean_score = sliding_score(scores, score_window) if len(scores) >= score_window else None
    _log.debug(f'Episode seed={config.seed} policy={policy.name}: success={success} '
               f'steps={len(labels)} searches={len(events)}')
    return EpisodeResult(
        seed=config.seed,
        episode=episode,
        success=success,
        steps_to_success=steps_to_success,
        total_steps=len(labels),
        search_events=events,
        per_step_in_goal=labels,
        mean_window_score=mean_score,
        actions_copied=copied
    )


def episode_world(base: GridConfig, seed: int, episode: int) -> GridConfig:
    return base.with_seed(derive_seed(seed, episode, EVAL_SALT))


def summarize(policy: str, results: list[EpisodeResult],
              goal_labels: Optional[dict[int, list[bool]]] = None) -> SuiteResult:
    per_seed: dict[int, SeedBreakdown] = {}
    stats = SearchStats(episodes=len(results), goal_searches=0 if goal_labels is not None else None)
    completions: list[int] = []
    window_scores: list[float] = []
    for result in results:
        breakdown = per_seed.setdefault(result.seed, SeedBreakdown(result.seed, 0, 0))
        breakdown.episodes += 1
        if result.success:
            breakdown.successes += 1
            completions.append(result.steps_to_success or 0)
        if result.mean_window_score is not None:
            window_scores.append(result.mean_window_score)
        stats.total += len(result.search_events)
        if result.search_events:
            stats.actions_copied += result.actions_copied
        for event in result.search_events:
            stats.trigger_histogram[event.trigger] += 1
            if goal_labels is not None and stats.goal_searches is not None:
                stats.goal_searches += int(goal_labels[event.chosen.traj_id][event.chosen.offset])

    return SuiteResult(
        policy=policy,
        episodes=results,
        per_seed=[per_seed[s] for s in sorted(per_seed)],
        searches=stats,
        completion_steps_mean=float(np.mean(completions)) if completions else None,
        completion_steps_std=float(np.std(completions)) if completions else None,
        mean_window_score=float(np.mean(window_scores)) if window_scores else None,
    )


def run_suite(params: SuiteParams, policy_factory: Callable[[int], Policy],
              goal_labels: Optional[dict[int, list[bool]]] = None,
              on_episode: Optional[Callable[[EpisodeResult], Any]] = None,
              name: Optional[str] = None) -> SuiteResult:
    """seeds x episodes independent episodes, each with a fresh policy and
    encoder, reduced in (seed, episode) order."""
    keys = [(seed, episode) for seed in params.seeds for episode in range(params.episodes)]

    def play(key: tuple[int, int]) -> EpisodeResult:
        seed, episode = key
        world = episode_world(params.grid, seed, episode)
        result = run_episode(
            world,
            policy_factory(derive_seed(seed, episode)),
            make_encoder(params.encoder, params.grid.observation_length),
            params.success_steps,
            params.grid.max_episode_steps,
            score_window=params.score_window,
            stop_on_success=params.stop_on_success,
            episode=episode
        )
        result.seed = seed
        return result

    started = time.perf_counter()
    results = run_keyed(keys, play, params.jobs, on_episode)
    suite = summarize(name or policy_factory(0).name, list(results.values()), goal_labels)
    _log.info(f'Suite {suite.policy}: {suite.successes}/{len(suite.episodes)} successes '
              f'in {time.perf_counter() - started:.1f}s')
    return suite


def timed_build(demos: DemoSet) -> tuple[LatentIndex, float]:
    started = time.perf_counter()
    index = build_index(demos)
    return index, (time.perf_counter() - started) * 1000


def resolve_threshold(demos: DemoSet, controller: ControllerConfig, quantile: Optional[float]) -> ControllerConfig:
    if quantile is None:
        return controller
    return replace(controller, div_threshold=calibrate_threshold(demos, quantile))


def run_sbc_suite(demos: DemoSet, params: SuiteParams, controller: ControllerConfig,
                  quantile: Optional[float] = None, goal_labels: Optional[dict[int, list[bool]]] = None,
                  on_episode: Optional[Callable[[EpisodeResult], Any]] = None) -> SuiteResult:
    index, build_ms = timed_build(demos)
    config = resolve_threshold(demos, controller, quantile)
    suite = run_suite(params, lambda _: SearchPolicy(index, config), goal_labels, on_episode, 'sbc')
    suite.index_build_ms = build_ms
    suite.div_threshold = config.div_threshold
    return suite


def run_ablation(demos: DemoSet, counts: Sequence[int], params: SuiteParams, controller: ControllerConfig,
                 quantile: Optional[float] = 0.95, runs: int = 1,
                 goal_labels: Optional[dict[int, list[bool]]] = None,
                 on_episode: Optional[Callable[[EpisodeResult], Any]] = None) -> AblationResult:
    """Run 0 of each count uses the leading prefix; extra runs use random
    subsets seeded 1..runs-1."""
    counts = list(counts)
    if not counts:
        raise HarnessError("ablation needs at least one count")
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise HarnessError(f"counts must be strictly increasing, got {counts}")
    if counts[-1] > len(demos.trajectories):
        raise HarnessError(f"count exceeds demos: {counts[-1]} > {len(demos.trajectories)}")
    if runs < 1:
        raise HarnessError("runs must be >= 1")

    results: dict[int, SuiteResult] = {}
    build_ms: dict[int, float] = {}
    frames: dict[int, int] = {}
    rates: dict[int, list[float]] = {}
    for count in counts:
        for run in range(runs):
            chosen = subset(demos, count, run)
            suite = run_sbc_suite(chosen, params, controller, quantile, goal_labels, on_episode)
            rates.setdefault(count, []).append(suite.success_rate)
            if run == 0:
                results[count] = suite
                build_ms[count] = suite.index_build_ms or 0.0
                frames[count] = chosen.frame_count
            _log.info(f'Ablation count={count} run={run}: success_rate={suite.success_rate:.3f}')
    return AblationResult(results, build_ms, frames, rates)


def policy_factory_for(kind: str, demos: Optional[DemoSet], schema: ActionSchema,
                       seed: int = 0) -> Callable[[int], Policy]:
    if kind not in BASELINE_KINDS:
        raise HarnessError(f"unknown baseline {kind!r}; valid kinds: {', '.join(BASELINE_KINDS)}")
    if kind == 'majority':
        policy = baseline_policy(kind, schema, demos)
        return lambda _: policy
    return lambda episode_seed: baseline_policy(kind, schema, None, derive_seed(seed, episode_seed))
