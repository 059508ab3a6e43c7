from dataclasses import dataclass, field
from typing import Any, Optional

from ..env.gridnav import GridConfig
from ..search.controller import TRIGGERS, SearchEvent
from ..search.encoders import EncoderConfig

# nominal duration of one environment step, seconds
STEP_SECONDS = 0.05


@dataclass(frozen=True)
class SuiteParams:
    grid: GridConfig = field(default_factory=GridConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    seeds: tuple[int, ...] = tuple(range(20))
    episodes: int = 10
    success_steps: int = 100
    score_window: int = 16
    jobs: int = 1
    stop_on_success: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("a suite needs at least one seed")
        if self.episodes < 1 or self.success_steps < 1 or self.score_window < 1 or self.jobs < 1:
            raise ValueError("episodes, success_steps, score_window and jobs must be >= 1")


@dataclass
class EpisodeResult:
    seed: int
    episode: int
    success: bool
    steps_to_success: Optional[int]
    total_steps: int
    search_events: list[SearchEvent] = field(default_factory=list)
    per_step_in_goal: list[bool] = field(default_factory=list)
    mean_window_score: Optional[float] = None
    actions_copied: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (self.seed, self.episode)

    def to_report(self) -> dict[str, Any]:
        return {
            'seed': self.seed,
            'episode': self.episode,
            'success': self.success,
            'steps_to_success': self.steps_to_success,
            'total_steps': self.total_steps,
            'searches': len(self.search_events),
            'mean_window_score': self.mean_window_score,
        }


@dataclass
class SeedBreakdown:
    seed: int
    episodes: int
    successes: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes

    def to_report(self) -> dict[str, Any]:
        return {'seed': self.seed, 'episodes': self.episodes,
                'successes': self.successes, 'success_rate': self.success_rate}


@dataclass
class SearchStats:
    total: int = 0
    episodes: int = 0
    trigger_histogram: dict[str, int] = field(default_factory=lambda: {t: 0 for t in TRIGGERS})
    goal_searches: Optional[int] = None
    actions_copied: int = 0

    @property
    def mean_per_episode(self) -> float:
        return self.total / self.episodes if self.episodes else 0.0

    @property
    def goal_search_fraction(self) -> Optional[float]:
        if self.goal_searches is None or self.total == 0:
            return None
        return self.goal_searches / self.total

    @property
    def mean_follow_length(self) -> Optional[float]:
        return self.actions_copied / self.total if self.total else None

    def to_report(self) -> dict[str, Any]:
        return {
            'total': self.total,
            'mean_per_episode': self.mean_per_episode,
            'trigger_histogram': dict(self.trigger_histogram),
            'goal_search_fraction': self.goal_search_fraction,
            'mean_follow_length': self.mean_follow_length,
        }


@dataclass
class SuiteResult:
    policy: str
    episodes: list[EpisodeResult]
    per_seed: list[SeedBreakdown]
    searches: SearchStats
    completion_steps_mean: Optional[float]
    completion_steps_std: Optional[float]
    mean_window_score: Optional[float]
    index_build_ms: Optional[float] = None
    div_threshold: Optional[float] = None

    @property
    def successes(self) -> int:
        return sum(1 for e in self.episodes if e.success)

    @property
    def success_rate(self) -> float:
        return self.successes / len(self.episodes) if self.episodes else 0.0

    def to_report(self, include_timing: bool = True, include_episodes: bool = True) -> dict[str, Any]:
        report: dict[str, Any] = {
            'policy': self.policy,
            'episodes': len(self.episodes),
            'successes': self.successes,
            'success_rate': self.success_rate,
            'completion': {
                'steps_mean': self.completion_steps_mean,
                'steps_std': self.completion_steps_std,
                'seconds_mean': None if self.completion_steps_mean is None
                else self.completion_steps_mean * STEP_SECONDS,
            },
            'per_seed': [s.to_report() for s in self.per_seed],
            'searches': self.searches.to_report(),
            'mean_window_score': self.mean_window_score,
            'div_threshold': self.div_threshold,
        }
        if include_episodes:
            report['episode_results'] = [e.to_report() for e in self.episodes]
        if include_timing and self.index_build_ms is not None:
            report['timing'] = {'index_build_ms': self.index_build_ms}
        return report


@dataclass
class AblationResult:
    results: dict[int, SuiteResult]
    build_ms: dict[int, float] = field(default_factory=dict)
    frame_counts: dict[int, int] = field(default_factory=dict)
    run_success_rates: dict[int, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        counts = list(self.results)
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError(f"demo counts must be strictly increasing, got {counts}")

    @property
    def counts(self) -> list[int]:
        return list(self.results)

    def to_report(self, include_timing: bool = True) -> dict[str, Any]:
        entries: dict[str, Any] = {}
        for count, result in self.results.items():
            entry = result.to_report(include_timing=False, include_episodes=False)
            entry['frames'] = self.frame_counts.get(count)
            rates = self.run_success_rates.get(count, [result.success_rate])
            entry['runs'] = {
                'success_rates': rates,
                'mean': sum(rates) / len(rates),
                'std': (sum((r - sum(rates) / len(rates)) ** 2 for r in rates) / len(rates)) ** 0.5,
            }
            if include_timing and count in self.build_ms:
                entry['timing'] = {'index_build_ms': self.build_ms[count]}
            entries[str(count)] = entry
        return {'counts': self.counts, 'results': entries}
