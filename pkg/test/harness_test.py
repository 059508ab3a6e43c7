import os
from dataclasses import replace
from unittest import TestCase, skipUnless

import numpy as np

from searchbc.demos.codec import decode, encode
from searchbc.demos.types import (DemoSet, Trajectory, TrajectoryID,
                                  make_generator)
from searchbc.env.gridnav import (FREE, GOAL, GRID_SCHEMA, OBSTACLE, TASKS,
                                  ExpertEpisode, GridConfig, action_move,
                                  build_state, generate_demos, grid_action,
                                  hold_labels)
from searchbc.evaluation.harness import (ExpertPolicy, HarnessError,
                                         MajorityPolicy, RandomPolicy,
                                         SearchPolicy, baseline_policy,
                                         consecutive_detector, episode_world,
                                         majority_action, policy_factory_for,
                                         run_ablation, run_episode,
                                         run_sbc_suite, run_suite,
                                         sliding_score)
from searchbc.evaluation.report import render
from searchbc.evaluation.types import SuiteParams
from searchbc.search.controller import ControllerConfig
from searchbc.search.encoders import EncoderConfig, make_encoder
from searchbc.search.index import build_index

_GRID = GridConfig(size=12, obstacle_density=0.1, goal_count=4, view_radius=1, max_episode_steps=200)
_ENCODER = EncoderConfig(kind='stacked_window', window=2)
_PARAMS = SuiteParams(grid=_GRID, encoder=_ENCODER, seeds=(0, 1, 2), episodes=2, success_steps=20)
_CONTROLLER = ControllerConfig(warmup=0, max_steps=20, div_threshold=0.0)


def naive_detector(labels: list[bool], k: int) -> tuple[bool, int | None]:
    for start in range(len(labels) - k + 1):
        if all(labels[start:start + k]):
            return True, start + k - 1
    return False, None


def naive_sliding(scores: list[float], window: int) -> float:
    means = []
    for start in range(len(scores) - window + 1):
        total = 0.0
        for value in scores[start:start + window]:
            total += value
        means.append(total / window)
    return sum(means) / len(means)


def record(count: int = 6) -> DemoSet:
    encoder = make_encoder(_ENCODER, _GRID.observation_length)
    return generate_demos(_GRID, count, 0.1, encoder, hold_steps=30, seed=5)


class TestDetector(TestCase):

    def test_examples(self):
        self.assertEqual(consecutive_detector([True] * 100, 100), (True, 99))
        self.assertEqual(consecutive_detector([True, False] * 50, 2), (False, None))
        self.assertEqual(consecutive_detector([], 1), (False, None))

    def test_oracle(self):
        rng = make_generator(21)
        for _ in range(300):
            labels = [bool(v) for v in rng.random(int(rng.integers(0, 60))) < 0.7]
            k = int(rng.integers(1, 8))
            self.assertEqual(consecutive_detector(labels, k), naive_detector(labels, k))

    def test_invalid_k(self):
        with self.assertRaises(HarnessError):
            consecutive_detector([True], 0)


class TestSlidingScore(TestCase):

    def test_examples(self):
        self.assertEqual(sliding_score([0.3] * 40, 16), 0.3)
        self.assertEqual(sliding_score([1, 2, 3], 2), 2.0)

    def test_oracle(self):
        rng = make_generator(3)
        for _ in range(50):
            scores = rng.random(int(rng.integers(16, 80))).tolist()
            self.assertAlmostEqual(sliding_score(scores, 16), naive_sliding(scores, 16), places=12)

    def test_window_fn(self):
        self.assertEqual(sliding_score([1, 5, 2, 8], 2, window_fn=lambda w: float(w.max())), 6.0)

    def test_short(self):
        with self.assertRaises(HarnessError):
            sliding_score([1.0], 2)


class TestRunEpisode(TestCase):

    def test_expert_succeeds(self):
        encoder = make_encoder(_ENCODER, _GRID.observation_length)
        for seed in range(10):
            result = run_episode(episode_world(_GRID, seed, 0), ExpertPolicy(), encoder, success_steps=20)
            self.assertTrue(result.success)
            first = consecutive_detector(result.per_step_in_goal, 20)[1]
            self.assertEqual(result.steps_to_success, first + 1)
            self.assertEqual(result.total_steps, result.steps_to_success)
            self.assertEqual(result.search_events, [])

    def test_runs_to_cap(self):
        encoder = make_encoder(_ENCODER, _GRID.observation_length)
        result = run_episode(episode_world(_GRID, 0, 0), ExpertPolicy(), encoder, success_steps=20,
                             stop_on_success=False)
        self.assertTrue(result.success)
        self.assertEqual(result.total_steps, _GRID.max_episode_steps)
        self.assertIsNotNone(result.mean_window_score)

    def test_encoder_mismatch(self):
        with self.assertRaises(HarnessError):
            run_episode(_GRID, ExpertPolicy(), make_encoder(_ENCODER, 5))

    def test_default_cap(self):
        self.assertEqual(GridConfig().max_episode_steps, 3600)


class TestBaselines(TestCase):

    def test_majority(self):
        up, left = grid_action('up'), grid_action('left')
        embeddings = np.zeros((10, 3), dtype=np.float32)
        demos = DemoSet(3, GRID_SCHEMA, [
            Trajectory(TrajectoryID(0), embeddings[:5], [left, up, up, left, up]),
            Trajectory(TrajectoryID(1), embeddings[5:], [up, left, up, up, left]),
        ])
        self.assertEqual(action_move(majority_action(demos)), 'up')
        policy = baseline_policy('majority', GRID_SCHEMA, demos)
        self.assertIsInstance(policy, MajorityPolicy)

    def test_random_reproducible(self):
        a = baseline_policy('random', GRID_SCHEMA, seed=3)
        b = baseline_policy('random', GRID_SCHEMA, seed=3)
        assert isinstance(a, RandomPolicy)
        stream_a = [a.act(None, _GRID, None).action for _ in range(50)]  # type: ignore[arg-type]
        stream_b = [b.act(None, _GRID, None).action for _ in range(50)]  # type: ignore[arg-type]
        self.assertEqual(stream_a, stream_b)
        self.assertGreater(len(set(stream_a)), 1)

    def test_unknown(self):
        with self.assertRaisesRegex(HarnessError, 'random, majority, expert'):
            baseline_policy('bogus', GRID_SCHEMA)
        with self.assertRaises(HarnessError):
            policy_factory_for('bogus', None, GRID_SCHEMA)
        with self.assertRaises(HarnessError):
            baseline_policy('majority', GRID_SCHEMA)


class TestRunSuite(TestCase):

    def test_protocol_size(self):
        params = replace(_PARAMS, seeds=tuple(range(20)), episodes=10, success_steps=5)
        suite = run_suite(params, policy_factory_for('expert', None, GRID_SCHEMA))
        self.assertEqual(len(suite.episodes), 200)
        self.assertEqual(suite.success_rate, 1.0)
        self.assertEqual([s.seed for s in suite.per_seed], list(range(20)))
        self.assertEqual([e.key for e in suite.episodes],
                         [(s, e) for s in range(20) for e in range(10)])

    def test_all_failing(self):
        demos = DemoSet(3, GRID_SCHEMA, [Trajectory(TrajectoryID(0), np.zeros((2, 3), dtype=np.float32),
                                                    [grid_action('stay')] * 2)])
        suite = run_suite(_PARAMS, policy_factory_for('majority', demos, GRID_SCHEMA))
        self.assertEqual(suite.success_rate, 0.0)
        self.assertIsNone(suite.completion_steps_mean)
        self.assertIsNone(suite.completion_steps_std)

    def test_random_far_below_expert(self):
        suite = run_suite(_PARAMS, policy_factory_for('random', None, GRID_SCHEMA, 3))
        self.assertLess(suite.success_rate, 0.5)

    def test_deterministic_across_jobs(self):
        demos = record()
        labels = hold_labels(demos)
        reports = []
        for jobs in (1, 4, 1):
            suite = run_sbc_suite(demos, replace(_PARAMS, jobs=jobs), _CONTROLLER, 0.95, labels)
            reports.append(render('eval', suite.to_report(include_timing=False), {}))
        self.assertEqual(reports[0], reports[1])
        self.assertEqual(reports[0], reports[2])

    def test_sbc_searches(self):
        demos = record()
        suite = run_sbc_suite(demos, _PARAMS, _CONTROLLER, None, hold_labels(demos))
        self.assertEqual(suite.div_threshold, 0.0)
        self.assertIsNotNone(suite.index_build_ms)
        for episode in suite.episodes:
            self.assertGreaterEqual(len(episode.search_events), 1)
            self.assertEqual(episode.search_events[0].trigger, 'initial')
            self.assertEqual(episode.actions_copied, episode.total_steps)
        stats = suite.searches
        self.assertEqual(stats.total, sum(len(e.search_events) for e in suite.episodes))
        self.assertEqual(sum(stats.trigger_histogram.values()), stats.total)
        self.assertIsNotNone(stats.goal_search_fraction)
        self.assertTrue(0.0 <= stats.goal_search_fraction <= 1.0)

    def test_calibrated_threshold(self):
        demos = record()
        suite = run_sbc_suite(demos, replace(_PARAMS, seeds=(0,), episodes=1), _CONTROLLER, 0.95)
        self.assertGreater(suite.div_threshold, 0.0)


class TestAblation(TestCase):

    def setUp(self) -> None:
        self.demos = record()
        self.params = replace(_PARAMS, seeds=(0, 1), episodes=1)

    def test_counts(self):
        result = run_ablation(self.demos, [2, 4, 6], self.params, _CONTROLLER)
        self.assertEqual(result.counts, [2, 4, 6])
        self.assertEqual(sorted(result.build_ms), [2, 4, 6])
        self.assertTrue(all(ms > 0 for ms in result.build_ms.values()))
        frames = [result.frame_counts[c] for c in (2, 4, 6)]
        self.assertEqual(frames, sorted(frames))
        self.assertEqual(set(result.to_report()['results']), {'2', '4', '6'})

    def test_full_count_matches_direct_run(self):
        result = run_ablation(self.demos, [6], self.params, _CONTROLLER)
        direct = run_sbc_suite(self.demos, self.params, _CONTROLLER, 0.95)
        self.assertEqual(render('x', result.results[6].to_report(include_timing=False), {}),
                         render('x', direct.to_report(include_timing=False), {}))

    def test_runs(self):
        result = run_ablation(self.demos, [3], self.params, _CONTROLLER, runs=3)
        self.assertEqual(len(result.run_success_rates[3]), 3)
        self.assertIn('runs', result.to_report()['results']['3'])

    def test_errors(self):
        with self.assertRaisesRegex(HarnessError, 'count exceeds demos'):
            run_ablation(self.demos, [2, 200], self.params, _CONTROLLER)
        with self.assertRaises(HarnessError):
            run_ablation(self.demos, [4, 2], self.params, _CONTROLLER)


_OPEN = GridConfig(size=16, obstacle_density=0.0, goal_count=12, view_radius=2, max_episode_steps=400)
_IDENTITY = EncoderConfig(kind='identity')


class TestEndToEnd(TestCase):
    """Reduced-scale run of the zero-shot comparison against both baselines."""

    def setUp(self) -> None:
        encoder = make_encoder(_IDENTITY, _OPEN.observation_length)
        self.demos = generate_demos(_OPEN, 30, 0.1, encoder, hold_steps=40, seed=11)
        self.params = SuiteParams(grid=_OPEN, encoder=_IDENTITY, seeds=tuple(range(5)), episodes=2,
                                  success_steps=30)
        self.controller = ControllerConfig(warmup=0, max_steps=100)

    def test_beats_baselines(self):
        sbc = run_sbc_suite(self.demos, self.params, self.controller, 0.95)
        random = run_suite(self.params, policy_factory_for('random', None, GRID_SCHEMA, 1))
        majority = run_suite(self.params, policy_factory_for('majority', self.demos, GRID_SCHEMA))
        self.assertGreater(sbc.success_rate, 0.0)
        self.assertGreaterEqual(sbc.success_rate, 3 * max(random.success_rate, majority.success_rate))

    def test_few_demos(self):
        result = run_ablation(self.demos, [10, 30], self.params, self.controller)
        self.assertGreater(result.results[10].success_rate, 0.0)


class TestTaskVariants(TestCase):
    """One world, two tasks; only the recorded demos differ."""

    def setUp(self) -> None:
        grid = np.full((8, 8), FREE, dtype=np.int8)
        grid[0, 1] = OBSTACLE
        grid[7, 7] = GOAL
        self.configs = {task: GridConfig(size=8, goal_count=1, view_radius=1, max_episode_steps=100, task=task)
                        for task in TASKS}
        self.worlds = {task: build_state(grid.copy(), (4, 4), config) for task, config in self.configs.items()}
        encoder = make_encoder(_IDENTITY, self.configs['goal'].observation_length)
        self.files: dict[str, bytes] = {}
        for task, config in self.configs.items():
            episode = ExpertEpisode.record(config, 0.0, 20, 0, state=self.worlds[task])
            trajectory = encoder.encode_trajectory(0, episode.observations, episode.actions)
            self.files[task] = encode(DemoSet(encoder.output_dim, GRID_SCHEMA, [trajectory]))

    def play(self, demos: str, task: str):
        config = self.configs[task]
        policy = SearchPolicy(build_index(decode(self.files[demos])), ControllerConfig(0, 1000, 0.5))
        encoder = make_encoder(_IDENTITY, config.observation_length)
        return run_episode(config, policy, encoder, success_steps=10, world=self.worlds[task])

    def test_same_format(self):
        goal, nook = decode(self.files['goal']), decode(self.files['nook'])
        self.assertEqual(goal.dimension, nook.dimension)
        self.assertEqual(goal.schema, nook.schema)
        self.assertNotEqual(self.files['goal'], self.files['nook'])

    def test_matching_demos_succeed(self):
        for task, distance in (('goal', 6), ('nook', 8)):
            result = self.play(task, task)
            self.assertTrue(result.success)
            self.assertEqual(result.steps_to_success, distance + 10 - 1)
            self.assertEqual([e.trigger for e in result.search_events], ['initial'])

    def test_swapped_demos_fail(self):
        self.assertFalse(self.play('goal', 'nook').success)
        self.assertFalse(self.play('nook', 'goal').success)

    def test_labels_from_either_file(self):
        for task in TASKS:
            labels = hold_labels(decode(self.files[task]))[0]
            self.assertEqual(sum(labels), 20)
            self.assertEqual(action_move(decode(self.files[task]).trajectories[0].actions[-1]), 'stay')


@skipUnless(os.environ.get('SBC_ACCEPTANCE'), 'full-scale run; set SBC_ACCEPTANCE=1')
class TestFullScale(TestCase):
    """Default world and protocol: 100 demos, 20 seeds x 10 episodes, K = 100."""

    def test_zero_shot_and_ablation(self):
        params = SuiteParams()
        controller = ControllerConfig(warmup=0, max_steps=100)
        encoder = make_encoder(params.encoder, params.grid.observation_length)
        demos = generate_demos(params.grid, 100, 0.1, encoder, hold_steps=120, seed=0)

        expert = run_suite(params, policy_factory_for('expert', None, GRID_SCHEMA))
        random = run_suite(params, policy_factory_for('random', None, GRID_SCHEMA, 0))
        majority = run_suite(params, policy_factory_for('majority', demos, GRID_SCHEMA))
        counts = [10, 25, 50, 100]
        ablation = run_ablation(demos, counts, params, controller)
        rates = [ablation.results[c].success_rate for c in counts]

        self.assertEqual(expert.success_rate, 1.0)
        self.assertGreater(rates[-1], 0.0)
        self.assertGreaterEqual(rates[-1], 3 * max(random.success_rate, majority.success_rate))
        self.assertGreater(rates[0], 0.0)
        self.assertGreaterEqual(rates[-1], rates[0])
        self.assertLessEqual(sum(1 for a, b in zip(rates, rates[1:]) if b < a), 1)

        again = run_ablation(demos, counts, replace(params, jobs=4), controller)
        self.assertEqual(render('ablate', again.to_report(include_timing=False), {}),
                         render('ablate', ablation.to_report(include_timing=False), {}))
