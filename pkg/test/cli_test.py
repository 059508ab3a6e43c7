import io
import json
import tempfile
from contextlib import redirect_stdout
from pathlib import Path
from unittest import TestCase

from rich.console import Console

from searchbc.__main__ import run
from searchbc.demos.codec import load

_CONFIG = """
[grid]
size = 12
obstacle_density = 0.1
goal_count = 4
view_radius = 1
max_episode_steps = 150

[encoder]
kind = "stacked_window"
window = 2

[suite]
seeds = 2
episodes = 2
success_steps = 10

[demos]
n_demos = 6
hold_steps = 20

[ablation]
counts = [2, 4, 6]
"""


class TestCli(TestCase):

    def setUp(self) -> None:
        self.dir = tempfile.TemporaryDirectory()
        self.path = Path(self.dir.name)
        self.config = self.path / 'config.toml'
        self.config.write_text(_CONFIG, encoding='utf-8')
        self.demos = self.path / 'demos.sbc'

    def tearDown(self) -> None:
        self.dir.cleanup()

    def cli(self, *argv: str, config: Path | None = None) -> int:
        base = ['--config', str(config or self.config), '--log', str(self.path / 'log')]
        return run(base + list(argv), Console(file=io.StringIO()))

    def record(self) -> None:
        self.assertEqual(self.cli('record', '--demos', '6', '--seed', '7', '--out', str(self.demos)), 0)

    def test_record(self):
        self.record()
        first = self.demos.read_bytes()
        self.record()
        self.assertEqual(self.demos.read_bytes(), first)
        self.assertEqual(len(load(self.demos).trajectories), 6)

    def test_usage_errors(self):
        for argv in (['record', '--demos', '0', '--out', 'x.sbc'],
                     ['eval', '--demos', 'x.sbc', '--div-threshold', '-1'],
                     ['baseline', '--kind', 'bogus'],
                     ['ablate', '--counts', '25,10'],
                     []):
            with self.subTest(argv=argv), self.assertRaises(SystemExit) as cm:
                self.cli(*argv)
            self.assertEqual(cm.exception.code, 2)

    def test_eval_deterministic(self):
        self.record()
        reports = []
        for i, jobs in enumerate(('1', '3')):
            report = self.path / f'eval{i}.json'
            self.assertEqual(self.cli('eval', '--demos', str(self.demos), '--seeds', '2', '--episodes', '2',
                                      '--max-steps', '20', '--div-threshold', 'auto:0.95',
                                      '--jobs', jobs, '--report', str(report)), 0)
            reports.append(report.read_bytes())
        self.assertEqual(reports[0], reports[1])
        body = json.loads(reports[0])
        self.assertEqual(body['report'], 'eval')
        self.assertEqual(body['episodes'], 4)
        self.assertEqual(len(body['episode_results']), 4)
        self.assertNotIn('timing', body)
        self.assertGreater(body['div_threshold'], 0)

    def test_eval_timing_and_subset(self):
        self.record()
        report = self.path / 'eval.json'
        self.assertEqual(self.cli('eval', '--demos', str(self.demos), '--subset', '3:5', '--timing',
                                  '--report', str(report)), 0)
        body = json.loads(report.read_text())
        self.assertGreater(body['timing']['index_build_ms'], 0)
        self.assertEqual(body['params']['subset'], [3, 5])

    def test_no_timing_flag(self):
        self.record()
        report = self.path / 'eval.json'
        self.assertEqual(self.cli('eval', '--demos', str(self.demos), '--seeds', '1', '--episodes', '1',
                                  '--no-timing', '--report', str(report)), 0)
        self.assertNotIn('timing', json.loads(report.read_text()))

    def test_labels_ignore_config_hold_steps(self):
        self.record()
        other = self.path / 'other.toml'
        other.write_text(_CONFIG.replace('hold_steps = 20', 'hold_steps = 5'), encoding='utf-8')
        out = self.path / 'latent.csv'
        self.assertEqual(self.cli('project', '--demos', str(self.demos), '--out', str(out), config=other), 0)
        labels = [line.rsplit(',', 1)[1] for line in out.read_text().splitlines()[1:]]
        self.assertEqual(labels.count('1'), 6 * 20)

    def test_dimension_mismatch(self):
        self.record()
        other = self.path / 'other.toml'
        other.write_text(_CONFIG.replace('view_radius = 1', 'view_radius = 2'), encoding='utf-8')
        self.assertEqual(self.cli('eval', '--demos', str(self.demos), config=other), 1)

    def test_missing_demos(self):
        self.assertEqual(self.cli('eval', '--demos', str(self.path / 'missing.sbc')), 1)
        self.assertIn('eval failed', (self.path / 'log').read_text(encoding='utf-8'))

    def test_debug_mirrors_log_to_console(self):
        console = Console(file=io.StringIO(), width=200)
        argv = ['--config', str(self.config), '--log', str(self.path / 'log'), '--debug', 'world']
        with redirect_stdout(io.StringIO()):
            self.assertEqual(run(argv, console), 0)
        self.assertIn('search-bc', console.file.getvalue())  # type: ignore[attr-defined]
        self.assertIn('search-bc', (self.path / 'log').read_text(encoding='utf-8'))

    def test_ablate(self):
        self.record()
        report = self.path / 'ablate.json'
        self.assertEqual(self.cli('ablate', '--demos', str(self.demos), '--episodes', '1', '--timing',
                                  '--report', str(report)), 0)
        body = json.loads(report.read_text())
        self.assertEqual(body['counts'], [2, 4, 6])
        for entry in body['results'].values():
            self.assertGreater(entry['timing']['index_build_ms'], 0)
        self.assertEqual(self.cli('ablate', '--demos', str(self.demos), '--counts', '200'), 1)

    def test_project(self):
        self.record()
        out = self.path / 'latent.csv'
        self.assertEqual(self.cli('project', '--demos', str(self.demos), '--out', str(out), '--trace-seed', '0'), 0)
        lines = out.read_text().splitlines()
        self.assertEqual(lines[0], 'x,y,traj_id,offset,label')
        self.assertEqual(len(lines) - 1, load(self.demos).frame_count)
        trace = (self.path / 'latent.searches.csv').read_text().splitlines()
        self.assertEqual(trace[0], 'step,trigger,traj_id,offset,x,y,label')
        self.assertTrue(trace[1].startswith('0,initial,'))

        first = out.read_bytes()
        self.assertEqual(self.cli('project', '--demos', str(self.demos), '--out', str(out)), 0)
        self.assertEqual(out.read_bytes(), first)

    def test_baselines(self):
        report = self.path / 'expert.json'
        self.assertEqual(self.cli('baseline', '--kind', 'expert', '--report', str(report)), 0)
        self.assertEqual(json.loads(report.read_text())['success_rate'], 1.0)

        texts = []
        for name in ('a', 'b'):
            report = self.path / f'random_{name}.json'
            self.assertEqual(self.cli('baseline', '--kind', 'random', '--seed', '3', '--report', str(report)), 0)
            texts.append(report.read_bytes())
        self.assertEqual(texts[0], texts[1])

        self.assertEqual(self.cli('baseline', '--kind', 'majority'), 1)

    def test_world(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            self.assertEqual(self.cli('world', '--seed', '1'), 0)
        rows = buffer.getvalue().splitlines()
        self.assertEqual(len(rows), 12)
        self.assertEqual(''.join(rows).count('A'), 1)

    def test_convert(self):
        self.record()
        jsonl = self.path / 'demos.jsonl'
        back = self.path / 'back.sbc'
        self.assertEqual(self.cli('convert', str(self.demos), str(jsonl)), 0)
        self.assertEqual(self.cli('convert', str(jsonl), str(back)), 0)
        self.assertEqual(back.read_bytes(), self.demos.read_bytes())

    def test_init_config(self):
        path = self.path / 'written.toml'
        self.assertEqual(self.cli('init-config', str(path)), 0)
        with redirect_stdout(io.StringIO()):
            self.assertEqual(self.cli('world', config=path), 0)
