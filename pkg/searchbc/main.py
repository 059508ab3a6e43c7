import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Iterator, Optional

from rich.console import Console
from rich.pretty import pretty_repr
from rich.progress import (BarColumn, MofNCompleteColumn, Progress,
                           SpinnerColumn, TextColumn)
from rich.table import Table

from .config import Config
from .demos.codec import load_any, save_any
from .demos.types import DemoSet, require_valid, subset
from .env.gridnav import (GRID_SCHEMA, generate_demos, generate_world,
                          hold_labels, render_world)
from .evaluation import report
from .evaluation.harness import (SearchPolicy, episode_world,
                                 policy_factory_for, resolve_threshold,
                                 run_ablation, run_episode, run_sbc_suite,
                                 run_suite)
from .evaluation.projection import (Projection, project_2d, search_path,
                                    write_csv, write_search_csv)
from .evaluation.types import STEP_SECONDS, AblationResult, SuiteResult
from .search.encoders import make_encoder
from .search.index import build_index

PRIMARY_COLOR = '#2aa198'


class Main:
    """Runs one command against the process config and reports to the console."""

    def __init__(self, console: Optional[Console] = None) -> None:
        self.config = Config.get_config()
        self.console = console or Console(stderr=True)
        self.log = logging.getLogger(__name__)

    # helpers

    def load_demos(self, path: Path) -> DemoSet:
        with self.console.status(f'Loading {path}'):
            demos = load_any(path)
            require_valid(demos)
        self.config.check_dimensions(demos.dimension)
        self.log.info(f'Loaded {path}: {len(demos.trajectories)} trajectories, {demos.frame_count} frames')
        self.log.debug(pretty_repr(demos.schema))
        return demos

    def goal_labels(self, demos: DemoSet) -> dict[int, list[bool]]:
        return hold_labels(demos)

    @contextmanager
    def progress(self, description: str, total: int) -> Iterator[Callable[[Any], None]]:
        progress = Progress(
            SpinnerColumn(),
            TextColumn('[progress.description]{task.description}'),
            BarColumn(bar_width=None),
            MofNCompleteColumn(),
            console=self.console,
            transient=True
        )
        task = progress.add_task(description, total=total)
        with progress:
            yield lambda _: progress.advance(task)

    def params(self, **extra: Any) -> dict[str, Any]:
        """Report parameters; worker count is left out since it never changes results."""
        params = self.config.as_dict()
        params['suite'].pop('jobs', None)
        params.pop('report', None)
        params.update({k: v for k, v in extra.items() if v is not None})
        return params

    def emit(self, kind: str, body: dict[str, Any], params: dict[str, Any], path: Optional[Path]) -> None:
        if path is None:
            sys.stdout.write(report.render(kind, body, params))
            return
        report.write(path, kind, body, params)
        self.console.print(f'Report written to [bold]{path}[/bold]')

    def suite_table(self, suites: dict[str, SuiteResult]) -> Table:
        table = Table(title='Results', header_style=f'bold {PRIMARY_COLOR}')
        for column in ('policy', 'episodes', 'success rate', 'completion (steps)',
                       'completion (s)', 'searches / ep', 'goal searches'):
            table.add_column(column, justify='right')
        for name, suite in suites.items():
            mean = suite.completion_steps_mean
            fraction = suite.searches.goal_search_fraction
            table.add_row(
                name,
                str(len(suite.episodes)),
                f'{suite.success_rate:.3f}',
                '-' if mean is None else f'{mean:.1f} ± {suite.completion_steps_std:.1f}',
                '-' if mean is None else f'{mean * STEP_SECONDS:.2f}',
                f'{suite.searches.mean_per_episode:.2f}',
                '-' if fraction is None else f'{fraction:.3f}'
            )
        return table

    # commands

    def record(self, out: Path) -> DemoSet:
        grid = self.config.grid
        demos_conf = self.config.demos
        encoder = make_encoder(self.config.encoder, grid.observation_length)
        with self.console.status(f'Recording {demos_conf.n_demos} expert demonstrations'):
            demos = generate_demos(grid, demos_conf.n_demos, demos_conf.noise_eps, encoder,
                                   demos_conf.hold_steps, demos_conf.seed)
            save_any(demos, out)
        table = Table(title=str(out), header_style=f'bold {PRIMARY_COLOR}')
        table.add_column('demos', justify='right')
        table.add_column('frames', justify='right')
        table.add_column('dimension', justify='right')
        table.add_row(str(len(demos.trajectories)), str(demos.frame_count), str(demos.dimension))
        self.console.print(table)
        return demos

    def evaluate(self, demos_path: Path, report_path: Optional[Path] = None,
                 subset_arg: Optional[tuple[int, int]] = None) -> SuiteResult:
        demos = self.load_demos(demos_path)
        if subset_arg is not None:
            demos = subset(demos, *subset_arg)
        params = self.config.suite_params()
        controller, quantile = self.config.controller.resolve()
        total = len(params.seeds) * params.episodes
        with self.progress('Evaluating S-BC', total) as on_episode:
            suite = run_sbc_suite(demos, params, controller, quantile, self.goal_labels(demos), on_episode)

        self.console.print(self.suite_table({'sbc': suite}))
        self.console.print(f'div_threshold = {suite.div_threshold:.6g}')
        self.emit('eval', suite.to_report(self.config.report.include_timing),
                  self.params(demo_file=str(demos_path), subset=list(subset_arg) if subset_arg else None),
                  report_path)
        return suite

    def ablate(self, demos_path: Path, report_path: Optional[Path] = None) -> AblationResult:
        demos = self.load_demos(demos_path)
        ablation = self.config.ablation
        params = self.config.suite_params()
        controller, quantile = self.config.controller.resolve()
        total = len(ablation.counts) * ablation.runs * len(params.seeds) * params.episodes
        with self.progress('Ablating demo count', total) as on_episode:
            result = run_ablation(demos, ablation.counts, params, controller, quantile, ablation.runs,
                                  self.goal_labels(demos), on_episode)

        self.console.print(self.suite_table({f'sbc@{count}': suite for count, suite in result.results.items()}))
        self.emit('ablate', result.to_report(self.config.report.include_timing),
                  self.params(demo_file=str(demos_path)), report_path)
        return result

    def project(self, demos_path: Path, out: Path, trace_seed: Optional[int] = None) -> Projection:
        demos = self.load_demos(demos_path)
        index = build_index(demos)
        labels = self.goal_labels(demos)
        flat = [label for traj_id in sorted(labels) for label in labels[traj_id]]
        with self.console.status('Projecting embeddings'):
            projection = project_2d(index, flat)
        write_csv(projection, out)
        self.console.print(f'{len(projection.rows)} frames projected to [bold]{out}[/bold] '
                           f'(explained variance {projection.explained_variance_ratio:.3f})')

        if trace_seed is not None:
            controller, quantile = self.config.controller.resolve()
            controller = resolve_threshold(demos, controller, quantile)
            grid = self.config.grid
            result = run_episode(
                episode_world(grid, trace_seed, 0),
                SearchPolicy(index, controller),
                make_encoder(self.config.encoder, grid.observation_length),
                self.config.suite.success_steps,
                score_window=self.config.suite.score_window,
                stop_on_success=self.config.suite.stop_on_success
            )
            trace = out.with_name(f'{out.stem}.searches.csv')
            write_search_csv(search_path(projection, index, result.search_events), trace)
            self.console.print(f'{len(result.search_events)} searches traced to [bold]{trace}[/bold] '
                               f'(success={result.success})')
        return projection

    def baseline(self, kind: str, demos_path: Optional[Path] = None, seed: int = 0,
                 report_path: Optional[Path] = None) -> SuiteResult:
        demos = self.load_demos(demos_path) if demos_path is not None else None
        schema = demos.schema if demos is not None else GRID_SCHEMA
        params = self.config.suite_params()
        factory = policy_factory_for(kind, demos, schema, seed)
        total = len(params.seeds) * params.episodes
        with self.progress(f'Running {kind} baseline', total) as on_episode:
            suite = run_suite(params, factory, None, on_episode, kind)

        self.console.print(self.suite_table({kind: suite}))
        self.emit('baseline', suite.to_report(self.config.report.include_timing),
                  self.params(kind=kind, seed=seed, demo_file=str(demos_path) if demos_path else None),
                  report_path)
        return suite

    def world(self, seed: int) -> str:
        text = render_world(generate_world(self.config.grid.with_seed(seed)))
        sys.stdout.write(text + '\n')
        return text

    def convert(self, source: Path, target: Path) -> DemoSet:
        demos = load_any(source)
        require_valid(demos)
        save_any(demos, target)
        self.console.print(f'Converted {len(demos.trajectories)} trajectories: {source} -> {target}')
        return demos

    def init_config(self, path: Path) -> None:
        Config.write_default(path)
        self.console.print(f'Default configuration written to [bold]{path}[/bold]')
