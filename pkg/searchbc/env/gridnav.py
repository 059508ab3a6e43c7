from collections import deque
from dataclasses import dataclass, field, replace
from logging import getLogger
from typing import Literal, Optional, Self, Type, get_args

import numpy as np
import numpy.typing as npt

from ..demos.types import (ActionRecord, ActionSchema, DemoSet, SchemaEntry,
                           Trajectory, derive_seed, make_generator)
from ..search.encoders import Encoder

FREE, OBSTACLE, GOAL = 0, 1, 2
MOVES: tuple[str, ...] = ('up', 'down', 'left', 'right')
ACTION_NAMES: tuple[str, ...] = MOVES + ('stay',)
DELTAS: dict[str, tuple[int, int]] = {
    'up': (0, -1),
    'down': (0, 1),
    'left': (-1, 0),
    'right': (1, 0),
    'stay': (0, 0),
}
GRID_SCHEMA = ActionSchema(tuple(SchemaEntry(name, 'boolean') for name in ACTION_NAMES))
# 'goal': reach a goal cell and stay; 'nook': reach a dead-end cell and stay
Task = Literal['goal', 'nook']
TASKS: tuple[str, ...] = get_args(Task)
# placement attempts before a config is declared unsatisfiable
WORLD_RETRIES = 64
PATCH_TRIES = 16
GOAL_PATCH_CELLS = 4
# salts separating the seed streams of demo worlds and evaluation worlds
DEMO_SALT = 0x5BC0DE
EVAL_SALT = 0x5BCE7A

_log = getLogger(__name__)


class GridConfigError(Exception):
    pass


class UnsatisfiableWorld(Exception):
    pass


class EpisodeOver(Exception):
    pass


class ExpertFailure(Exception):
    pass


def grid_action(move: str) -> ActionRecord:
    if move not in ACTION_NAMES:
        raise GridConfigError(f"unknown move {move!r}")
    return GRID_ACTIONS[ACTION_NAMES.index(move)]


def action_move(action: ActionRecord) -> str:
    """Name of the single true control; anything else counts as 'stay'."""
    values = action.as_dict()
    pressed = [name for name in ACTION_NAMES if values.get(name) is True]
    return pressed[0] if len(pressed) == 1 else 'stay'


GRID_ACTIONS: tuple[ActionRecord, ...] = tuple(
    ActionRecord(tuple((name, name == move) for name in ACTION_NAMES)) for move in ACTION_NAMES
)


@dataclass(frozen=True)
class GridConfig:
    size: int = 32
    obstacle_density: float = 0.15
    goal_count: int = 32
    view_radius: int = 2
    seed: int = 0
    max_episode_steps: int = 3600
    task: Task = 'goal'

    def __post_init__(self):
        if self.size < 8:
            raise GridConfigError(f"size must be >= 8, got {self.size}")
        if not 0 <= self.obstacle_density <= 0.3:
            raise GridConfigError(f"obstacle_density must be in [0, 0.3], got {self.obstacle_density}")
        if self.goal_count < 1:
            raise GridConfigError("goal_count must be >= 1")
        if self.goal_count > self.size * self.size // 4:
            raise GridConfigError(f"goal_count {self.goal_count} too large for a {self.size}x{self.size} grid")
        if self.view_radius < 1:
            raise GridConfigError("view_radius must be >= 1")
        if self.max_episode_steps < 1:
            raise GridConfigError("max_episode_steps must be >= 1")
        if self.task not in TASKS:
            raise GridConfigError(f"unknown task {self.task!r}; valid tasks: {', '.join(TASKS)}")

    @property
    def observation_length(self) -> int:
        return 2 + (2 * self.view_radius + 1) ** 2

    def with_seed(self, seed: int) -> Self:
        return replace(self, seed=seed)


@dataclass(frozen=True)
class GridState:
    """Cells are indexed grid[y, x]; position is (x, y)."""
    grid: npt.NDArray[np.int8] = field(repr=False)
    position: tuple[int, int]
    steps: int = 0
    max_steps: int = 3600
    # BFS steps to the nearest target cell; -1 where unreachable
    goal_distance: npt.NDArray[np.int32] = field(repr=False, default_factory=lambda: np.zeros((0, 0), np.int32))
    # task target mask; None means the goal cells
    targets: Optional[npt.NDArray[np.bool_]] = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return int(self.grid.shape[0])

    @property
    def in_goal(self) -> bool:
        x, y = self.position
        if self.targets is None:
            return bool(self.grid[y, x] == GOAL)
        return bool(self.targets[y, x])

    @property
    def done(self) -> bool:
        return self.steps >= self.max_steps

    def cell(self, x: int, y: int) -> int:
        if 0 <= x < self.size and 0 <= y < self.size:
            return int(self.grid[y, x])
        return OBSTACLE

    def blocked(self, move: str) -> bool:
        dx, dy = DELTAS[move]
        x, y = self.position
        return self.cell(x + dx, y + dy) == OBSTACLE


def bfs_distances(grid: npt.NDArray[np.int8], sources: list[tuple[int, int]]) -> npt.NDArray[np.int32]:
    """Multi-source 4-neighbour BFS over non-obstacle cells."""
    size = grid.shape[0]
    distance = np.full(grid.shape, -1, dtype=np.int32)
    queue: deque[tuple[int, int]] = deque()
    for x, y in sources:
        distance[y, x] = 0
        queue.append((x, y))
    while queue:
        x, y = queue.popleft()
        for move in MOVES:
            dx, dy = DELTAS[move]
            nx, ny = x + dx, y + dy
            if 0 <= nx < size and 0 <= ny < size and grid[ny, nx] != OBSTACLE and distance[ny, nx] < 0:
                distance[ny, nx] = distance[y, x] + 1
                queue.append((nx, ny))
    return distance


def spawn_of(config: GridConfig) -> tuple[int, int]:
    return (config.size // 2, config.size // 2)


def task_targets(grid: npt.NDArray[np.int8], task: Task, spawn: tuple[int, int]) -> npt.NDArray[np.bool_]:
    """Cells that count as 'in goal' for a task: goal cells, or for 'nook'
    the free cells with at least three blocked neighbours (the border counts
    as blocked). The spawn is never a target."""
    match task:
        case 'goal':
            targets = grid == GOAL
        case 'nook':
            padded = np.pad(grid == OBSTACLE, 1, mode='constant', constant_values=True)
            blocked = np.stack([padded[:-2, 1:-1], padded[2:, 1:-1],
                                padded[1:-1, :-2], padded[1:-1, 2:]]).sum(axis=0)
            targets = (grid == FREE) & (blocked >= 3)
        case _:
            raise GridConfigError(f"unknown task {task!r}")
    targets = targets.copy()
    targets[spawn[1], spawn[0]] = False
    return targets


def build_state(grid: npt.NDArray[np.int8], spawn: tuple[int, int], config: GridConfig) -> GridState:
    """Freeze a grid into a start state for config.task."""
    if grid[spawn[1], spawn[0]] == OBSTACLE:
        raise GridConfigError(f"spawn {spawn} is an obstacle")
    targets = task_targets(grid, config.task, spawn)
    cells = [(int(x), int(y)) for y, x in np.argwhere(targets)]
    distance = bfs_distances(grid, cells) if cells else np.full(grid.shape, -1, dtype=np.int32)
    if distance[spawn[1], spawn[0]] < 0:
        raise UnsatisfiableWorld(f"no {config.task} cell reachable from {spawn}")
    for array in (grid, targets, distance):
        array.setflags(write=False)
    return GridState(grid, spawn, 0, config.max_episode_steps, distance, targets)


def _grow_patch(rng: np.random.Generator, eligible: npt.NDArray[np.bool_],
                start: tuple[int, int], cells: int) -> Optional[list[tuple[int, int]]]:
    size = eligible.shape[0]
    patch = [start]
    frontier = [start]
    while len(patch) < cells and frontier:
        cx, cy = frontier[int(rng.integers(len(frontier)))]
        options = [(cx + dx, cy + dy) for dx, dy in (DELTAS[m] for m in MOVES)
                   if 0 <= cx + dx < size and 0 <= cy + dy < size
                   and eligible[cy + dy, cx + dx] and (cx + dx, cy + dy) not in patch]
        if not options:
            frontier.remove((cx, cy))
            continue
        cell = options[int(rng.integers(len(options)))]
        patch.append(cell)
        frontier.append(cell)
    return patch if len(patch) == cells else None


def place_goals(rng: np.random.Generator, eligible: npt.NDArray[np.bool_],
                goal_count: int) -> Optional[list[tuple[int, int]]]:
    """goal_count cells in separate patches of up to GOAL_PATCH_CELLS on
    eligible cells. None when the eligible area cannot hold them."""
    eligible = eligible.copy()
    placed: list[tuple[int, int]] = []
    while len(placed) < goal_count:
        cells = min(GOAL_PATCH_CELLS, goal_count - len(placed))
        patch: Optional[list[tuple[int, int]]] = None
        for _ in range(PATCH_TRIES):
            free = np.argwhere(eligible)
            if free.size == 0:
                return None
            y, x = (int(v) for v in free[rng.integers(len(free))])
            patch = _grow_patch(rng, eligible, (x, y), cells)
            if patch is not None:
                break
        if patch is None:
            return None
        for x, y in patch:
            # patch cells and their neighbours are off limits for later patches
            for dx, dy in DELTAS.values():
                if 0 <= x + dx < eligible.shape[1] and 0 <= y + dy < eligible.shape[0]:
                    eligible[y + dy, x + dx] = False
        placed.extend(patch)
    return placed


def generate_world(config: GridConfig) -> GridState:
    """Obstacles by density, then goal_count goal cells scattered in small
    patches out of the spawn's view; resampled until every goal cell is
    reachable and the task has a reachable target."""
    rng = make_generator([config.seed, 0x3071D])
    size = config.size
    spawn = spawn_of(config)
    # Manhattan distance above 2r keeps a cell outside the (2r+1)^2 window
    min_distance = 2 * config.view_radius + 1
    ys, xs = np.indices((size, size))
    manhattan = np.abs(xs - spawn[0]) + np.abs(ys - spawn[1])
    for attempt in range(WORLD_RETRIES):
        grid = np.where(rng.random((size, size)) < config.obstacle_density, OBSTACLE, FREE).astype(np.int8)
        grid[spawn[1], spawn[0]] = FREE
        reachable = bfs_distances(grid, [spawn]) >= 0

        goals = place_goals(rng, reachable & (manhattan >= min_distance), config.goal_count)
        if goals is None:
            _log.debug(f'World seed {config.seed}: attempt {attempt} could not place {config.goal_count} goals')
            continue
        for gx, gy in goals:
            grid[gy, gx] = GOAL
        try:
            return build_state(grid, spawn, config)
        except UnsatisfiableWorld as e:
            _log.debug(f'World seed {config.seed}: attempt {attempt}: {e}')
    raise UnsatisfiableWorld(f"no valid world for seed {config.seed} after {WORLD_RETRIES} attempts")


def observe(state: GridState, config: GridConfig) -> npt.NDArray[np.float64]:
    """[x/size, y/size] then the (2r+1)^2 window row by row; free 0,
    obstacle (and off-grid) 0.5, goal 1."""
    r = config.view_radius
    x, y = state.position
    padded = np.pad(state.grid, r, mode='constant', constant_values=OBSTACLE)
    window = padded[y:y + 2 * r + 1, x:x + 2 * r + 1].astype(np.float64) / 2.0
    return np.concatenate(([x / config.size, y / config.size], window.reshape(-1)))


def env_step(state: GridState, config: GridConfig,
             action: ActionRecord | str) -> tuple[GridState, npt.NDArray[np.float64], bool]:
    """Blocked moves leave the agent in place; the step counter always advances."""
    if state.done:
        raise EpisodeOver(f"episode ended at step {state.steps}")
    move = action if isinstance(action, str) else action_move(action)
    if move not in DELTAS:
        raise GridConfigError(f"unknown move {move!r}")
    position = state.position
    if not state.blocked(move):
        dx, dy = DELTAS[move]
        position = (position[0] + dx, position[1] + dy)
    new_state = replace(state, position=position, steps=state.steps + 1)
    return new_state, observe(new_state, config), new_state.in_goal


def expert_move(state: GridState, noise_eps: float, seed: int) -> str:
    if state.in_goal:
        return 'stay'
    x, y = state.position
    here = int(state.goal_distance[y, x])
    if here < 0:
        raise ExpertFailure(f"no goal reachable from {state.position}")

    rng = make_generator([seed, state.steps])
    if noise_eps > 0 and rng.random() < noise_eps:
        open_moves = [m for m in MOVES if not state.blocked(m)]
        if open_moves:
            return open_moves[int(rng.integers(len(open_moves)))]
    for move in MOVES:
        dx, dy = DELTAS[move]
        nx, ny = x + dx, y + dy
        if state.cell(nx, ny) != OBSTACLE and int(state.goal_distance[ny, nx]) == here - 1:
            return move
    raise ExpertFailure(f"no shortest-path move from {state.position}")


def expert_policy(state: GridState, config: GridConfig, noise_eps: float = 0.0, seed: int = 0) -> ActionRecord:
    """BFS shortest-path move (ties up, down, left, right), a random open move
    with probability noise_eps, 'stay' once on a goal. Deterministic in
    (state, seed, state.steps)."""
    if not 0 <= noise_eps < 0.5:
        raise GridConfigError(f"noise_eps must be in [0, 0.5), got {noise_eps}")
    return grid_action(expert_move(state, noise_eps, seed))


@dataclass
class ExpertEpisode:
    observations: list[npt.NDArray[np.float64]]
    actions: list[ActionRecord]
    first_goal_step: int

    @classmethod
    def record(cls: Type[Self], config: GridConfig, noise_eps: float, hold_steps: int, seed: int,
               state: Optional[GridState] = None) -> Self:
        """Expert run on `state`, or on the world generated from config."""
        state = state if state is not None else generate_world(config)
        observations: list[npt.NDArray[np.float64]] = []
        actions: list[ActionRecord] = []
        first_goal: Optional[int] = 0 if state.in_goal else None
        while first_goal is None or len(actions) < first_goal + hold_steps:
            if state.done:
                raise ExpertFailure(
                    f"expert did not finish world {config.seed} within {config.max_episode_steps} steps")
            action = expert_policy(state, config, noise_eps, seed)
            observations.append(observe(state, config))
            actions.append(action)
            state, _, in_goal = env_step(state, config, action)
            if in_goal and first_goal is None:
                first_goal = len(actions)
        return cls(observations, actions, first_goal)


def generate_demos(config: GridConfig, n_demos: int, noise_eps: float, encoder: Encoder,
                   hold_steps: int = 120, seed: int = 0) -> DemoSet:
    if n_demos < 1:
        raise GridConfigError("n_demos must be >= 1")
    if hold_steps < 1:
        raise GridConfigError("hold_steps must be >= 1")
    if encoder.input_dim != config.observation_length:
        raise GridConfigError(
            f"encoder expects {encoder.input_dim} inputs, observations have {config.observation_length}")

    trajectories: list[Trajectory] = []
    for i in range(n_demos):
        world = config.with_seed(derive_seed(seed, i, DEMO_SALT))
        episode = ExpertEpisode.record(world, noise_eps, hold_steps, derive_seed(seed, i))
        trajectories.append(encoder.encode_trajectory(i, episode.observations, episode.actions))
        _log.debug(f'Demo {i}: {len(episode.actions)} frames, goal reached at step {episode.first_goal_step}')
    return DemoSet(encoder.output_dim, GRID_SCHEMA, trajectories)


def hold_labels(demos: DemoSet) -> dict[int, list[bool]]:
    """In-goal labels for recorded demos: the trailing run of 'stay' actions.
    The expert only stays once it is on a target, so the labels follow from
    the file alone whatever hold_steps it was recorded with."""
    labels: dict[int, list[bool]] = {}
    for trajectory in demos.trajectories:
        moves = [action_move(a) for a in trajectory.actions]
        hold = 0
        while hold < len(moves) and moves[-1 - hold] == 'stay':
            hold += 1
        labels[int(trajectory.id)] = [offset >= len(moves) - hold for offset in range(len(moves))]
    return labels


def render_world(state: GridState) -> str:
    """'#' obstacle, 'G' goal, 'n' any other target cell, '.' free, 'A' agent."""
    glyphs = {FREE: '.', OBSTACLE: '#', GOAL: 'G'}
    rows: list[str] = []
    for y in range(state.size):
        row = [glyphs[int(c)] for c in state.grid[y]]
        if state.targets is not None:
            for x in np.flatnonzero(state.targets[y]):
                if state.grid[y, x] == FREE:
                    row[x] = 'n'
        if y == state.position[1]:
            row[state.position[0]] = 'A'
        rows.append(''.join(row))
    return '\n'.join(rows)
