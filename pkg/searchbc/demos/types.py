from dataclasses import dataclass, field
from typing import Any, Iterator, Literal, NewType, Optional, Self, Type, Union

import numpy as np
import numpy.typing as npt

TrajectoryID = NewType('TrajectoryID', int)
Embedding = npt.NDArray[np.float32]
ControlValue = Union[bool, float]
ControlKind = Literal['boolean', 'real']

_U64_MASK = 0xFFFF_FFFF_FFFF_FFFF


class DemoSetError(Exception):
    pass


def as_embedding(values: Any) -> Embedding:
    """Coerce any real sequence to a 1-D float32 embedding."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise DemoSetError(f"embedding must be one-dimensional, got shape {arr.shape}")
    return arr


def make_generator(seed: int | list[int]) -> np.random.Generator:
    """The documented stream every seeded component draws from: numpy's PCG64
    (128-bit state permuted congruential generator, XSL-RR output) seeded through
    SeedSequence. Negative 64-bit seeds are taken modulo 2**64."""
    if isinstance(seed, list):
        entropy: int | list[int] = [s & _U64_MASK for s in seed]
    else:
        entropy = seed & _U64_MASK
    return np.random.Generator(np.random.PCG64(entropy))


def derive_seed(*parts: int) -> int:
    """Deterministic 64-bit sub-seed for a tuple of integers."""
    state = np.random.SeedSequence([p & _U64_MASK for p in parts]).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class SchemaEntry:
    name: str
    kind: ControlKind
    min: Optional[float] = None
    max: Optional[float] = None

    def to_data(self) -> dict[str, Any]:
        data: dict[str, Any] = {'name': self.name, 'kind': self.kind}
        if self.kind == 'real':
            data['min'] = self.min
            data['max'] = self.max
        return data

    @classmethod
    def from_data(cls: Type[Self], data: dict[str, Any]) -> Self:
        return cls(
            name=data['name'],
            kind=data['kind'],
            min=data.get('min'),
            max=data.get('max')
        )


@dataclass(frozen=True)
class ActionSchema:
    entries: tuple[SchemaEntry, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def problems(self) -> list[str]:
        problems: list[str] = []
        seen: set[str] = set()
        for entry in self.entries:
            if not entry.name:
                problems.append("empty control name")
            elif entry.name in seen:
                problems.append(f"duplicate control name {entry.name!r}")
            seen.add(entry.name)
            match entry.kind:
                case 'boolean':
                    pass
                case 'real':
                    if entry.min is None or entry.max is None:
                        problems.append(f"real control {entry.name!r} needs min and max")
                    elif not entry.min < entry.max:
                        problems.append(f"real control {entry.name!r} has min >= max")
                case _:
                    problems.append(f"control {entry.name!r} has unknown kind {entry.kind!r}")
        return problems

    def to_data(self) -> list[dict[str, Any]]:
        return [e.to_data() for e in self.entries]

    @classmethod
    def from_data(cls: Type[Self], data: list[dict[str, Any]]) -> Self:
        return cls(tuple(SchemaEntry.from_data(e) for e in data))


@dataclass(frozen=True)
class ActionRecord:
    """Named control values in schema order. Hashable, so identical records
    compare equal and can be counted."""
    controls: tuple[tuple[str, ControlValue], ...]

    @classmethod
    def from_mapping(cls: Type[Self], schema: ActionSchema, values: dict[str, ControlValue]) -> Self:
        missing = [n for n in schema.names if n not in values]
        if missing:
            raise DemoSetError(f"action is missing controls {missing}")
        extra = [n for n in values if n not in schema.names]
        if extra:
            raise DemoSetError(f"action has unknown controls {extra}")
        controls: list[tuple[str, ControlValue]] = []
        for entry in schema.entries:
            value = values[entry.name]
            controls.append((entry.name, bool(value) if entry.kind == 'boolean' else float(np.float32(value))))
        return cls(tuple(controls))

    def get(self, name: str) -> ControlValue:
        for key, value in self.controls:
            if key == name:
                return value
        raise KeyError(name)

    def as_dict(self) -> dict[str, ControlValue]:
        return dict(self.controls)

    def problems(self, schema: ActionSchema) -> list[str]:
        if tuple(k for k, _ in self.controls) != schema.names:
            return ["control names do not match schema"]
        problems: list[str] = []
        for (name, value), entry in zip(self.controls, schema.entries):
            if entry.kind == 'boolean':
                if not isinstance(value, bool):
                    problems.append(f"control {name!r} must be boolean")
                continue
            if isinstance(value, bool) or not isinstance(value, float):
                problems.append(f"control {name!r} must be real")
            elif not np.isfinite(value):
                problems.append(f"control {name!r} non-finite")
            elif entry.min is not None and entry.max is not None and not entry.min <= value <= entry.max:
                problems.append(f"control {name!r} value {value} outside [{entry.min}, {entry.max}]")
        return problems


@dataclass(frozen=True)
class Frame:
    embedding: Embedding
    action: ActionRecord


@dataclass(frozen=True)
class SituationRef:
    traj_id: TrajectoryID
    offset: int

    def advanced(self) -> "SituationRef":
        return SituationRef(self.traj_id, self.offset + 1)

    def key(self) -> tuple[int, int]:
        return (self.traj_id, self.offset)


@dataclass(eq=False)
class Trajectory:
    """Frames are held column-wise: a (length, d) float32 block plus one action
    per row."""
    id: TrajectoryID
    embeddings: npt.NDArray[np.float32]
    actions: list[ActionRecord]

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim == 1 and self.embeddings.size == 0:
            self.embeddings = self.embeddings.reshape(0, 0)

    @classmethod
    def from_frames(cls: Type[Self], id: int, frames: list[Frame]) -> Self:
        if not frames:
            return cls(TrajectoryID(id), np.zeros((0, 0), dtype=np.float32), [])
        return cls(
            TrajectoryID(id),
            np.stack([as_embedding(f.embedding) for f in frames]),
            [f.action for f in frames]
        )

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.id == other.id
                and self.embeddings.shape == other.embeddings.shape
                and self.embeddings.tobytes() == other.embeddings.tobytes()
                and self.actions == other.actions)

    @property
    def frames(self) -> Iterator[Frame]:
        for embedding, action in zip(self.embeddings, self.actions):
            yield Frame(embedding, action)

    def frame(self, offset: int) -> Frame:
        return Frame(self.embeddings[offset], self.actions[offset])


@dataclass(frozen=True)
class Violation:
    rule: str
    traj_id: Optional[int] = None
    frame: Optional[int] = None

    def __str__(self) -> str:
        where: list[str] = []
        if self.traj_id is not None:
            where.append(f"traj {self.traj_id}")
        if self.frame is not None:
            where.append(f"frame {self.frame}")
        return f"{', '.join(where)}: {self.rule}" if where else self.rule


@dataclass(eq=False)
class DemoSet:
    dimension: int
    schema: ActionSchema
    trajectories: list[Trajectory] = field(default_factory=list)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DemoSet):
            return NotImplemented
        return (self.dimension == other.dimension
                and self.schema == other.schema
                and self.trajectories == other.trajectories)

    @property
    def frame_count(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def ids(self) -> list[TrajectoryID]:
        return [t.id for t in self.trajectories]

    def trajectory(self, traj_id: int) -> Trajectory:
        for trajectory in self.trajectories:
            if trajectory.id == traj_id:
                return trajectory
        raise DemoSetError(f"no trajectory with id {traj_id}")


def validate(demos: DemoSet) -> list[Violation]:
    violations: list[Violation] = []
    if demos.dimension < 1:
        violations.append(Violation(f"dimension {demos.dimension} is not positive"))
    violations.extend(Violation(f"schema: {p}") for p in demos.schema.problems())

    seen: set[int] = set()
    for trajectory in demos.trajectories:
        tid = int(trajectory.id)
        if tid < 0:
            violations.append(Violation("negative id", tid))
        if tid in seen:
            violations.append(Violation(f"duplicate id {tid}", tid))
        seen.add(tid)

        if len(trajectory) == 0:
            violations.append(Violation("empty trajectory", tid))
            continue
        embeddings = trajectory.embeddings
        if embeddings.ndim != 2 or embeddings.shape[0] != len(trajectory.actions):
            violations.append(Violation("embedding rows do not match action count", tid))
            continue
        if embeddings.shape[1] != demos.dimension:
            violations.append(Violation(
                f"dimension {embeddings.shape[1]} != {demos.dimension}", tid, 0))
            continue
        for offset in np.flatnonzero(~np.isfinite(embeddings).all(axis=1)):
            violations.append(Violation("non-finite", tid, int(offset)))

        checked: dict[ActionRecord, list[str]] = {}
        for offset, action in enumerate(trajectory.actions):
            if action not in checked:
                checked[action] = action.problems(demos.schema)
            violations.extend(Violation(p, tid, offset) for p in checked[action])
    return violations


def require_valid(demos: DemoSet) -> None:
    if not demos.trajectories:
        raise DemoSetError("empty demo set")
    violations = validate(demos)
    if violations:
        shown = '; '.join(str(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ''
        raise DemoSetError(f"invalid demo set: {shown}{more}")


def subset(demos: DemoSet, n: int, seed: int = 0) -> DemoSet:
    """Seed 0 keeps the first n trajectories; any other seed draws a uniform
    n-subset from the PCG64 stream, keeping stored order."""
    count = len(demos.trajectories)
    if not 1 <= n <= count:
        raise DemoSetError(f"subset size {n} outside [1, {count}]")
    if seed == 0:
        chosen = list(range(n))
    else:
        rng = make_generator(seed)
        chosen = sorted(int(i) for i in rng.choice(count, size=n, replace=False))
    return DemoSet(demos.dimension, demos.schema, [demos.trajectories[i] for i in chosen])
