import json
import struct
from logging import getLogger
from pathlib import Path
from typing import Any

import numpy as np
from numpy.lib import recfunctions

from .types import (ActionRecord, ActionSchema, DemoSet, DemoSetError,
                    Trajectory, TrajectoryID, require_valid, validate)

MAGIC = b'SBCD'
VERSION = 1
JSONL_FORMAT = 'sbc-jsonl'

_log = getLogger(__name__)


class MalformedDemoFile(Exception):
    pass


def frame_dtype(dimension: int, schema: ActionSchema) -> np.dtype:
    """Packed little-endian layout of one frame: d float32 then one field per
    control in schema order (u8 for booleans, f32 for reals)."""
    names = ['e'] + [f'c{i}' for i in range(len(schema.entries))]
    formats: list[Any] = [('<f4', (dimension,))]
    formats += ['<u1' if e.kind == 'boolean' else '<f4' for e in schema.entries]
    return np.dtype({'names': names, 'formats': formats})


def _schema_bytes(schema: ActionSchema) -> bytes:
    return json.dumps(schema.to_data(), separators=(',', ':'), ensure_ascii=False).encode('utf-8')


def _pack_trajectory(trajectory: Trajectory, dtype: np.dtype, schema: ActionSchema) -> bytes:
    frames = np.zeros(len(trajectory), dtype=dtype)
    frames['e'] = trajectory.embeddings
    for i, entry in enumerate(schema.entries):
        column = [a.controls[i][1] for a in trajectory.actions]
        frames[f'c{i}'] = np.asarray(column, dtype=np.uint8 if entry.kind == 'boolean' else np.float32)
    return frames.tobytes()


def encode(demos: DemoSet) -> bytes:
    require_valid(demos)
    dtype = frame_dtype(demos.dimension, demos.schema)
    schema = _schema_bytes(demos.schema)
    chunks = [MAGIC, struct.pack('<III', VERSION, demos.dimension, len(schema)), schema,
              struct.pack('<I', len(demos.trajectories))]
    for trajectory in demos.trajectories:
        chunks.append(struct.pack('<QI', trajectory.id, len(trajectory)))
        chunks.append(_pack_trajectory(trajectory, dtype, demos.schema))
    return b''.join(chunks)


def save(demos: DemoSet, path: Path) -> None:
    data = encode(demos)
    with open(path, 'wb') as f:
        f.write(data)
    _log.info(f'Saved {len(demos.trajectories)} trajectories ({demos.frame_count} frames) to {path}')


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise MalformedDemoFile(f"truncated {what} at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _decode_actions(frames: np.ndarray, schema: ActionSchema, at: int) -> list[ActionRecord]:
    if not schema.entries:
        return [ActionRecord(())] * len(frames)
    columns = [f'c{i}' for i in range(len(schema.entries))]
    packed = recfunctions.repack_fields(frames[columns])
    keys = packed.view(np.dtype((np.void, packed.dtype.itemsize)))
    unique, inverse = np.unique(keys, return_inverse=True)

    records: list[ActionRecord] = []
    for row in unique.view(packed.dtype):
        controls: list[tuple[str, bool | float]] = []
        for i, entry in enumerate(schema.entries):
            value = row[f'c{i}']
            if entry.kind == 'boolean':
                if int(value) not in (0, 1):
                    raise MalformedDemoFile(
                        f"boolean control {entry.name!r} holds {int(value)} in frames starting at byte {at}")
                controls.append((entry.name, bool(value)))
            else:
                controls.append((entry.name, float(value)))
        records.append(ActionRecord(tuple(controls)))
    return [records[i] for i in inverse.reshape(-1)]


def decode(data: bytes) -> DemoSet:
    reader = _Reader(data)
    magic = reader.take(4, 'magic')
    if magic != MAGIC:
        raise MalformedDemoFile(f"bad magic {magic!r}")
    version, dimension, schema_len = reader.unpack('<III', 'header')
    if version != VERSION:
        raise MalformedDemoFile(f"unsupported version {version}")
    if dimension < 1:
        raise MalformedDemoFile(f"dimension {dimension} is not positive")
    try:
        schema = ActionSchema.from_data(json.loads(reader.take(schema_len, 'schema').decode('utf-8')))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise MalformedDemoFile(f"unreadable schema: {e}") from e
    if schema.problems():
        raise MalformedDemoFile(f"schema mismatch: {'; '.join(schema.problems())}")

    dtype = frame_dtype(dimension, schema)
    (count,) = reader.unpack('<I', 'trajectory count')
    trajectories: list[Trajectory] = []
    for _ in range(count):
        traj_id, length = reader.unpack('<QI', 'trajectory header')
        at = reader.offset
        frames = np.frombuffer(reader.take(length * dtype.itemsize, 'frame payload'), dtype=dtype)
        trajectories.append(Trajectory(
            TrajectoryID(traj_id),
            np.array(frames['e'], dtype=np.float32).reshape(length, dimension),
            _decode_actions(frames, schema, at)
        ))
    if reader.offset != len(data):
        raise MalformedDemoFile(f"{len(data) - reader.offset} trailing bytes at byte {reader.offset}")

    demos = DemoSet(dimension, schema, trajectories)
    violations = validate(demos)
    if violations:
        raise MalformedDemoFile(f"file content invalid: {violations[0]}")
    return demos


def load(path: Path) -> DemoSet:
    with open(path, 'rb') as f:
        data = f.read()
    demos = decode(data)
    _log.info(f'Loaded {len(demos.trajectories)} trajectories '
              f'({demos.frame_count} frames, d={demos.dimension}) from {path}')
    return demos


def save_jsonl(demos: DemoSet, path: Path) -> None:
    require_valid(demos)
    header = {'format': JSONL_FORMAT, 'version': VERSION,
              'dimension': demos.dimension, 'schema': demos.schema.to_data()}
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(header, sort_keys=True) + '\n')
        for trajectory in demos.trajectories:
            line = {
                'id': int(trajectory.id),
                'embeddings': trajectory.embeddings.astype(np.float64).tolist(),
                'actions': [a.as_dict() for a in trajectory.actions]
            }
            f.write(json.dumps(line, sort_keys=True) + '\n')


def load_jsonl(path: Path) -> DemoSet:
    with open(path, 'r', encoding='utf-8') as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise MalformedDemoFile("empty jsonl file")
    try:
        header = json.loads(lines[0])
        if header.get('format') != JSONL_FORMAT:
            raise MalformedDemoFile(f"bad format tag {header.get('format')!r}")
        schema = ActionSchema.from_data(header['schema'])
        dimension = int(header['dimension'])
        trajectories: list[Trajectory] = []
        for number, line in enumerate(lines[1:], start=2):
            data = json.loads(line)
            embeddings = np.asarray(data['embeddings'], dtype=np.float32).reshape(-1, dimension)
            try:
                actions = [ActionRecord.from_mapping(schema, a) for a in data['actions']]
            except DemoSetError as e:
                raise MalformedDemoFile(f"line {number}: {e}") from e
            trajectories.append(Trajectory(TrajectoryID(data['id']), embeddings, actions))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise MalformedDemoFile(f"unreadable jsonl: {e}") from e

    demos = DemoSet(dimension, schema, trajectories)
    violations = validate(demos)
    if violations:
        raise MalformedDemoFile(f"file content invalid: {violations[0]}")
    return demos


def load_any(path: Path) -> DemoSet:
    if path.suffix == '.jsonl':
        return load_jsonl(path)
    return load(path)


def save_any(demos: DemoSet, path: Path) -> None:
    if path.suffix == '.jsonl':
        save_jsonl(demos, path)
    else:
        save(demos, path)
