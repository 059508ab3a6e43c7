import math
import time
from dataclasses import dataclass
from logging import getLogger
from typing import Optional

import numpy as np
import numpy.typing as npt

from ..demos.types import (ActionRecord, DemoSet, Embedding,
                           SituationRef, TrajectoryID, as_embedding,
                           require_valid)

# rows scored per block; keeps the float64 scratch array small
_BLOCK_ROWS = 8192
# values (rows x d) scored per pruned block
_BLOCK_VALUES = 1 << 22
_SAMPLE_ROWS = 256
# above this share of first-chunk survivors a block is scored whole
_DENSE_FRACTION = 0.25
# pruning slack; far above the float64 summation error for any realistic d
_PRUNE_SLACK = 1e-9

_log = getLogger(__name__)


class DimensionMismatch(Exception):
    pass


class EmptyIndexError(Exception):
    pass


class CalibrationError(Exception):
    pass


def l1_distance(a: Embedding, b: Embedding) -> float:
    a = as_embedding(a)
    b = as_embedding(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions differ: {a.shape[0]} != {b.shape[0]}")
    return float(_row_distances(a.reshape(1, -1), b.astype(np.float64))[0])


def _row_distances(rows: npt.NDArray[np.float32], query: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Per-row L1 distance accumulated in float64. Every exact distance in this
    module goes through here so both search paths round identically."""
    return np.abs(rows.astype(np.float64) - query).sum(axis=1)


@dataclass(frozen=True)
class SearchResult:
    ref: SituationRef
    distance: float


class LatentIndex:
    """Flat, immutable table of every demo frame in (traj_id, offset) order."""

    def __init__(self, embeddings: npt.NDArray[np.float32], traj_ids: npt.NDArray[np.int64],
                 offsets: npt.NDArray[np.int64], actions: list[ActionRecord],
                 starts: dict[TrajectoryID, int], lengths: dict[TrajectoryID, int]) -> None:
        self.embeddings = embeddings
        self.traj_ids = traj_ids
        self.offsets = offsets
        self.actions = actions
        self._starts = starts
        self._lengths = lengths
        self.embeddings.setflags(write=False)
        self.traj_ids.setflags(write=False)
        self.offsets.setflags(write=False)

    @property
    def dimension(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def size(self) -> int:
        return int(self.embeddings.shape[0])

    def __len__(self) -> int:
        return self.size

    def trajectory_length(self, traj_id: int) -> int:
        return self._lengths[TrajectoryID(traj_id)]

    def contains(self, ref: SituationRef) -> bool:
        length = self._lengths.get(ref.traj_id)
        return length is not None and 0 <= ref.offset < length

    def position(self, ref: SituationRef) -> int:
        if not self.contains(ref):
            raise KeyError(ref)
        return self._starts[ref.traj_id] + ref.offset

    def ref_at(self, position: int) -> SituationRef:
        return SituationRef(TrajectoryID(int(self.traj_ids[position])), int(self.offsets[position]))

    def embedding_at(self, ref: SituationRef) -> Embedding:
        return self.embeddings[self.position(ref)]

    def action_at(self, ref: SituationRef) -> ActionRecord:
        return self.actions[self.position(ref)]

    def _check_query(self, query: Embedding) -> npt.NDArray[np.float64]:
        query = as_embedding(query)
        if query.shape[0] != self.dimension:
            raise DimensionMismatch(f"query has dimension {query.shape[0]}, index has {self.dimension}")
        return query.astype(np.float64)

    def _result(self, position: int, distance: float) -> SearchResult:
        return SearchResult(self.ref_at(position), float(distance))

    def nearest_bruteforce(self, query: Embedding) -> SearchResult:
        q = self._check_query(query)
        best_pos, best = -1, math.inf
        for start in range(0, self.size, _BLOCK_ROWS):
            distances = _row_distances(self.embeddings[start:start + _BLOCK_ROWS], q)
            i = int(np.argmin(distances))
            if distances[i] < best:
                best_pos, best = start + i, float(distances[i])
        return self._result(best_pos, best)

    def nearest(self, query: Embedding) -> SearchResult:
        """Exact search with partial-distance early abandon.

        Dimensions are scanned in chunks; a candidate whose running sum already
        exceeds the best full distance found so far is dropped. Survivors are
        rescored with the same full-row sum as the brute-force path, so results
        match it bit for bit. A block where most rows survive the first chunk
        is scored whole instead."""
        q = self._check_query(query)
        d = self.dimension
        chunk = max(8, d // 8)
        block_rows = self._block_rows()

        # seed the bound with a strided sample so every block can be pruned
        sample = np.arange(0, self.size, max(1, self.size // _SAMPLE_ROWS))
        sample_distances = _row_distances(self.embeddings[sample], q)
        bound = float(sample_distances.min()) * (1 + _PRUNE_SLACK) + _PRUNE_SLACK

        best_pos, best = -1, math.inf
        for start in range(0, self.size, block_rows):
            block = self.embeddings[start:start + block_rows]
            partial = np.abs(block[:, :chunk].astype(np.float64) - q[:chunk]).sum(axis=1)
            alive = np.flatnonzero(partial <= bound)
            if alive.size > _DENSE_FRACTION * block.shape[0]:
                distances = _row_distances(block, q)
                i = int(np.argmin(distances))
                position = start + i
            else:
                partial = partial[alive]
                for lo in range(chunk, d, chunk):
                    if alive.size == 0:
                        break
                    rows = block[alive, lo:lo + chunk]
                    partial += np.abs(rows.astype(np.float64) - q[lo:lo + chunk]).sum(axis=1)
                    keep = partial <= bound
                    alive = alive[keep]
                    partial = partial[keep]
                if alive.size == 0:
                    continue
                distances = _row_distances(block[alive], q)
                i = int(np.argmin(distances))
                position = start + int(alive[i])
            if distances[i] < best:
                best_pos, best = position, float(distances[i])
                bound = min(bound, best * (1 + _PRUNE_SLACK) + _PRUNE_SLACK)
        return self._result(best_pos, best)

    def _block_rows(self) -> int:
        return max(1024, _BLOCK_VALUES // max(1, self.dimension))


def build_index(demos: DemoSet) -> LatentIndex:
    """Single linear pass: concatenate frames in ascending (traj_id, offset)."""
    if not demos.trajectories or demos.frame_count == 0:
        raise EmptyIndexError("empty demo set")
    require_valid(demos)

    started = time.perf_counter()
    ordered = sorted(demos.trajectories, key=lambda t: t.id)
    lengths = {t.id: len(t) for t in ordered}
    starts: dict[TrajectoryID, int] = {}
    cursor = 0
    for trajectory in ordered:
        starts[trajectory.id] = cursor
        cursor += len(trajectory)

    embeddings = np.concatenate([t.embeddings for t in ordered], axis=0)
    traj_ids = np.repeat(np.array([t.id for t in ordered], dtype=np.int64),
                         [len(t) for t in ordered])
    offsets = np.concatenate([np.arange(len(t), dtype=np.int64) for t in ordered])
    actions = [a for t in ordered for a in t.actions]

    index = LatentIndex(embeddings, traj_ids, offsets, actions, starts, lengths)
    _log.info(f'Built index: {index.size} frames, d={index.dimension}, '
              f'{(time.perf_counter() - started) * 1000:.1f}ms')
    return index


def nearest(index: LatentIndex, query: Embedding) -> SearchResult:
    return index.nearest(query)


def nearest_bruteforce(index: LatentIndex, query: Embedding) -> SearchResult:
    return index.nearest_bruteforce(query)


def consecutive_distances(demos: DemoSet) -> npt.NDArray[np.float64]:
    parts: list[npt.NDArray[np.float64]] = []
    for trajectory in demos.trajectories:
        if len(trajectory) < 2:
            raise CalibrationError(f"trajectory {trajectory.id} has fewer than 2 frames")
        e = trajectory.embeddings.astype(np.float64)
        parts.append(np.abs(e[1:] - e[:-1]).sum(axis=1))
    if not parts:
        raise CalibrationError("empty demo set")
    return np.concatenate(parts)


def calibrate_threshold(demos: DemoSet, quantile: float) -> float:
    """Nearest-rank quantile of within-trajectory step distances."""
    if not 0 < quantile <= 1:
        raise CalibrationError(f"quantile {quantile} outside (0, 1]")
    distances = np.sort(consecutive_distances(demos))
    rank = math.ceil(quantile * distances.size)
    threshold = float(distances[max(rank, 1) - 1])
    _log.debug(f'Calibrated div_threshold={threshold} at q={quantile} over {distances.size} steps')
    return threshold


def parse_threshold(value: str) -> tuple[Optional[float], Optional[float]]:
    """'auto:q' -> (None, q); a number -> (number, None)."""
    if value.startswith('auto:'):
        q = float(value[len('auto:'):])
        if not 0 < q <= 1:
            raise ValueError(f"quantile {q} outside (0, 1]")
        return None, q
    threshold = float(value)
    if not math.isfinite(threshold) or threshold < 0:
        raise ValueError(f"div_threshold must be a non-negative number, got {value}")
    return threshold, None
