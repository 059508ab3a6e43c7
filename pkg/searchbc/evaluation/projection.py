import csv
from dataclasses import dataclass
from logging import getLogger
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from ..demos.types import make_generator
from ..search.controller import SearchEvent
from ..search.index import LatentIndex

POWER_ITERATIONS = 5000
POWER_TOLERANCE = 1e-12
CSV_HEADER = ('x', 'y', 'traj_id', 'offset', 'label')
SEARCH_CSV_HEADER = ('step', 'trigger', 'traj_id', 'offset', 'x', 'y', 'label')

Label = bool | int | str

_log = getLogger(__name__)


class ProjectionError(Exception):
    pass


@dataclass(frozen=True)
class ProjectionRow:
    x: float
    y: float
    traj_id: int
    offset: int
    label: Label


@dataclass
class Projection:
    rows: list[ProjectionRow]
    components: npt.NDArray[np.float64]
    eigenvalues: npt.NDArray[np.float64]
    total_variance: float
    zero_variance: bool = False

    @property
    def explained_variance_ratio(self) -> float:
        if self.total_variance <= 0:
            return 0.0
        return float(self.eigenvalues.sum() / self.total_variance)


def power_iteration(matrix: npt.NDArray[np.float64], start: npt.NDArray[np.float64],
                    basis: Sequence[npt.NDArray[np.float64]] = (),
                    iterations: int = POWER_ITERATIONS,
                    tolerance: float = POWER_TOLERANCE) -> tuple[float, npt.NDArray[np.float64]]:
    """Dominant eigenpair of a symmetric PSD matrix, kept orthogonal to basis."""
    def orthogonalize(v: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        for b in basis:
            v = v - (v @ b) * b
        return v

    vector = orthogonalize(start)
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ProjectionError("start vector lies in the deflated subspace")
    vector = vector / norm
    for _ in range(iterations):
        candidate = orthogonalize(matrix @ vector)
        norm = np.linalg.norm(candidate)
        if norm < 1e-300:
            # remaining spectrum is zero; any orthonormal direction will do
            return 0.0, vector
        candidate = candidate / norm
        converged = np.linalg.norm(candidate - vector) < tolerance
        vector = candidate
        if converged:
            break
    # re-orthogonalize once more so the basis stays orthonormal to rounding
    vector = orthogonalize(vector)
    vector = vector / np.linalg.norm(vector)
    return float(vector @ matrix @ vector), vector


def principal_components(data: npt.NDArray[np.float64], k: int = 2
                         ) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], float]:
    """Top-k eigenpairs of the sample covariance by power iteration with
    deflation. Returns (eigenvalues, components (k x d), total variance)."""
    centered = data - data.mean(axis=0)
    covariance = centered.T @ centered / max(1, data.shape[0] - 1)
    total = float(np.trace(covariance))
    rng = make_generator(0)
    values: list[float] = []
    vectors: list[npt.NDArray[np.float64]] = []
    deflated = covariance.copy()
    for _ in range(min(k, data.shape[1])):
        value, vector = power_iteration(deflated, rng.standard_normal(data.shape[1]), vectors)
        values.append(value)
        vectors.append(vector)
        deflated = deflated - value * np.outer(vector, vector)
    components = np.zeros((k, data.shape[1]))
    components[:len(vectors)] = vectors
    return np.array(values + [0.0] * (k - len(values))), components, total


def project_2d(index: LatentIndex, labels: Sequence[Label]) -> Projection:
    if index.size < 2:
        raise ProjectionError(f"projection needs at least 2 frames, index has {index.size}")
    if len(labels) != index.size:
        raise ProjectionError(f"{len(labels)} labels for {index.size} frames")
    data = index.embeddings.astype(np.float64)
    centered = data - data.mean(axis=0)

    if not np.any(centered):
        _log.warning('All frames are identical; projecting every frame to (0, 0)')
        coords = np.zeros((index.size, 2))
        components = np.eye(2, index.dimension)
        eigenvalues = np.zeros(2)
        total = 0.0
        zero = True
    else:
        eigenvalues, components, total = principal_components(data, 2)
        coords = centered @ components.T
        zero = False

    rows = [ProjectionRow(float(coords[i, 0]), float(coords[i, 1]),
                          int(index.traj_ids[i]), int(index.offsets[i]), labels[i])
            for i in range(index.size)]
    _log.info(f'Projected {index.size} frames; explained variance '
              f'{(eigenvalues.sum() / total) if total else 0.0:.4f}')
    return Projection(rows, components, eigenvalues, total, zero)


def _label_text(label: Label) -> str:
    if isinstance(label, bool):
        return '1' if label else '0'
    return str(label)


def write_csv(projection: Projection, path: Path) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        for row in projection.rows:
            writer.writerow((f'{row.x:.9g}', f'{row.y:.9g}', row.traj_id, row.offset, _label_text(row.label)))


def search_path(projection: Projection, index: LatentIndex,
                events: Sequence[SearchEvent]) -> list[tuple[SearchEvent, ProjectionRow]]:
    """Each search event paired with the projected point of the frame it chose."""
    return [(event, projection.rows[index.position(event.chosen)]) for event in events]


def write_search_csv(path_rows: list[tuple[SearchEvent, ProjectionRow]], path: Path) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SEARCH_CSV_HEADER)
        for event, row in path_rows:
            writer.writerow((event.step, event.trigger, row.traj_id, row.offset,
                             f'{row.x:.9g}', f'{row.y:.9g}', _label_text(row.label)))
