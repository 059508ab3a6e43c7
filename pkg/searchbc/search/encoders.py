from abc import abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Any, Literal, Sequence

import numpy as np
import numpy.typing as npt

from ..demos.types import (ActionRecord, Embedding, Trajectory, TrajectoryID,
                           make_generator)

EncoderKind = Literal['identity', 'random_projection', 'stacked_window']


class EncoderError(Exception):
    pass


@dataclass
class EncoderConfig:
    kind: EncoderKind = 'stacked_window'
    # output dimension for random_projection; identity and stacked_window derive theirs
    dimension: int = 64
    seed: int = 0
    window: int = 8
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ('identity', 'random_projection', 'stacked_window'):
            raise EncoderError(f"unknown encoder kind {self.kind!r}")
        if self.dimension < 1:
            raise EncoderError("encoder dimension must be >= 1")
        if self.window < 1:
            raise EncoderError("stacked_window needs window >= 1")

    def output_dim(self, input_dim: int) -> int:
        match self.kind:
            case 'identity':
                return input_dim
            case 'random_projection':
                return self.dimension
            case 'stacked_window':
                return self.window * input_dim


class Encoder:
    def __init__(self, input_dim: int) -> None:
        if input_dim < 1:
            raise EncoderError("encoder input length must be >= 1")
        self.input_dim = input_dim

    @property
    @abstractmethod
    def output_dim(self) -> int:
        raise NotImplementedError

    @abstractmethod
    def _encode(self, obs: npt.NDArray[np.float64]) -> Embedding:
        raise NotImplementedError

    def reset_history(self) -> None:
        pass

    def encode(self, obs: Sequence[float] | npt.NDArray[Any]) -> Embedding:
        x = np.asarray(obs, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            raise EncoderError(f"observation length {x.size} != encoder input {self.input_dim}")
        if not np.isfinite(x).all():
            raise EncoderError("observation has non-finite entries")
        return self._encode(x)

    def encode_trajectory(self, traj_id: int, observations: Sequence[Any],
                          actions: Sequence[ActionRecord]) -> Trajectory:
        if len(observations) != len(actions):
            raise EncoderError(f"{len(observations)} observations but {len(actions)} actions")
        if not observations:
            raise EncoderError("cannot encode an empty trajectory")
        self.reset_history()
        embeddings = np.stack([self.encode(obs) for obs in observations])
        return Trajectory(TrajectoryID(traj_id), embeddings, list(actions))


class IdentityEncoder(Encoder):
    @property
    def output_dim(self) -> int:
        return self.input_dim

    def _encode(self, obs: npt.NDArray[np.float64]) -> Embedding:
        return obs.astype(np.float32)


class RandomProjectionEncoder(Encoder):
    """W·x with W (d x m) drawn once from PCG64(seed): standard normal, scaled
    by scale/sqrt(m)."""

    def __init__(self, input_dim: int, dimension: int, seed: int, scale: float = 1.0) -> None:
        super().__init__(input_dim)
        self._dimension = dimension
        self.matrix = projection_matrix(input_dim, dimension, seed, scale)
        self.matrix.setflags(write=False)

    @property
    def output_dim(self) -> int:
        return self._dimension

    def _encode(self, obs: npt.NDArray[np.float64]) -> Embedding:
        return (self.matrix @ obs).astype(np.float32)


class StackedWindowEncoder(Encoder):
    """Concatenation of the last n observations, most recent last, zero-padded
    on the left. Stateful: one instance per running episode."""

    def __init__(self, input_dim: int, window: int) -> None:
        super().__init__(input_dim)
        self.window = window
        self._history: deque[npt.NDArray[np.float64]] = deque(maxlen=window)
        self.reset_history()

    @property
    def output_dim(self) -> int:
        return self.window * self.input_dim

    def reset_history(self) -> None:
        self._history.clear()
        for _ in range(self.window):
            self._history.append(np.zeros(self.input_dim, dtype=np.float64))

    def _encode(self, obs: npt.NDArray[np.float64]) -> Embedding:
        self._history.append(obs.copy())
        return np.concatenate(self._history).astype(np.float32)


def projection_matrix(input_dim: int, dimension: int, seed: int, scale: float = 1.0) -> npt.NDArray[np.float64]:
    rng = make_generator(seed)
    return rng.standard_normal((dimension, input_dim)) * (scale / np.sqrt(input_dim))


def make_encoder(config: EncoderConfig, input_dim: int) -> Encoder:
    match config.kind:
        case 'identity':
            return IdentityEncoder(input_dim)
        case 'random_projection':
            return RandomProjectionEncoder(input_dim, config.dimension, config.seed, config.scale)
        case 'stacked_window':
            return StackedWindowEncoder(input_dim, config.window)


def encode(encoder: Encoder, obs: Sequence[float] | npt.NDArray[Any]) -> Embedding:
    return encoder.encode(obs)


def reset_history(encoder: Encoder) -> None:
    encoder.reset_history()


def encode_trajectory(encoder: Encoder, observations: Sequence[Any], actions: Sequence[ActionRecord],
                      traj_id: int = 0) -> Trajectory:
    return encoder.encode_trajectory(traj_id, observations, actions)
