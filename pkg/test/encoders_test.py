from unittest import TestCase

import numpy as np

from searchbc.demos.types import ActionRecord, make_generator
from searchbc.search.encoders import (EncoderConfig, EncoderError,
                                      IdentityEncoder, RandomProjectionEncoder,
                                      StackedWindowEncoder, encode,
                                      encode_trajectory, make_encoder,
                                      reset_history)

_ACTION = ActionRecord((('stay', True),))


class TestIdentity(TestCase):

    def test_identity(self):
        encoder = IdentityEncoder(2)
        np.testing.assert_array_equal(encode(encoder, [0.5, -1]), np.array([0.5, -1], dtype=np.float32))
        reset_history(encoder)
        np.testing.assert_array_equal(encode(encoder, [0.5, -1]), np.array([0.5, -1], dtype=np.float32))

    def test_trajectory_equals_observations(self):
        observations = [np.array([0.25, 1.0]), np.array([0.5, 0.0])]
        trajectory = encode_trajectory(IdentityEncoder(2), observations, [_ACTION] * 2, traj_id=3)
        self.assertEqual(trajectory.id, 3)
        np.testing.assert_array_equal(trajectory.embeddings, np.stack(observations).astype(np.float32))

    def test_bad_input(self):
        encoder = IdentityEncoder(2)
        with self.assertRaises(EncoderError):
            encode(encoder, [1.0, 2.0, 3.0])
        with self.assertRaises(EncoderError):
            encode(encoder, [1.0, np.nan])


class TestStackedWindow(TestCase):

    def test_zero_padded_order(self):
        encoder = StackedWindowEncoder(1, 3)
        encode(encoder, [1.0])
        np.testing.assert_array_equal(encode(encoder, [2.0]), np.array([0, 1, 2], dtype=np.float32))

    def test_reset(self):
        encoder = StackedWindowEncoder(2, 3)
        encode(encoder, [5.0, 5.0])
        reset_history(encoder)
        reset_history(encoder)
        np.testing.assert_array_equal(encode(encoder, [1.0, 2.0]), np.array([0, 0, 0, 0, 1, 2], dtype=np.float32))

    def test_trajectory(self):
        trajectory = encode_trajectory(StackedWindowEncoder(1, 2), [[3.0], [4.0]], [_ACTION] * 2)
        np.testing.assert_array_equal(trajectory.embeddings, np.array([[0, 3], [3, 4]], dtype=np.float32))

    def test_trajectory_resets_first(self):
        encoder = StackedWindowEncoder(1, 2)
        first = encode_trajectory(encoder, [[3.0], [4.0]], [_ACTION] * 2)
        second = encode_trajectory(encoder, [[3.0], [4.0]], [_ACTION] * 2)
        self.assertEqual(first, second)

    def test_input_not_aliased(self):
        encoder = StackedWindowEncoder(1, 2)
        obs = np.array([1.0])
        encode(encoder, obs)
        obs[0] = 9.0
        np.testing.assert_array_equal(encode(encoder, [2.0]), np.array([1, 2], dtype=np.float32))

    def test_shift(self):
        m, n = 3, 4
        encoder = StackedWindowEncoder(m, n)
        observations = make_generator(17).standard_normal((50, m))
        previous = np.zeros(m * n, dtype=np.float32)
        for obs in observations:
            embedding = encode(encoder, obs)
            np.testing.assert_array_equal(embedding[:-m], previous[m:])
            np.testing.assert_array_equal(embedding[-m:], obs.astype(np.float32))
            previous = embedding

    def test_history_separates_equal_observations(self):
        m, n = 2, 3
        rng = make_generator(23)
        for _ in range(100):
            shared = rng.standard_normal((n + 2, m))
            other = shared.copy()
            lag = int(rng.integers(1, n + 2))
            other[-1 - lag] += 1.0
            a = encode_trajectory(StackedWindowEncoder(m, n), list(shared), [_ACTION] * len(shared))
            b = encode_trajectory(StackedWindowEncoder(m, n), list(other), [_ACTION] * len(other))
            # same current observation; only a change inside the window shows
            if lag < n:
                self.assertFalse(np.array_equal(a.embeddings[-1], b.embeddings[-1]))
            else:
                np.testing.assert_array_equal(a.embeddings[-1], b.embeddings[-1])


class TestRandomProjection(TestCase):

    def test_matches_regenerated_matrix(self):
        m, d, seed = 27, 16, 1234
        encoder = RandomProjectionEncoder(m, d, seed)
        x = make_generator(9).standard_normal(m)
        matrix = np.random.Generator(np.random.PCG64(seed)).standard_normal((d, m)) / np.sqrt(m)
        expected = (matrix @ x).astype(np.float32)
        np.testing.assert_array_equal(encode(encoder, x), expected)
        np.testing.assert_array_equal(encode(encoder, x), encode(encoder, x))

    def test_output_dim(self):
        encoder = make_encoder(EncoderConfig(kind='random_projection', dimension=5), 27)
        self.assertEqual(encoder.output_dim, 5)
        self.assertEqual(encode(encoder, np.ones(27)).shape, (5,))


class TestConfig(TestCase):

    def test_output_dims(self):
        self.assertEqual(EncoderConfig(kind='identity').output_dim(27), 27)
        self.assertEqual(EncoderConfig(kind='stacked_window', window=8).output_dim(27), 216)
        self.assertEqual(EncoderConfig(kind='random_projection', dimension=64).output_dim(27), 64)
        for kind in ('identity', 'stacked_window', 'random_projection'):
            config = EncoderConfig(kind=kind)  # type: ignore[arg-type]
            self.assertEqual(make_encoder(config, 27).output_dim, config.output_dim(27))

    def test_invalid(self):
        with self.assertRaises(EncoderError):
            EncoderConfig(kind='cnn')  # type: ignore[arg-type]
        with self.assertRaises(EncoderError):
            EncoderConfig(window=0)
        with self.assertRaises(EncoderError):
            IdentityEncoder(0)
