"""Deterministic numeric plumbing: seeded RNG, gradient checking, distribution metrics.

Everything downstream works on plain float64 numpy arrays; this module owns the
randomness and the cross-cutting verification helpers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidArgumentError, NumericalError


class RngStream:
    """Counter-based (Philox) random stream with deterministic splitting.

    Identical seed + identical call sequence gives identical output on every
    platform. Substreams are keyed by (seed, spawn_key), so a child stream is
    independent of how much the parent has been consumed.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.Philox(ss))
        self._n_spawned = 0

    def split(self, n: int) -> list["RngStream"]:
        """Return n fresh substreams, pairwise independent and independent of self."""
        children = [
            RngStream(self.seed, self.spawn_key + (self._n_spawned + i,))
            for i in range(n)
        ]
        self._n_spawned += n
        return children

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)


def _validate_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise InvalidArgumentError("shape must be nonempty")
    if any(s < 1 for s in shape):
        raise InvalidArgumentError(f"all dims must be >= 1, got {shape}")
    return shape


def gaussian_sample(rng: RngStream, shape) -> np.ndarray:
    """Draw i.i.d. standard-normal entries of the given shape, advancing the stream."""
    return rng.normal(_validate_shape(shape))


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: int
    per_parameter_errors: np.ndarray


def finite_diff_check(loss_fn, params: np.ndarray, step: float = 1e-5) -> GradCheckReport:
    """Compare the analytic gradient of loss_fn against central differences.

    loss_fn(p) must return (loss, grad) with grad the analytic gradient at p.
    Relative error per coordinate uses denominator max(|analytic|, |numeric|, 1e-12).
    """
    if step <= 0:
        raise InvalidArgumentError("step must be > 0")
    params = np.asarray(params, dtype=np.float64)
    _, grad = loss_fn(params)
    grad = np.asarray(grad, dtype=np.float64)
    errors = np.empty(params.size)
    flat = params.ravel()
    for k in range(flat.size):
        p_plus = flat.copy()
        p_plus[k] += step
        p_minus = flat.copy()
        p_minus[k] -= step
        lp, _ = loss_fn(p_plus.reshape(params.shape))
        lm, _ = loss_fn(p_minus.reshape(params.shape))
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericalError(f"non-finite loss while probing coordinate {k}")
        numeric = (lp - lm) / (2.0 * step)
        analytic = grad.ravel()[k]
        denom = max(abs(analytic), abs(numeric), 1e-12)
        errors[k] = abs(analytic - numeric) / denom
    worst = int(np.argmax(errors))
    return GradCheckReport(float(errors[worst]), worst, errors)


def _pairwise_mean(a: np.ndarray, b: np.ndarray, block: int = 2000) -> float:
    """Mean pairwise Euclidean distance, accumulated block-by-block in fixed order."""
    total = 0.0
    for i in range(0, a.shape[0], block):
        total += float(cdist(a[i : i + block], b).sum())
    return total / (a.shape[0] * b.shape[0])


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared energy distance ED^2(a, b) between two sample sets (rows = samples).

    Computed from exhaustive pairwise distances (V-statistic, diagonal included).
    Arguments are canonically ordered internally so the result is exactly
    symmetric in (a, b).
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(
            f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 samples per set")
    # Fix the summation order regardless of argument order.
    if (b.shape[0], b.tobytes()) < (a.shape[0], a.tobytes()):
        a, b = b, a
    cross = _pairwise_mean(a, b)
    within_a = _pairwise_mean(a, a)
    within_b = _pairwise_mean(b, b)
    return 2.0 * cross - within_a - within_b


def sinusoidal_embedding(sigma: np.ndarray, dim: int, max_freq: float = 1000.0) -> np.ndarray:
    """Sin/cos positional features of a time value in [0, 1]; shape (..., dim)."""
    if dim % 2 != 0:
        raise InvalidArgumentError("embedding dim must be even")
    sigma = np.asarray(sigma, dtype=np.float64)
    freqs = np.geomspace(1.0, max_freq, dim // 2)
    ang = sigma[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
