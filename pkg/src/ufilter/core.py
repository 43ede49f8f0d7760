"""Alphabets, channels, loss matrices and the Bayes response."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidChannelError, NonInvertibleChannelError

ROW_SUM_TOL = 1e-12
SIMPLEX_TOL = 1e-9
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise InvalidArgumentError(f"alphabet size must be an integer >= 2, got {self.size}")

    @property
    def symbols(self):
        return range(self.size)


def _as_matrix(values, name):
    arr = np.array(values, dtype=float)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def check_row_stochastic(matrix, name="matrix", tol=ROW_SUM_TOL):
    """Raise :class:`InvalidArgumentError` naming the first offending row."""
    matrix = np.asarray(matrix, dtype=float)
    if np.any(matrix < 0):
        i, j = np.argwhere(matrix < 0)[0]
        raise InvalidArgumentError(f"{name}[{i}][{j}] is negative")
    sums = matrix.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        i = bad[0]
        raise InvalidArgumentError(f"{name} row {i} sums to {float(sums[i])!r}, not 1")


@dataclass(frozen=True)
class Channel:
    """A strictly positive, invertible DMC ``matrix[x, z] = P(z | x)``.

    Build instances with :func:`channel_constants`; the derived fields are
    filled in there.
    """

    matrix: np.ndarray
    inverse: np.ndarray = field(repr=False)
    pi_min: float
    k_pi: float

    @property
    def size(self):
        return self.matrix.shape[0]


def channel_constants(matrix) -> Channel:
    """Validate ``matrix`` and compute its inverse, ``pi_min`` and ``k_pi``.

    ``k_pi`` is the sum of the Euclidean norms of the columns of the inverse.
    """
    pi = _as_matrix(matrix, "channel")
    m, m2 = pi.shape
    if m != m2:
        raise InvalidChannelError(f"channel must be square, got {pi.shape}")
    if m < 2:
        raise InvalidChannelError("channel needs at least two symbols")
    if np.any(pi <= 0):
        i, j = np.argwhere(pi <= 0)[0]
        raise InvalidChannelError(f"channel entry [{i}][{j}] = {pi[i, j]} is not strictly positive")
    try:
        check_row_stochastic(pi, "channel")
    except InvalidArgumentError as exc:
        raise InvalidChannelError(str(exc)) from None
    cond = np.linalg.cond(pi)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NonInvertibleChannelError(f"channel is singular or ill-conditioned (cond={cond:.3g})")
    inv = np.linalg.solve(pi, np.eye(m))
    inv.setflags(write=False)
    k_pi = float(np.linalg.norm(inv, axis=0).sum())
    return Channel(matrix=pi, inverse=inv, pi_min=float(pi.min()), k_pi=k_pi)


def bsc(p) -> Channel:
    """Binary symmetric channel with crossover probability ``p``."""
    return channel_constants([[1.0 - p, p], [p, 1.0 - p]])


def symmetric_channel(M, p) -> Channel:
    """M-ary symmetric channel: keep w.p. ``1 - p``, else uniform over the rest."""
    mat = np.full((M, M), p / (M - 1))
    np.fill_diagonal(mat, 1.0 - p)
    return channel_constants(mat)


@dataclass(frozen=True)
class LossMatrix:
    """``matrix[x, xhat]`` is the loss of reconstructing ``x`` as ``xhat``."""

    matrix: np.ndarray
    lambda_max: float
    c_lambda: float

    @classmethod
    def from_matrix(cls, values):
        lam = _as_matrix(values, "loss")
        if lam.shape[0] != lam.shape[1]:
            raise InvalidArgumentError(f"loss matrix must be square, got {lam.shape}")
        if np.any(lam < 0):
            raise InvalidArgumentError("loss matrix entries must be nonnegative")
        cols = lam.T
        diffs = cols[:, None, :] - cols[None, :, :]
        c_lambda = float(np.sqrt((diffs**2).sum(axis=2)).max())
        return cls(matrix=lam, lambda_max=float(lam.max()), c_lambda=c_lambda)

    @classmethod
    def hamming(cls, M):
        return cls.from_matrix(1.0 - np.eye(M))

    @property
    def size(self):
        return self.matrix.shape[0]


def as_simplex(v, M=None) -> np.ndarray:
    """Check that ``v`` is a probability vector and return it as an array."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or (M is not None and arr.size != M):
        raise InvalidArgumentError(f"expected a simplex vector of length {M}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or abs(arr.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidArgumentError(f"not a probability vector: {arr}")
    return arr


def bayes_response(v, loss: LossMatrix) -> int:
    """Symbol minimizing ``lambda_xhat . v``; ties go to the lowest index."""
    v = np.asarray(v, dtype=float)
    if v.shape != (loss.size,) or not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"bayes_response needs a finite vector of length {loss.size}")
    return int(np.argmin(v @ loss.matrix))


def bayes_responses(V, loss: LossMatrix) -> np.ndarray:
    """Row-wise :func:`bayes_response` for a ``(T, M)`` array."""
    return np.argmin(np.asarray(V) @ loss.matrix, axis=1)


def expected_loss(x, decision, loss: LossMatrix) -> float:
    """Loss of true symbol ``x`` under a randomized decision distribution."""
    decision = as_simplex(decision, loss.size)
    return float(loss.matrix[x] @ decision)
