"""Randomized Bayes-response filters and the universal filtering run.

The universal filter refits an order-``k`` model at the block boundaries
``m_1 < m_2 < ...`` using every observation seen so far, and between
boundaries filters with that fixed model. Each decision perturbs the
forward posterior with a vector drawn uniformly from an ``epsilon`` ball and
takes the Bayes response of the result.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Channel, LossMatrix, bayes_responses
from .em import EmConfig, em_fit
from .errors import EmptyClassError, InvalidArgumentError
from .hmm import HmpModel, filtered_posteriors

log = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 256
MC_CHUNK_ELEMENTS = 2**22


@dataclass(frozen=True)
class BlockSchedule:
    """Refit times ``m_i = c * i!`` (the only rule currently offered)."""

    c: int = 100
    rule: str = "factorial"

    def __post_init__(self):
        if self.rule != "factorial":
            raise InvalidArgumentError(f"unknown block rule {self.rule!r}")
        if int(self.c) != self.c or self.c < 1:
            raise InvalidArgumentError("schedule constant c must be a positive integer")

    def boundary(self, i):
        return self.c * math.factorial(i)

    def boundaries(self, n):
        """All ``m_i <= n``, in increasing order."""
        out, i = [], 1
        while self.boundary(i) <= n:
            out.append(self.boundary(i))
            i += 1
        return out

    def block_index(self, t):
        """``max{i : m_i <= t}``, or 0 before the first boundary."""
        i = 0
        while self.boundary(i + 1) <= t:
            i += 1
        return i


@dataclass(frozen=True)
class FloorSchedule:
    """Floors ``delta_k = scale * delta0 * 2**-k``."""

    delta0: float = 0.05
    scale: float = 1.0

    def __post_init__(self):
        if not self.delta0 > 0 or not self.scale > 0:
            raise InvalidArgumentError("floor parameters must be positive")

    def delta(self, k):
        return self.scale * self.delta0 * 2.0 ** (-k)

    def scaled(self, factor):
        return replace(self, scale=self.scale * factor)

    def check(self, L):
        if self.scale * self.delta0 > 1.0 / L:
            raise EmptyClassError(f"floor {self.scale * self.delta0} exceeds 1/{L}: the model class is empty")


def sample_ball(eps, M, rng, size=None):
    """Uniform draw(s) from the Euclidean ball of radius ``eps`` in ``R^M``."""
    shape = (M,) if size is None else (size, M)
    if eps == 0:
        return np.zeros(shape)
    g = rng.standard_normal(shape)
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    r = eps * rng.random(shape[:-1]) ** (1.0 / M)
    return g * np.asarray(r)[..., None]


def _boundary_margins(scores, loss: LossMatrix):
    """Distance from each posterior to the nearest decision boundary of its winner."""
    lam = loss.matrix
    b = np.argmin(scores, axis=1)
    cols = lam.T
    norms = np.linalg.norm(cols[:, None, :] - cols[None, :, :], axis=2)
    gap = scores - scores[np.arange(len(b)), b][:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = gap / norms[b]
    # identical loss columns never change the winner; the winner's own column is excluded
    dist[norms[b] == 0] = np.inf
    return b, dist.min(axis=1)


def decision_distributions(posteriors, eps, loss: LossMatrix, mc_samples, rng):
    """Row-wise randomized Bayes decisions for ``(T, M)`` posteriors.

    Rows farther than ``eps`` from every decision boundary are exact point
    masses; the others are Monte Carlo frequencies over ``mc_samples`` ball
    draws.
    """
    V = np.atleast_2d(np.asarray(posteriors, dtype=float))
    T, M = V.shape
    scores = V @ loss.matrix
    out = np.zeros((T, M))
    if eps == 0:
        out[np.arange(T), np.argmin(scores, axis=1)] = 1.0
        return out
    if mc_samples < 1:
        raise InvalidArgumentError("mc_samples must be >= 1 when eps > 0")
    b, margin = _boundary_margins(scores, loss)
    safe = margin > eps
    out[np.flatnonzero(safe), b[safe]] = 1.0
    near = np.flatnonzero(~safe)
    chunk = max(1, MC_CHUNK_ELEMENTS // (mc_samples * M))
    for s in range(0, near.size, chunk):
        rows = near[s : s + chunk]
        U = sample_ball(eps, M, rng, size=rows.size * mc_samples).reshape(rows.size, mc_samples, M)
        picks = np.argmin((V[rows][:, None, :] + U) @ loss.matrix, axis=2)
        for a in range(M):
            out[rows, a] = (picks == a).mean(axis=1)
    return out


def randomized_bayes(posterior, eps, loss: LossMatrix, mc_samples=DEFAULT_MC_SAMPLES, rng=None):
    """Decision distribution of ``B(posterior + U)`` with ``U`` uniform in the ball."""
    if eps > 0 and rng is None:
        raise InvalidArgumentError("a random generator is required when eps > 0")
    return decision_distributions(np.asarray(posterior)[None, :], eps, loss, mc_samples, rng)[0]


def cumulative_loss(x, decisions, loss: LossMatrix) -> float:
    """Normalized cumulative loss of decision distributions against ``x``."""
    x = np.asarray(x, dtype=np.int64)
    D = np.atleast_2d(np.asarray(decisions, dtype=float))
    if x.size != D.shape[0]:
        raise InvalidArgumentError(f"length mismatch: {x.size} symbols, {D.shape[0]} decisions")
    return float(np.mean(np.einsum("tm,tm->t", loss.matrix[x], D)))


def _sample_symbols(D, rng):
    u = rng.random(D.shape[0])
    return np.minimum((u[:, None] >= np.cumsum(D, axis=1)).sum(axis=1), D.shape[1] - 1)


@dataclass
class RunReport:
    """Outcome of one filtering run over ``n`` steps."""

    n: int
    posteriors: np.ndarray = field(repr=False)
    decisions: np.ndarray = field(repr=False)
    sampled: np.ndarray = field(repr=False)
    expected_losses: np.ndarray | None = field(default=None, repr=False)
    realized_losses: np.ndarray | None = field(default=None, repr=False)
    refits: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def loss(self):
        """Expected-loss variant of the normalized cumulative loss."""
        return None if self.expected_losses is None else float(self.expected_losses.mean())

    @property
    def realized_loss(self):
        return None if self.realized_losses is None else float(self.realized_losses.mean())

    def summary(self):
        return {
            "n": self.n,
            "loss": self.loss,
            "realized_loss": self.realized_loss,
            "refits": self.refits,
            "metadata": self.metadata,
        }

    def steps_csv(self, thin=1):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        M = self.posteriors.shape[1]
        head = ["t"] + [f"post{a}" for a in range(M)] + [f"dec{a}" for a in range(M)] + ["sampled"]
        if self.expected_losses is not None:
            head += ["loss", "realized_loss"]
        w.writerow(head)
        for t in range(0, self.n, thin):
            row = [t + 1, *map(repr, self.posteriors[t].tolist()), *map(repr, self.decisions[t].tolist())]
            row.append(int(self.sampled[t]))
            if self.expected_losses is not None:
                row += [repr(float(self.expected_losses[t])), repr(float(self.realized_losses[t]))]
            w.writerow(row)
        return buf.getvalue()


def _finish(posteriors, decisions, x, loss, rng, refits, metadata, started):
    sampled = _sample_symbols(decisions, rng)
    exp_l = real_l = None
    if x is not None:
        exp_l = np.einsum("tm,tm->t", loss.matrix[x], decisions)
        real_l = loss.matrix[x, sampled]
    return RunReport(
        n=len(decisions),
        posteriors=posteriors,
        decisions=decisions,
        sampled=sampled,
        expected_losses=exp_l,
        realized_losses=real_l,
        refits=refits,
        metadata=metadata,
        wall_clock=time.perf_counter() - started,
    )


def _check_x(x, n):
    if x is None:
        return None
    x = np.asarray(x, dtype=np.int64)
    if x.size != n:
        raise InvalidArgumentError(f"clean sequence has length {x.size}, noisy has {n}")
    return x


def model_filter_run(model: HmpModel, z, x, loss: LossMatrix, epsilon, rng, mc_samples=DEFAULT_MC_SAMPLES):
    """Randomized filter with a fixed model over the whole sequence."""
    started = time.perf_counter()
    z = np.asarray(z, dtype=np.int64)
    x = _check_x(x, z.size)
    post, _ = filtered_posteriors(model, z)
    D = decision_distributions(post, epsilon, loss, mc_samples, rng)
    meta = {"epsilon": epsilon, "k": model.order, "delta": model.delta}
    return _finish(post, D, x, loss, rng, [], meta, started)


def universal_filter_run(
    z,
    x=None,
    *,
    k,
    channel,
    loss: LossMatrix,
    epsilon,
    schedule: BlockSchedule = BlockSchedule(),
    floor: FloorSchedule = FloorSchedule(),
    em_config: EmConfig = EmConfig(),
    rng,
    mc_samples=DEFAULT_MC_SAMPLES,
    readout=None,
    n_symbols=None,
    stream=(),
    em_init=None,
):
    """Run the universal filter of order ``k`` on the noisy sequence ``z``.

    ``channel`` is the emission of the hidden letters: a :class:`Channel`
    for the memoryless case, or any positive row-stochastic matrix together
    with ``readout`` for extended hidden alphabets. Before the first block
    boundary the uniform-transition model is used. At each boundary ``m_i``
    the model is refitted on ``z[:m_i]`` and the forward recursion is
    replayed from the first observation under the new model. ``em_init``
    optionally replaces the uniform starting point of every refit.
    """
    started = time.perf_counter()
    z = np.asarray(z, dtype=np.int64)
    n = z.size
    if n == 0:
        raise InvalidArgumentError("empty observation sequence")
    x = _check_x(x, n)
    emission = channel.matrix if isinstance(channel, Channel) else np.asarray(channel, dtype=float)
    L = emission.shape[0]
    floor.check(L)
    delta = floor.delta(k)
    if n_symbols is None:
        n_symbols = L if readout is None else int(np.max(readout)) + 1

    bounds = schedule.boundaries(n)
    starts = [1] + [m for m in bounds if m > 1]
    ends = starts[1:] + [n + 1]
    post = np.empty((n, n_symbols))
    refits = []
    model = HmpModel.uniform(k, emission, delta, readout, n_symbols)
    for block, (t0, t1) in enumerate(zip(starts, ends)):
        if t0 in bounds:
            i = bounds.index(t0) + 1
            model, trace = em_fit(
                z[:t0],
                k,
                delta,
                emission,
                em_config,
                readout=readout,
                n_symbols=n_symbols,
                stream=(*stream, i),
                init=em_init,
            )
            refits.append(
                {
                    "block": i,
                    "t": t0,
                    "loglik": trace.log_likelihoods[-1],
                    "iterations": len(trace.log_likelihoods) - 1,
                    "restart": trace.chosen_restart,
                    "converged": trace.converged,
                }
            )
            log.debug("refit %d at t=%d, loglik %.4f", i, t0, trace.log_likelihoods[-1])
        p, _ = filtered_posteriors(model, z[: t1 - 1])
        post[t0 - 1 : t1 - 1] = p[t0 - 1 :]
    D = decision_distributions(post, epsilon, loss, mc_samples, rng)
    meta = {
        "k": k,
        "epsilon": epsilon,
        "delta": delta,
        "mc_samples": mc_samples,
        "schedule": {"rule": schedule.rule, "c": schedule.c},
        "final_transitions": model.transitions.tolist(),
    }
    return _finish(post, D, x, loss, rng, refits, meta, started)
