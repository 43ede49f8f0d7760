"""Maximum-likelihood fitting of floored order-k models by EM.

The E-step is the usual forward-backward pass. The M-step maximizes
``sum_a counts[a] * log(a_a)`` row by row subject to ``a_a >= delta``, which
keeps every iterate inside the floored class. The stationary law is tied to
the transitions, so after each M-step it is recomputed rather than
re-estimated. That coupling means the plain M-step is not guaranteed to
raise the likelihood; a candidate that lowers it is pulled back towards the
current iterate by step halving, and if no step helps the fit stops.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import EmptyClassError, InsufficientDataError, InvalidArgumentError
from .hmm import HmpModel, _emission_matrix, expected_counts

log = logging.getLogger(__name__)

MAX_HALVINGS = 12
MAX_STRETCH = 64.0


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 300
    rel_tol: float = 1e-7
    restarts: int = 1
    init_jitter: float = 0.5
    seed: int = 0
    record_iterates: bool = False
    overrelax: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise InvalidArgumentError("rel_tol must be positive")
        if self.restarts < 1:
            raise InvalidArgumentError("restarts must be >= 1")
        if not 0 <= self.init_jitter < 1:
            raise InvalidArgumentError("init_jitter must lie in [0, 1)")


@dataclass
class EmTrace:
    log_likelihoods: list = field(default_factory=list)
    chosen_restart: int = 0
    converged: bool = False
    restart_log_likelihoods: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    iterates: list = field(default_factory=list)  # transitions of the chosen restart, if recorded

    @property
    def monotone(self):
        ll = np.asarray(self.log_likelihoods)
        return bool(np.all(np.diff(ll) >= -1e-8))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "loglik"])
        for i, ll in enumerate(self.log_likelihoods):
            w.writerow([i, repr(float(ll))])
        return buf.getvalue()


def m_step_project(counts, delta) -> np.ndarray:
    """Maximize ``sum(counts * log(a))`` over ``{a >= delta, sum(a) = 1}``.

    Coordinates whose scaled count would fall below the floor are pinned at
    ``delta``; the rest share the remaining mass in proportion to their
    counts. Pinning only ever grows the pinned set, so at most ``M`` rounds
    are needed.
    """
    c = np.asarray(counts, dtype=float)
    M = c.size
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise InvalidArgumentError("counts must be finite and nonnegative")
    if delta * M > 1.0 + 1e-15:
        raise EmptyClassError(f"floor {delta} exceeds 1/{M}")
    if c.sum() <= 0:
        return np.full(M, 1.0 / M)
    pinned = np.zeros(M, dtype=bool)
    out = np.empty(M)
    for _ in range(M + 1):
        free = ~pinned
        if not free.any():
            out[:] = delta
            break
        mass = 1.0 - delta * pinned.sum()
        cf = c[free].sum()
        if cf <= 0:
            # only zero counts left: spread the residual mass evenly
            out[free] = mass / free.sum()
            out[pinned] = delta
            break
        out[free] = mass * c[free] / cf
        out[pinned] = delta
        low = free & (out < delta)
        if not low.any():
            break
        pinned |= low
    return out


def project_rows(counts, delta):
    return np.vstack([m_step_project(row, delta) for row in counts])


def _initial_transitions(S, L, delta, jitter, gen, base=None):
    A = np.full((S, L), 1.0 / L) if base is None else project_rows(base, delta)
    if gen is None or jitter == 0:
        return A
    A = A * (1.0 + jitter * (2.0 * gen.random((S, L)) - 1.0))
    return project_rows(A / A.sum(axis=1, keepdims=True), delta)


def _max_step(A, direction, delta):
    """Largest ``s`` with ``A + s * direction >= delta`` entrywise."""
    neg = direction < 0
    if not neg.any():
        return np.inf
    return float(np.min((A[neg] - delta) / -direction[neg]))


def _stretch(A, target, ll, fit, delta):
    """Push past the EM point along ``target - A`` while the likelihood keeps rising.

    Each accepted candidate is feasible, so monotonicity is preserved; this
    only shortens the slow creep EM shows along flat ridges.
    """
    direction = target - A
    limit = min(MAX_STRETCH, 0.999 * _max_step(A, direction, delta))
    best, step = None, 1.0
    while 2.0 * step <= limit:
        step *= 2.0
        cand_A = A + step * direction
        cand_A = np.maximum(cand_A / cand_A.sum(axis=1, keepdims=True), delta)
        cand, cand_ll, cand_counts = fit(cand_A)
        if cand_ll <= ll:
            break
        best, ll = (cand, cand_ll, cand_counts, step), cand_ll
    return best


def _run_restart(z, k, delta, emission, readout, n_symbols, A0, config):
    model = HmpModel.create(k, A0, emission, delta, readout, n_symbols)
    ll, counts = expected_counts(model, z)
    lls, steps = [ll], []
    iterates = [model.transitions] if config.record_iterates else []
    converged = False

    def fit(A):
        cand = HmpModel.create(k, A, emission, delta, readout, n_symbols)
        return (cand, *expected_counts(cand, z))

    for _ in range(config.max_iters):
        target = project_rows(counts, delta)
        A = model.transitions
        step = 1.0
        cand_A = target
        for _ in range(MAX_HALVINGS + 1):
            cand, cand_ll, cand_counts = fit(cand_A)
            if cand_ll >= ll:
                if step == 1.0 and config.overrelax and cand_ll > ll:
                    further = _stretch(A, target, cand_ll, fit, delta)
                    if further is not None:
                        cand, cand_ll, cand_counts, step = further
                break
            step /= 2.0
            cand_A = np.maximum(A + step * (target - A), delta)
        else:
            converged = True
            break
        gain = cand_ll - ll
        model, ll, counts = cand, cand_ll, cand_counts
        lls.append(ll)
        steps.append(step)
        if config.record_iterates:
            iterates.append(model.transitions)
        if gain <= config.rel_tol * abs(ll):
            converged = True
            break
    return model, lls, steps, converged, iterates


def em_fit(
    z, k, delta, emission, config: EmConfig = EmConfig(), *, readout=None, n_symbols=None, stream=(), init=None
):
    """Fit an order-``k`` model with floor ``delta`` to ``z``.

    Restart 0 starts from ``init`` (uniform rows by default, projected onto
    the floor); restart ``r > 0`` perturbs it with multiplicative jitter
    drawn from the stream ``(seed, 2, *stream, r)``.
    The restart with the largest final log-likelihood wins, lowest index on
    ties. Returns ``(model, trace)``.
    """
    z = np.asarray(z, dtype=np.int64)
    E = _emission_matrix(emission)
    L = E.shape[0]
    if z.size < 2:
        raise InsufficientDataError(f"need at least two observations, got {z.size}")
    if delta > 1.0 / L:
        raise EmptyClassError(f"floor {delta} exceeds 1/{L}: the model class is empty")
    if not delta > 0:
        raise InvalidArgumentError("floor must be positive")
    S = L**k
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (S, L):
            raise InvalidArgumentError(f"initial transitions must have shape {(S, L)}, got {init.shape}")
    best = None
    restart_lls = []
    for r in range(config.restarts):
        gen = rngmod.stream(config.seed, rngmod.EM, *stream, r) if r > 0 else None
        A0 = _initial_transitions(S, L, delta, config.init_jitter, gen, init)
        model, lls, steps, converged, iterates = _run_restart(z, k, delta, E, readout, n_symbols, A0, config)
        restart_lls.append(lls[-1])
        log.debug("restart %d: %d iterations, loglik %.6f", r, len(lls) - 1, lls[-1])
        if best is None or lls[-1] > best[1][-1]:
            best = (model, lls, steps, converged, r, iterates)
    model, lls, steps, converged, r, iterates = best
    trace = EmTrace(lls, r, converged, restart_lls, steps, iterates)
    return model, trace
