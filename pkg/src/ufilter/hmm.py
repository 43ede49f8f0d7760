"""Order-k hidden Markov models with a fixed emission matrix.

A chain of order ``k`` over a hidden alphabet of ``L`` letters is expanded into
``L**k`` tuple states. A tuple is encoded as a base-``L`` integer whose least
significant digit is the most recent letter, so the successor of state ``i``
on letter ``a`` is ``(i * L + a) % L**k``. Only those ``L`` successors can
carry probability, and the transition table is stored as an ``(L**k, L)``
array ``transitions[i, a]``.

For the plain filtering problem the hidden alphabet is the source alphabet
and the emission matrix is the channel. The same code serves the
channel-with-memory reduction, where the hidden letters are (symbol, noise
state) pairs and ``readout`` maps a hidden letter back to the clean symbol.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Channel, check_row_stochastic
from .errors import CapacityError, InvalidArgumentError, NumericalError, StateError

DEFAULT_STATE_BUDGET = 2**20
DIRECT_SOLVE_LIMIT = 4096


@dataclass(frozen=True)
class StateSpace:
    order: int
    alphabet: int

    @property
    def state_count(self):
        return self.alphabet**self.order

    def successor(self, i, a):
        return (i * self.alphabet + a) % self.state_count

    def successors(self) -> np.ndarray:
        """``(S, L)`` array of successor indices."""
        S, L = self.state_count, self.alphabet
        return (np.arange(S)[:, None] * L + np.arange(L)[None, :]) % S

    def predecessors(self, j):
        R = self.state_count // self.alphabet
        return [p * R + j // self.alphabet for p in range(self.alphabet)]

    def last_symbol(self, j):
        return j % self.alphabet

    def encode(self, letters):
        """State index of a tuple given oldest letter first."""
        if len(letters) != self.order:
            raise InvalidArgumentError(f"expected {self.order} letters, got {len(letters)}")
        i = 0
        for a in letters:
            i = i * self.alphabet + int(a)
        return i

    def decode(self, i):
        out = []
        for _ in range(self.order):
            out.append(i % self.alphabet)
            i //= self.alphabet
        return tuple(reversed(out))


def build_state_space(k, M, budget=DEFAULT_STATE_BUDGET) -> StateSpace:
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"order must be a positive integer, got {k}")
    if int(M) != M or M < 2:
        raise InvalidArgumentError(f"alphabet size must be >= 2, got {M}")
    if M**k > budget:
        raise CapacityError(f"{M}**{k} = {M**k} states exceeds the budget of {budget}")
    return StateSpace(int(k), int(M))


def propagate(dist, transitions):
    """One step of the chain: returns ``dist @ A`` for the sparse table."""
    S, L = transitions.shape
    w = dist[:, None] * transitions
    return w.reshape(L, S // L, L).sum(axis=0).ravel()


def dense_transitions(transitions):
    """Expand the sparse ``(S, L)`` table to a full ``(S, S)`` matrix."""
    S, L = transitions.shape
    P = np.zeros((S, S))
    succ = (np.arange(S)[:, None] * L + np.arange(L)[None, :]) % S
    np.add.at(P, (np.repeat(np.arange(S), L), succ.ravel()), transitions.ravel())
    return P


def stationary_distribution(transitions, tol=1e-13, max_iter=10**6):
    """Stationary law of a sparse shift-register chain.

    A plain ``(S, S)`` transition matrix is the special case ``k = 1`` and is
    accepted as is. Small chains are solved directly; larger ones use power
    iteration from the uniform distribution.
    """
    A = np.asarray(transitions, dtype=float)
    S, L = A.shape
    if S % L:
        raise InvalidArgumentError(f"transition table shape {A.shape} is not (L**k, L)")
    if S <= DIRECT_SOLVE_LIMIT:
        P = dense_transitions(A)
        system = P.T - np.eye(S)
        system[-1, :] = 1.0
        rhs = np.zeros(S)
        rhs[-1] = 1.0
        pi = np.linalg.solve(system, rhs)
        # a few power steps remove solver round-off
        for _ in range(3):
            pi = propagate(pi, A)
        pi /= pi.sum()
    else:
        pi = np.full(S, 1.0 / S)
        for _ in range(max_iter):
            nxt = propagate(pi, A)
            if np.abs(nxt - pi).sum() < tol:
                pi = nxt
                break
            pi = nxt
        else:
            raise NumericalError("power iteration did not converge")
        pi /= pi.sum()
    if not np.all(pi > 0):
        raise NumericalError("stationary distribution has non-positive entries")
    return pi


def _emission_matrix(emission):
    if isinstance(emission, Channel):
        return emission.matrix
    E = np.array(emission, dtype=float)
    if E.ndim != 2 or np.any(E <= 0):
        raise InvalidArgumentError("emission must be a strictly positive matrix")
    check_row_stochastic(E, "emission")
    E.setflags(write=False)
    return E


@dataclass(frozen=True, eq=False)
class HmpModel:
    """A member of the floored class: sparse transitions, fixed emission.

    Use :meth:`create`; it validates the floor, computes the stationary law
    and freezes the arrays.
    """

    state_space: StateSpace
    delta: float
    transitions: np.ndarray
    emission: np.ndarray = field(repr=False)
    stationary: np.ndarray = field(repr=False)
    readout: np.ndarray = field(repr=False)
    n_symbols: int

    @classmethod
    def create(cls, k, transitions, emission, delta, readout=None, n_symbols=None):
        E = _emission_matrix(emission)
        L = E.shape[0]
        space = build_state_space(k, L)
        A = np.array(transitions, dtype=float)
        if A.shape != (space.state_count, L):
            raise InvalidArgumentError(
                f"transitions must have shape {(space.state_count, L)}, got {A.shape}"
            )
        if not 0 < delta <= 1.0 / L:
            raise InvalidArgumentError(f"floor must lie in (0, 1/{L}], got {delta}")
        if np.any(A < delta):
            i, a = np.argwhere(A < delta)[0]
            raise InvalidArgumentError(f"transition [{i}][{a}] = {A[i, a]} is below the floor {delta}")
        check_row_stochastic(A, "transitions")
        if readout is None:
            readout = np.arange(L)
        readout = np.asarray(readout, dtype=np.int64)
        if n_symbols is None:
            n_symbols = int(readout.max()) + 1
        pi = stationary_distribution(A)
        for arr in (A, pi, readout):
            arr.setflags(write=False)
        return cls(space, float(delta), A, E, pi, readout, int(n_symbols))

    @classmethod
    def uniform(cls, k, emission, delta, readout=None, n_symbols=None):
        L = _emission_matrix(emission).shape[0]
        A = np.full((L**k, L), 1.0 / L)
        return cls.create(k, A, emission, delta, readout, n_symbols)

    @property
    def order(self):
        return self.state_space.order

    @property
    def hidden_alphabet(self):
        return self.state_space.alphabet

    @property
    def state_count(self):
        return self.state_space.state_count

    def likelihoods(self, z) -> np.ndarray:
        """``(n, L)`` emission probabilities of the observed symbols."""
        z = _as_sequence(z, self.emission.shape[1])
        return np.ascontiguousarray(self.emission[:, z].T)

    def readout_matrix(self) -> np.ndarray:
        R = np.zeros((self.hidden_alphabet, self.n_symbols))
        R[np.arange(self.hidden_alphabet), self.readout] = 1.0
        return R

    def symbol_marginals(self, alpha) -> np.ndarray:
        """Marginal over reconstructed symbols of state distributions ``alpha``."""
        alpha = np.atleast_2d(alpha)
        L = self.hidden_alphabet
        hidden = alpha.reshape(alpha.shape[0], -1, L).sum(axis=1)
        return hidden @ self.readout_matrix()

    def to_dict(self):
        return {
            "M": int(self.emission.shape[1]),
            "k": self.order,
            "delta": self.delta,
            "transitions": self.transitions.tolist(),
            "emission": self.emission.tolist(),
            "readout": self.readout.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d, emission=None):
        """Rebuild a model; the stationary law is recomputed, never read."""
        if emission is None:
            emission = d["emission"]
        E = _emission_matrix(emission)
        if E.shape[1] != d["M"]:
            raise InvalidArgumentError("emission width does not match M")
        return cls.create(d["k"], d["transitions"], E, d["delta"], d.get("readout"))

    @classmethod
    def from_json(cls, text, emission=None):
        return cls.from_dict(json.loads(text), emission)


def _as_sequence(z, M):
    z = np.asarray(z)
    if z.ndim != 1:
        raise InvalidArgumentError("observation sequence must be one-dimensional")
    if z.size and (z.min() < 0 or z.max() >= M):
        raise InvalidArgumentError(f"observations must lie in 0..{M - 1}")
    return z.astype(np.int64)


def _forward(model, z):
    z = _as_sequence(z, model.emission.shape[1])
    if z.size == 0:
        raise InvalidArgumentError("observation sequence is empty")
    try:
        return _kernels.sparse_forward(model.transitions, model.stationary, model.likelihoods(z))
    except FloatingPointError as exc:
        raise NumericalError(str(exc)) from None


def log_likelihood(model: HmpModel, z) -> float:
    """Natural-log likelihood of ``z``, started from the stationary law."""
    _, scale = _forward(model, z)
    return float(np.log(scale).sum())


def filtered_posteriors(model: HmpModel, z):
    """Posteriors of every ``X_t`` given ``z^t``, plus the log-likelihood.

    Returns ``(post, loglik)`` with ``post`` of shape ``(n, n_symbols)``.
    """
    alpha, scale = _forward(model, z)
    return model.symbol_marginals(alpha), float(np.log(scale).sum())


class ForwardFilter:
    """Running normalized forward vector for one observation stream."""

    def __init__(self, model: HmpModel):
        self.model = model
        self.alpha = model.stationary.copy()
        self.log_likelihood = 0.0
        self.step_count = 0

    def step(self, z_t):
        model = self.model
        if not 0 <= z_t < model.emission.shape[1]:
            raise InvalidArgumentError(f"symbol {z_t} outside the alphabet")
        pred = self.alpha if self.step_count == 0 else propagate(self.alpha, model.transitions)
        L = model.hidden_alphabet
        lik = np.tile(model.emission[:, z_t], model.state_count // L)
        unnorm = pred * lik
        c = unnorm.sum()
        if not c > 0:
            raise NumericalError("forward normalizer vanished")
        self.alpha = unnorm / c
        self.log_likelihood += float(np.log(c))
        self.step_count += 1
        return self

    def posterior(self) -> np.ndarray:
        if self.step_count == 0:
            raise StateError("no observation has been processed yet")
        return self.model.symbol_marginals(self.alpha)[0]


def forward_step(filt: ForwardFilter, z_t) -> ForwardFilter:
    return filt.step(z_t)


def posterior_last_symbol(filt: ForwardFilter) -> np.ndarray:
    return filt.posterior()


@dataclass
class ForwardBackwardResult:
    gamma: np.ndarray  # (n, S) smoothed state posteriors
    xi: np.ndarray  # (n - 1, S, L) pair posteriors on allowed transitions
    log_likelihood: float

    @property
    def counts(self):
        return self.xi.sum(axis=0)


def expected_counts(model: HmpModel, z):
    """E-step summary: ``(log_likelihood, counts[i, a])`` summed over time."""
    alpha, scale = _forward(model, z)
    _, counts = _kernels.sparse_backward(model.transitions, model.likelihoods(z), alpha, scale)
    return float(np.log(scale).sum()), counts


def forward_backward(model: HmpModel, z) -> ForwardBackwardResult:
    alpha, scale = _forward(model, z)
    lik = model.likelihoods(z)
    beta, _ = _kernels.sparse_backward(model.transitions, lik, alpha, scale)
    gamma = alpha * beta
    succ = model.state_space.successors()
    xi = (
        alpha[:-1, :, None]
        * model.transitions[None, :, :]
        * lik[1:, None, :]
        * beta[1:][:, succ]
        / scale[1:, None, None]
    )
    return ForwardBackwardResult(gamma, xi, float(np.log(scale).sum()))


def sample(model: HmpModel, n, rng):
    """Draw ``(hidden_letters, z)`` of length ``n`` from a stationary start."""
    if n < 1:
        raise InvalidArgumentError("n must be positive")
    S, L = model.transitions.shape
    start = int(rng.choice(S, p=model.stationary))
    cum = np.cumsum(model.transitions, axis=1)
    rest = _kernels.sample_sparse_chain(cum, start, rng.random(n - 1))
    states = np.concatenate([[start], rest])
    hidden = states % L
    z = draw_rows(model.emission, hidden, rng)
    return hidden, z


def draw_rows(matrix, rows, rng):
    """For each index in ``rows`` draw a column from that row of ``matrix``."""
    cum = np.cumsum(matrix, axis=1)
    u = rng.random(len(rows))
    out = (u[:, None] >= cum[rows]).sum(axis=1)
    return np.minimum(out, matrix.shape[1] - 1).astype(np.int64)


@dataclass(frozen=True)
class MixingConstants:
    mu: float
    rho: float
    beta: float
    gamma: float

    @property
    def log_rho(self):
        # rho rounds to 1.0 once mu drops below machine epsilon; the log keeps it exact
        return float(np.log1p(-2.0 * self.mu))

    def rho_power(self, p):
        return float(np.exp(p * self.log_rho))


def mixing_coefficient(delta, pi_min, M, k, m) -> MixingConstants:
    """Uniform lower bound on ``m``-step smoothed transition probabilities.

    ``mu = 1 / (1 + (M - 1) / (delta * pi_min) ** (m + k))``, ``rho = 1 - 2 mu``,
    ``beta = 1 / (1 - rho)`` and ``gamma = rho ** (1 / k)``.
    """
    if not 0 < delta <= 1.0 / M:
        raise InvalidArgumentError(f"delta must lie in (0, 1/M], got {delta}")
    if not 0 < pi_min <= 1.0 / M:
        raise InvalidArgumentError(f"pi_min must lie in (0, 1/M], got {pi_min}")
    if int(k) != k or k < 1 or m < k:
        raise InvalidArgumentError(f"need m >= k >= 1, got k={k}, m={m}")
    log_ratio = np.log(M - 1) - (m + k) * np.log(delta * pi_min)
    mu = float(np.exp(-np.logaddexp(0.0, log_ratio)))
    rho = 1.0 - 2.0 * mu
    return MixingConstants(mu=mu, rho=rho, beta=1.0 / (2.0 * mu), gamma=rho ** (1.0 / k))
