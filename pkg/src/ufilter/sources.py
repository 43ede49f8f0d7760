"""Clean-signal generators, channel corruption and noise processes.

Every source exposes a first-order *hidden chain* representation
``(init, T, emit)``: a stationary start ``init``, a dense transition matrix
``T`` and an emission matrix ``emit[state, x]`` giving the law of the emitted
clean symbol. Exact sequence laws, Markov approximations and the oracle all
work from that representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Channel, check_row_stochastic
from .errors import CapacityError, InvalidArgumentError, UnsupportedSourceError
from .hmm import build_state_space, dense_transitions, draw_rows, stationary_distribution

SEQUENCE_BUDGET = 2**16


@dataclass(frozen=True)
class HiddenChain:
    init: np.ndarray
    T: np.ndarray
    emit: np.ndarray  # (S, M) law of the emitted symbol given the state

    def sequence_probabilities(self, n, budget=SEQUENCE_BUDGET):
        """Probability of every length-``n`` output string.

        Strings are indexed as base-``M`` numbers, first symbol most
        significant.
        """
        S, M = self.emit.shape
        if M**n > budget:
            raise CapacityError(f"{M}**{n} strings exceed the enumeration budget {budget}")
        f = self.init[None, :] * self.emit.T  # (M, S)
        for _ in range(n - 1):
            f = ((f @ self.T)[:, None, :] * self.emit.T[None, :, :]).reshape(-1, S)
        return f.sum(axis=1)


def _tuple_chain(transitions):
    """Hidden chain of a shift-register process that emits its last letter."""
    S, M = transitions.shape
    init = stationary_distribution(transitions)
    emit = np.zeros((S, M))
    emit[np.arange(S), np.arange(S) % M] = 1.0
    return HiddenChain(init, dense_transitions(transitions), emit)


@dataclass(frozen=True, eq=False)
class MarkovSource:
    """Order-``r`` Markov source; ``transitions[context, x]``.

    Contexts are encoded like tuple states: base ``M``, most recent symbol
    least significant.
    """

    transitions: np.ndarray
    order: int
    stationary: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, transitions, order=None):
        A = np.array(transitions, dtype=float)
        if A.ndim != 2:
            raise InvalidArgumentError("transitions must be a 2-d table")
        M = A.shape[1]
        if order is None:
            order = int(round(np.log(A.shape[0]) / np.log(M)))
        build_state_space(order, M)
        if A.shape[0] != M**order:
            raise InvalidArgumentError(f"order-{order} table needs {M**order} rows, got {A.shape[0]}")
        if np.any(A <= 0):
            raise InvalidArgumentError("source conditionals must be strictly positive")
        check_row_stochastic(A, "source transitions", tol=1e-9)
        A = A / A.sum(axis=1, keepdims=True)
        A.setflags(write=False)
        pi = stationary_distribution(A)
        pi.setflags(write=False)
        return cls(A, int(order), pi)

    @classmethod
    def iid(cls, probs):
        p = np.asarray(probs, dtype=float)
        return cls.create(np.tile(p, (p.size, 1)), order=1)

    @classmethod
    def symmetric(cls, p, M=2):
        """Order-1 chain that keeps its symbol w.p. ``1 - p``."""
        A = np.full((M, M), p / (M - 1))
        np.fill_diagonal(A, 1.0 - p)
        return cls.create(A, order=1)

    @property
    def alphabet(self):
        return self.transitions.shape[1]

    @property
    def min_conditional(self):
        return float(self.transitions.min())

    def hidden_chain(self) -> HiddenChain:
        return _tuple_chain(self.transitions)

    def sequence_probabilities(self, n):
        return self.hidden_chain().sequence_probabilities(n)

    def sample(self, n, rng):
        r, M = self.order, self.alphabet
        space = build_state_space(r, M)
        start = int(rng.choice(space.state_count, p=self.stationary))
        head = np.array(space.decode(start), dtype=np.int64)
        if n <= r:
            return head[:n].copy()
        cum = np.cumsum(self.transitions, axis=1)
        path = _kernels.sample_sparse_chain(cum, start, rng.random(n - r))
        return np.concatenate([head, path % M])


@dataclass(frozen=True, eq=False)
class HiddenMarkovSource:
    """A first-order chain on ``H`` hidden states seen through an output map.

    ``output_map`` is either an integer array (deterministic map, a function
    of a Markov chain) or an ``(H, M)`` stochastic matrix.
    """

    transitions: np.ndarray
    output_map: np.ndarray
    alphabet: int
    stationary: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, transitions, output_map, alphabet=None):
        T = np.array(transitions, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise InvalidArgumentError("hidden transitions must be square")
        if np.any(T <= 0):
            raise InvalidArgumentError("hidden transitions must be strictly positive")
        check_row_stochastic(T, "hidden transitions", tol=1e-9)
        out = np.asarray(output_map)
        if out.ndim == 1:
            out = out.astype(np.int64)
            if out.size != T.shape[0] or out.min() < 0:
                raise InvalidArgumentError("output map must give one symbol per hidden state")
            M = int(out.max()) + 1 if alphabet is None else int(alphabet)
            if set(range(M)) - set(out.tolist()):
                raise InvalidArgumentError("output map must reach every symbol")
        else:
            out = out.astype(float)
            if out.shape[0] != T.shape[0]:
                raise InvalidArgumentError("output matrix needs one row per hidden state")
            check_row_stochastic(out, "output map", tol=1e-9)
            M = out.shape[1]
        pi = stationary_distribution(T)
        return cls(T, out, M, pi)

    @property
    def deterministic(self):
        return self.output_map.ndim == 1

    def emission(self):
        if self.deterministic:
            E = np.zeros((self.transitions.shape[0], self.alphabet))
            E[np.arange(E.shape[0]), self.output_map] = 1.0
            return E
        return self.output_map

    def hidden_chain(self) -> HiddenChain:
        if self.deterministic:
            return HiddenChain(self.stationary, self.transitions, self.emission())
        # expand to (hidden, symbol) so the emitted symbol is a state function
        H, M = self.output_map.shape
        T = (self.transitions[:, None, :, None] * self.output_map[None, None, :, :]).reshape(H, H * M)
        T = np.repeat(T, M, axis=0)
        init = (self.stationary[:, None] * self.output_map).ravel()
        emit = np.tile(np.eye(M), (H, 1))
        return HiddenChain(init, T, emit)

    def sequence_probabilities(self, n):
        return self.hidden_chain().sequence_probabilities(n)

    def sample(self, n, rng):
        H = self.transitions.shape[0]
        start = int(rng.choice(H, p=self.stationary))
        cum = np.cumsum(self.transitions, axis=1)
        path = _kernels.sample_dense_chain(cum, start, rng.random(n))
        if self.deterministic:
            return self.output_map[path].copy()
        return draw_rows(self.output_map, path, rng)


def sample_source(source, n, rng) -> np.ndarray:
    if n < 1:
        raise InvalidArgumentError("n must be positive")
    return source.sample(int(n), rng)


def dmc_corrupt(x, channel: Channel, rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= channel.size):
        raise InvalidArgumentError("clean symbols outside the channel alphabet")
    return draw_rows(channel.matrix, x, rng)


def kth_order_approximation(source, k) -> MarkovSource:
    """Markov source of order ``k`` with the source's exact order-``k`` conditionals."""
    if not hasattr(source, "sequence_probabilities"):
        raise UnsupportedSourceError(f"{type(source).__name__} has no computable conditionals")
    M = source.alphabet
    block = source.sequence_probabilities(k + 1).reshape(M**k, M)
    mass = block.sum(axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise UnsupportedSourceError("some order-k context has zero probability")
    return MarkovSource.create(block / mass, order=k)


@dataclass(frozen=True, eq=False)
class FsHmpNoise:
    """Additive noise ``N_t`` emitted through ``gamma`` by a Markov state chain."""

    gamma: np.ndarray
    s_chain: MarkovSource
    alpha: float

    @classmethod
    def create(cls, gamma, s_chain: MarkovSource, alpha=None):
        G = np.array(gamma, dtype=float)
        M = G.shape[0]
        if G.shape != (M, M) or np.any(G <= 0):
            raise InvalidArgumentError("gamma must be a strictly positive square matrix")
        check_row_stochastic(G, "gamma")
        if s_chain.alphabet != M:
            raise InvalidArgumentError("state chain alphabet must match gamma")
        if alpha is None:
            alpha = s_chain.min_conditional
        if not 0 < alpha <= s_chain.min_conditional + 1e-15:
            raise InvalidArgumentError(
                f"alpha={alpha} must be positive and at most the state chain's "
                f"smallest conditional {s_chain.min_conditional}"
            )
        G.setflags(write=False)
        return cls(G, s_chain, float(alpha))

    @property
    def alphabet(self):
        return self.gamma.shape[0]

    @property
    def order(self):
        return self.s_chain.order

    @property
    def gamma_min(self):
        return float(self.gamma.min())

    def induced_channel(self) -> np.ndarray:
        """Single-letter channel ``P(z | x)`` under the stationary state law."""
        M = self.alphabet
        ps = self.s_chain.stationary.reshape(-1, M).sum(axis=0)
        noise = ps @ self.gamma
        idx = (np.arange(M)[None, :] - np.arange(M)[:, None]) % M
        return noise[idx]

    def noise_chain(self) -> HiddenChain:
        """Hidden chain emitting the noise symbols ``N_t``."""
        base = self.s_chain.hidden_chain()
        M = self.alphabet
        last = np.arange(base.T.shape[0]) % M
        return HiddenChain(base.init, base.T, self.gamma[last])


def fshmp_corrupt(x, noise: FsHmpNoise, rng):
    """Return ``(z, s)`` with ``z_t = x_t + N_t mod M``."""
    x = np.asarray(x, dtype=np.int64)
    M = noise.alphabet
    s = noise.s_chain.sample(x.size, rng)
    n = draw_rows(noise.gamma, s, rng)
    return (x + n) % M, s


def source_from_spec(spec) -> MarkovSource | HiddenMarkovSource:
    kind = spec["type"]
    if kind == "iid":
        return MarkovSource.iid(spec["probs"])
    if kind == "markov":
        return MarkovSource.create(spec["transitions"], spec.get("order"))
    if kind == "hmm":
        return HiddenMarkovSource.create(spec["transitions"], spec["output_map"], spec.get("alphabet"))
    raise UnsupportedSourceError(f"unknown source type {kind!r}")
