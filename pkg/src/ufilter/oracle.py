"""Ground truth: exact posteriors, the optimal filter, divergences and bound checks.

Everything here works from the true joint law of the clean and noisy
processes, expressed as a first-order hidden chain over a dense state
space. That path shares no code with the sparse recursions in
:mod:`ufilter.hmm`, so the two can be checked against each other.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Channel, LossMatrix, as_simplex, bayes_responses, bsc, channel_constants
from .errors import CapacityError, InvalidArgumentError, NumericalError, UnsupportedSourceError
from .filtering import _finish, decision_distributions
from .hmm import HmpModel, dense_transitions, filtered_posteriors, log_likelihood, sample
from .sources import FsHmpNoise, HiddenChain, MarkovSource, dmc_corrupt, fshmp_corrupt, kth_order_approximation

ENUMERATION_BUDGET = 2**20
SEQUENCE_BUDGET = 2**16


@dataclass(frozen=True, eq=False)
class JointLaw:
    """True law of ``(X, Z)``: a source seen through a DMC or FS-HMP noise."""

    source: object
    channel: Channel | FsHmpNoise

    def __post_init__(self):
        if not hasattr(self.source, "hidden_chain"):
            raise UnsupportedSourceError(f"{type(self.source).__name__} has no hidden-chain form")
        size = self.channel.alphabet if isinstance(self.channel, FsHmpNoise) else self.channel.size
        if self.source.alphabet != size:
            raise InvalidArgumentError("source and channel alphabets differ")

    @property
    def alphabet(self):
        return self.source.alphabet

    def chain(self):
        """``(init, T, emit_z, readout_x)`` of the joint hidden chain.

        ``emit_z[state, z]`` is the law of the noisy symbol and
        ``readout_x[state, x]`` the law of the clean one given the state.
        """
        src = self.source.hidden_chain()
        if isinstance(self.channel, Channel):
            return src.init, src.T, src.emit @ self.channel.matrix, src.emit
        if not np.all((src.emit == 0) | (src.emit == 1)):
            raise UnsupportedSourceError("memory channels need a source whose symbol is a state function")
        noise = self.channel
        M = noise.alphabet
        sch = noise.s_chain.hidden_chain()
        x_of = src.emit.argmax(axis=1)
        s_of = np.arange(sch.T.shape[0]) % M
        init = np.kron(src.init, sch.init)
        T = np.kron(src.T, sch.T)
        idx = (np.arange(M)[None, :] - x_of[:, None]) % M
        emit = noise.gamma[s_of[None, :, None], idx[:, None, :]].reshape(-1, M)
        readout = np.repeat(src.emit, sch.T.shape[0], axis=0)
        return init, T, emit, readout

    def noisy_chain(self) -> HiddenChain:
        init, T, emit, _ = self.chain()
        return HiddenChain(init, T, emit)

    def sequence_probabilities(self, n):
        """Law of the noisy string ``Z^n`` over all ``M**n`` strings."""
        return self.noisy_chain().sequence_probabilities(n, budget=SEQUENCE_BUDGET)

    def sample(self, n, rng):
        x = self.source.sample(n, rng)
        if isinstance(self.channel, Channel):
            return x, dmc_corrupt(x, self.channel, rng)
        z, _ = fshmp_corrupt(x, self.channel, rng)
        return x, z

    def forward(self, z):
        init, T, emit, readout = self.chain()
        z = np.asarray(z, dtype=np.int64)
        if z.size == 0:
            raise InvalidArgumentError("observation sequence is empty")
        lik = np.ascontiguousarray(emit[:, z].T)
        try:
            alpha, scale = _kernels.dense_forward(np.ascontiguousarray(T), init, lik)
        except FloatingPointError as exc:
            raise NumericalError(str(exc)) from None
        return alpha @ readout, float(np.log(scale).sum())

    def log_likelihood(self, z):
        return self.forward(z)[1]


def exact_posterior(joint: JointLaw, z, method="forward"):
    """``P(X_t = . | Z^t = z)`` for ``t = len(z)``.

    ``method="forward"`` runs the recursion on the true joint chain;
    ``method="enumerate"`` sums the joint law over every clean string.
    """
    z = np.asarray(z, dtype=np.int64)
    t, M = z.size, joint.alphabet
    if t == 0:
        raise InvalidArgumentError("need at least one observation")
    if method == "forward":
        post, _ = joint.forward(z)
        return post[-1]
    if method != "enumerate":
        raise InvalidArgumentError(f"unknown method {method!r}")
    if M ** (2 * t) > ENUMERATION_BUDGET:
        raise CapacityError(f"enumerating {M}**{t} x {M}**{t} pairs exceeds the budget")
    px = joint.source.sequence_probabilities(t)
    xs = np.array(list(itertools.product(range(M), repeat=t)), dtype=np.int64)
    if isinstance(joint.channel, Channel):
        pz_given_x = joint.channel.matrix[xs, z[None, :]].prod(axis=1)
    else:
        noise_law = joint.channel.noise_chain().sequence_probabilities(t)
        nseq = (z[None, :] - xs) % M
        pz_given_x = noise_law[(nseq * M ** np.arange(t - 1, -1, -1)).sum(axis=1)]
    w = px * pz_given_x
    post = np.bincount(xs[:, -1], weights=w, minlength=M)
    return post / post.sum()


def optimal_filter_run(joint: JointLaw, x, z, loss: LossMatrix):
    """The distribution-dependent optimal (deterministic) filter."""
    started = time.perf_counter()
    z = np.asarray(z, dtype=np.int64)
    x = None if x is None else np.asarray(x, dtype=np.int64)
    if x is not None and x.size != z.size:
        raise InvalidArgumentError("clean and noisy sequences differ in length")
    post, _ = joint.forward(z)
    D = np.zeros_like(post)
    D[np.arange(z.size), bayes_responses(post, loss)] = 1.0
    # deterministic filter: sampling from a point mass needs no randomness
    return _finish(post, D, x, loss, np.random.default_rng(0), [], {"oracle": True}, started)


def phi_estimate(joint: JointLaw, loss: LossMatrix, n, replicas, rng):
    """Mean optimal-filter loss over independent replicas and its standard error."""
    losses = []
    for child in rng.spawn(replicas):
        x, z = joint.sample(n, child)
        losses.append(optimal_filter_run(joint, x, z, loss).loss)
    losses = np.asarray(losses)
    se = float(losses.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else float("nan")
    return float(losses.mean()), se


def divergence_rate_estimate(p_model, q_model: HmpModel, n, rng):
    """``(log P(Z^n) - log Q(Z^n)) / n`` for ``Z^n`` drawn from ``p_model``."""
    if isinstance(p_model, JointLaw):
        _, z = p_model.sample(n, rng)
        lp = p_model.log_likelihood(z)
    else:
        _, z = sample(p_model, n, rng)
        lp = log_likelihood(p_model, z)
    return (lp - log_likelihood(q_model, z)) / n


def _sequence_law(law, n):
    if isinstance(law, HmpModel):
        S, L = law.transitions.shape
        emit = law.emission[np.arange(S) % L]
        chain = HiddenChain(law.stationary, dense_transitions(law.transitions), emit)
        return chain.sequence_probabilities(n, budget=SEQUENCE_BUDGET)
    if hasattr(law, "sequence_probabilities"):
        return law.sequence_probabilities(n)
    raise UnsupportedSourceError(f"cannot enumerate {type(law).__name__}")


def exact_divergence_n(p_law, q_law, n) -> float:
    """``D_n(P || Q)`` in nats by enumerating every length-``n`` string."""
    p = _sequence_law(p_law, n)
    q = _sequence_law(q_law, n)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


@dataclass(frozen=True)
class BoundCheckResult:
    excess: float
    bound: float
    slack: float
    satisfied: bool


def lemma4_bound_check(p_x, q_x, channel: Channel, loss: LossMatrix, eps, mc_samples, rng):
    """Excess loss of a mismatched randomized single-letter filter vs. its bound.

    The excess ``E_P l(X, Xhat_Q^eps(Z)) - E_P l(X, Xhat_P(Z))`` is summed
    exactly over the ``(x, z)`` grid; only the ball randomization is Monte
    Carlo. The bound is ``lambda_max * k_pi * ||P_Z - Q_Z||_1 + c_lambda * eps``.
    ``slack`` is three Monte Carlo standard errors of the excess.
    """
    M = channel.size
    p_x = as_simplex(p_x, M)
    q_x = as_simplex(q_x, M)
    Pi = channel.matrix
    P = p_x[:, None] * Pi
    Q = q_x[:, None] * Pi
    p_z, q_z = P.sum(axis=0), Q.sum(axis=0)
    post_p = (P / p_z).T  # (z, x)
    post_q = (Q / q_z).T
    # w[z, xhat] = sum_x P(x, z) * loss(x, xhat)
    w = P.T @ loss.matrix
    opt = bayes_responses(post_p, loss)
    base = w[np.arange(M), opt].sum()
    excess = -base
    var = 0.0
    for zi in range(M):
        if eps == 0:
            d = decision_distributions(post_q[zi][None, :], 0, loss, 1, rng)[0]
            excess += w[zi] @ d
            continue
        d = decision_distributions(post_q[zi][None, :], eps, loss, mc_samples, rng)[0]
        mean = w[zi] @ d
        excess += mean
        var += max(0.0, (w[zi] ** 2) @ d - mean**2) / mc_samples
    bound = loss.lambda_max * channel.k_pi * np.abs(p_z - q_z).sum() + loss.c_lambda * eps
    slack = 3.0 * np.sqrt(var)
    return BoundCheckResult(float(excess), float(bound), float(slack), bool(excess <= bound + slack + 1e-9))


def random_invertible_channel(M, rng, min_entry=0.02, max_cond=50.0) -> Channel:
    """Random strictly positive channel with a diagonal bias, redrawn until well conditioned."""
    while True:
        W = rng.dirichlet(np.ones(M), size=M) + 2.0 * np.eye(M) * rng.random()
        W = np.maximum(W, min_entry)
        W /= W.sum(axis=1, keepdims=True)
        if np.linalg.cond(W) <= max_cond:
            return channel_constants(W)


def lemma4_sweep(instances, rng, mc_samples=10_000, alphabets=(2, 3), epsilons=(0.0, 0.05)):
    """Random single-letter instances of the mismatched-filter bound.

    Each instance draws ``M``, ``p_x`` and ``q_x`` from flat Dirichlet laws,
    a nonnegative random loss, and either a BSC (``M = 2``) or a random
    invertible channel.
    """
    violations = 0
    worst = -np.inf
    for _ in range(instances):
        M = int(rng.choice(alphabets))
        if M == 2 and rng.random() < 0.5:
            channel = bsc(float(rng.uniform(0.01, 0.45)))
        else:
            channel = random_invertible_channel(M, rng)
        loss = LossMatrix.from_matrix(rng.random((M, M)))
        eps = float(rng.choice(epsilons))
        p_x, q_x = rng.dirichlet(np.ones(M)), rng.dirichlet(np.ones(M))
        res = lemma4_bound_check(p_x, q_x, channel, loss, eps, mc_samples, rng)
        violations += not res.satisfied
        worst = max(worst, res.excess - res.bound)
    return {"instances": instances, "violations": violations, "max_excess_over_bound": float(worst)}


def dpi_check(source=None, channel=None, k=1, n_values=range(2, 9)):
    """Finite-``n`` data-processing check ``D_n(P_Z || P_Z^(k)) <= D_n(P_X || P_X^(k))``.

    Defaults to a binary order-2 source seen through BSC(0.2).
    """
    if source is None:
        source = MarkovSource.create([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4], [0.2, 0.8]], order=2)
    if channel is None:
        channel = bsc(0.2)
    approx = kth_order_approximation(source, k)
    rows = []
    for n in n_values:
        d_x = exact_divergence_n(source, approx, n)
        d_z = exact_divergence_n(JointLaw(source, channel), JointLaw(approx, channel), n)
        rows.append({"n": int(n), "d_x": d_x, "d_z": d_z, "margin": d_x - d_z})
    violations = sum(r["margin"] < -1e-12 for r in rows)
    return {
        "instances": len(rows),
        "violations": violations,
        "max_excess_over_bound": max(-r["margin"] for r in rows),
        "rows": rows,
    }


def truncated_posterior(model: HmpModel, z, window):
    """``Q(x_0 | z_{-window+1}^0)``: the posterior from the last ``window`` observations only."""
    z = np.asarray(z, dtype=np.int64)
    post, _ = filtered_posteriors(model, z[z.size - window :])
    return post[-1]


def forgetting_check(model: HmpModel, z, d, ell, m):
    """Gap between posteriors from windows of ``d*m + ell + 1`` and ``(d+1)*m + ell + 1`` symbols."""
    short = truncated_posterior(model, z, d * m + ell + 1)
    long = truncated_posterior(model, z, (d + 1) * m + ell + 1)
    return float(np.abs(short - long).max())
