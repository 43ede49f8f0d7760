"""Filtering through additive FS-HMP noise.

With ``Z_t = X_t + N_t (mod M)`` and ``N_t`` emitted by a hidden state
``S_t``, the pair ``(X_t, S_t)`` drives a memoryless channel ``Xi`` into
``Z_t``. Pairs are encoded as the hidden letter ``x * M + s``; the ordinary
order-``k`` machinery then runs over an ``M**2`` letter alphabet, and the
clean-symbol posterior is the pair posterior summed over ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import check_row_stochastic
from .errors import InvalidArgumentError
from .filtering import BlockSchedule, FloorSchedule, universal_filter_run
from .em import EmConfig
from .hmm import HmpModel, build_state_space
from .sources import FsHmpNoise, MarkovSource


@dataclass(frozen=True)
class EquivalentChannel:
    xi: np.ndarray  # (M*M, M): row x * M + s
    gamma: np.ndarray
    M: int

    @property
    def readout(self):
        return np.arange(self.M * self.M) // self.M


def build_equivalent_channel(gamma, M=None) -> EquivalentChannel:
    """``xi[(i, j), h] = gamma[j, (h - i) mod M]``."""
    G = np.array(gamma, dtype=float)
    if M is None:
        M = G.shape[0]
    if G.shape != (M, M) or np.any(G <= 0):
        raise InvalidArgumentError("gamma must be a strictly positive M x M matrix")
    check_row_stochastic(G, "gamma")
    i = np.repeat(np.arange(M), M)
    j = np.tile(np.arange(M), M)
    h = np.arange(M)
    xi = G[j[:, None], (h[None, :] - i[:, None]) % M]
    check_row_stochastic(xi, "xi")
    xi.setflags(write=False)
    return EquivalentChannel(xi, G, M)


def _pair_contexts(k, M, order, part):
    """Context index of the last ``order`` x- (``part=0``) or s-components (``part=1``) of every pair state."""
    space = build_state_space(k, M * M)
    digits = np.array([space.decode(i) for i in range(space.state_count)], dtype=np.int64).reshape(-1, k)
    comp = digits // M if part == 0 else digits % M
    weights = M ** np.arange(order - 1, -1, -1)
    return (comp[:, k - order :] * weights).sum(axis=1)


def _pair_transitions(x_rows, s_rows, M):
    return (x_rows[:, :, None] * s_rows[:, None, :]).reshape(-1, M * M)


def true_joint_model(source: MarkovSource, noise: FsHmpNoise, k) -> HmpModel:
    """Exact order-``k`` model of the pair process, with emission ``Xi``."""
    M = noise.alphabet
    r, ell = source.order, noise.order
    if k < max(r, ell):
        raise InvalidArgumentError(f"order {k} cannot represent a source of order {r} and noise of order {ell}")
    cx = _pair_contexts(k, M, r, 0)
    cs = _pair_contexts(k, M, ell, 1)
    A = _pair_transitions(source.transitions[cx], noise.s_chain.transitions[cs], M)
    eq = build_equivalent_channel(noise.gamma, M)
    return HmpModel.create(k, A, eq.xi, float(A.min()), eq.readout, M)


def noise_informed_start(noise: FsHmpNoise, k) -> np.ndarray:
    """Pair transitions with uniform clean-symbol moves and the known state-chain dynamics."""
    M = noise.alphabet
    cs = _pair_contexts(k, M, noise.order, 1)
    return _pair_transitions(np.full((cs.size, M), 1.0 / M), noise.s_chain.transitions[cs], M)


def memory_universal_filter_run(
    z,
    x=None,
    *,
    k,
    noise: FsHmpNoise,
    loss,
    epsilon,
    schedule: BlockSchedule = BlockSchedule(),
    floor: FloorSchedule = FloorSchedule(),
    em_config: EmConfig = EmConfig(),
    rng,
    mc_samples=256,
    stream=(),
):
    """Universal filter over the pair alphabet with floor ``delta_k * alpha``.

    Every refit starts EM from :func:`noise_informed_start`: the noise law is
    known, and starting from uniform pair rows tends to stall EM on a
    symmetric saddle where the state dynamics are never learned.
    """
    if k < noise.order:
        raise InvalidArgumentError(f"k={k} must be at least the noise state order {noise.order}")
    eq = build_equivalent_channel(noise.gamma, noise.alphabet)
    report = universal_filter_run(
        z,
        x,
        k=k,
        channel=eq.xi,
        loss=loss,
        epsilon=epsilon,
        schedule=schedule,
        floor=floor.scaled(noise.alpha),
        em_config=em_config,
        rng=rng,
        mc_samples=mc_samples,
        readout=eq.readout,
        n_symbols=noise.alphabet,
        stream=stream,
        em_init=noise_informed_start(noise, k),
    )
    report.metadata["memory"] = {"alpha": noise.alpha, "order": noise.order}
    return report
