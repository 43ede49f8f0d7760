"""Compiled inner loops.

Sparse kernels work on the shift-register (de Bruijn) state space: a chain of
order ``k`` over an ``L``-letter hidden alphabet has ``S = L**k`` states,
``trans[i, a]`` is the probability of moving from state ``i`` to
``(i * L) % S + a`` and the last letter of state ``j`` is ``j % L``.
``lik[t, a]`` is the emission probability of the observed symbol at time
``t`` given last letter ``a``.

Dense kernels take an ordinary ``(S, S)`` transition matrix and per-state
likelihoods ``lik[t, j]``.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sparse_forward(trans, init, lik):
    n = lik.shape[0]
    S, L = trans.shape
    alpha = np.empty((n, S))
    scale = np.empty(n)
    pred = np.empty(S)
    for t in range(n):
        if t == 0:
            for j in range(S):
                pred[j] = init[j]
        else:
            for j in range(S):
                pred[j] = 0.0
            for i in range(S):
                base = (i * L) % S
                ai = alpha[t - 1, i]
                for a in range(L):
                    pred[base + a] += ai * trans[i, a]
        c = 0.0
        for j in range(S):
            v = pred[j] * lik[t, j % L]
            alpha[t, j] = v
            c += v
        if not c > 0.0:
            raise FloatingPointError("forward normalizer vanished")
        for j in range(S):
            alpha[t, j] /= c
        scale[t] = c
    return alpha, scale


@njit(cache=True, nogil=True)
def sparse_backward(trans, lik, alpha, scale):
    """Scaled backward pass; returns smoothed-state betas and summed pair counts."""
    n = lik.shape[0]
    S, L = trans.shape
    beta = np.empty((n, S))
    counts = np.zeros((S, L))
    for j in range(S):
        beta[n - 1, j] = 1.0
    for t in range(n - 2, -1, -1):
        inv = 1.0 / scale[t + 1]
        for i in range(S):
            base = (i * L) % S
            acc = 0.0
            for a in range(L):
                w = trans[i, a] * lik[t + 1, a] * beta[t + 1, base + a] * inv
                acc += w
                counts[i, a] += alpha[t, i] * w
            beta[t, i] = acc
    return beta, counts


@njit(cache=True, nogil=True)
def dense_forward(T, init, lik):
    n = lik.shape[0]
    S = T.shape[0]
    alpha = np.empty((n, S))
    scale = np.empty(n)
    pred = np.empty(S)
    for t in range(n):
        if t == 0:
            for j in range(S):
                pred[j] = init[j]
        else:
            for j in range(S):
                acc = 0.0
                for i in range(S):
                    acc += alpha[t - 1, i] * T[i, j]
                pred[j] = acc
        c = 0.0
        for j in range(S):
            v = pred[j] * lik[t, j]
            alpha[t, j] = v
            c += v
        if not c > 0.0:
            raise FloatingPointError("forward normalizer vanished")
        for j in range(S):
            alpha[t, j] /= c
        scale[t] = c
    return alpha, scale


@njit(cache=True, nogil=True)
def sample_sparse_chain(cum, start, uniforms):
    """State path of a shift-register chain; ``cum`` holds row-wise CDFs."""
    n = uniforms.shape[0]
    S, L = cum.shape
    path = np.empty(n, dtype=np.int64)
    state = start
    for t in range(n):
        u = uniforms[t]
        a = 0
        while a < L - 1 and u >= cum[state, a]:
            a += 1
        state = (state * L) % S + a
        path[t] = state
    return path


@njit(cache=True, nogil=True)
def sample_dense_chain(cum, start, uniforms):
    n = uniforms.shape[0]
    S = cum.shape[0]
    path = np.empty(n, dtype=np.int64)
    state = start
    path[0] = state
    for t in range(1, n):
        u = uniforms[t]
        j = 0
        while j < S - 1 and u >= cum[state, j]:
            j += 1
        state = j
        path[t] = state
    return path
