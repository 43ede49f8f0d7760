"""Shared brute-force references.

These enumerate hidden letter paths directly with ``itertools`` and never
call the recursions under test.
"""

import itertools

import numpy as np
import pytest

from ufilter import HmpModel
from ufilter.em import project_rows


def tuple_index(letters, L):
    """Base-L index of a tuple, oldest letter most significant."""
    idx = 0
    for a in letters:
        idx = idx * L + int(a)
    return idx


def path_weights(model: HmpModel, z):
    """All hidden letter paths consistent with an order-k start, with their joint weight with ``z``.

    A path is the initial k-tuple followed by ``len(z) - 1`` further letters.
    Returns ``(paths, weights)``; ``paths[:, k - 1 + t]`` is the letter at time ``t``.
    """
    k, L = model.order, model.hidden_alphabet
    n = len(z)
    A, E, pi = model.transitions, model.emission, model.stationary
    z = np.asarray(z, dtype=np.int64)
    paths = np.array(list(itertools.product(range(L), repeat=k + n - 1)), dtype=np.int64)
    place = L ** np.arange(k - 1, -1, -1)
    weights = pi[paths[:, :k] @ place] * E[paths[:, k - 1], z[0]]
    for t in range(1, n):
        state = paths[:, t - 1 : t - 1 + k] @ place
        a = paths[:, t - 1 + k]
        weights = weights * A[state, a] * E[a, z[t]]
    return paths, weights


def brute_posterior(model: HmpModel, z):
    """``P(x_n | z^n)`` by summing over every hidden path."""
    paths, w = path_weights(model, z)
    last = paths[:, -1]
    post = np.bincount(last, weights=w, minlength=model.hidden_alphabet)
    R = model.readout_matrix()
    return (post / post.sum()) @ R


def brute_loglik(model: HmpModel, z):
    _, w = path_weights(model, z)
    return float(np.log(w.sum()))


def random_model(rng, k, L=2, delta=None, emission=None):
    if delta is None:
        delta = float(rng.uniform(0.01, 1.0 / L))
    if emission is None:
        p = float(rng.uniform(0.05, 0.45))
        emission = [[1 - p, p], [p, 1 - p]] if L == 2 else None
    A = project_rows(rng.dirichlet(np.ones(L), size=L**k), delta)
    return HmpModel.create(k, A, emission, delta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
