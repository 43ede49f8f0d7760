import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_loglik, brute_posterior, path_weights, random_model, tuple_index
from ufilter import (
    CapacityError,
    ForwardFilter,
    HmpModel,
    InvalidArgumentError,
    StateError,
    bsc,
    build_state_space,
    filtered_posteriors,
    forward_backward,
    forward_step,
    log_likelihood,
    mixing_coefficient,
    posterior_last_symbol,
    stationary_distribution,
)
from ufilter.hmm import dense_transitions, propagate, sample

BSC = bsc(0.2)


def test_state_space_order_one():
    sp = build_state_space(1, 2)
    assert sp.state_count == 2
    assert all(sp.successor(i, a) == a for i in range(2) for a in range(2))


def test_state_space_shift_append():
    sp = build_state_space(2, 2)
    assert sp.state_count == 4
    assert sp.successor(sp.encode((0, 1)), 1) == sp.encode((1, 1))
    assert sp.decode(sp.encode((1, 0))) == (1, 0)


def test_state_space_counts():
    sp = build_state_space(3, 4)
    assert sp.state_count == 64
    succ = sp.successors()
    assert succ.shape == (64, 4)
    indeg = np.bincount(succ.ravel(), minlength=64)
    assert np.all(indeg == 4)
    for j in range(64):
        assert all(sp.successor(p, sp.last_symbol(j)) == j for p in sp.predecessors(j))


@pytest.mark.parametrize("k, M", [(2, 2), (2, 3), (3, 2)])
def test_successor_matches_tuple_rule(k, M):
    # the first k-1 letters of the successor tuple are the last k-1 of the current one
    sp = build_state_space(k, M)
    for tup in itertools.product(range(M), repeat=k):
        for a in range(M):
            assert sp.decode(sp.successor(sp.encode(tup), a)) == tup[1:] + (a,)
            assert sp.successor(tuple_index(tup, M), a) == tuple_index(tup[1:] + (a,), M)


def test_state_space_budget():
    with pytest.raises(CapacityError):
        build_state_space(21, 2)
    with pytest.raises(InvalidArgumentError):
        build_state_space(0, 2)


def test_stationary_examples():
    assert np.allclose(stationary_distribution(np.array([[0.9, 0.1], [0.1, 0.9]])), [0.5, 0.5], atol=1e-12)
    assert np.allclose(stationary_distribution(np.array([[0.5, 0.5], [0.25, 0.75]])), [1 / 3, 2 / 3], atol=1e-12)


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_stationary_fixed_point(k, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, k)
    pi = m.stationary
    assert np.abs(propagate(pi, m.transitions) - pi).sum() <= 1e-10
    assert np.abs(pi @ dense_transitions(m.transitions) - pi).sum() <= 1e-10
    assert np.all(pi > 0)


def test_stationary_power_iteration_branch():
    # 2**13 states takes the iterative route
    rng = np.random.default_rng(3)
    m = random_model(rng, 13, delta=0.2)
    assert np.abs(propagate(m.stationary, m.transitions) - m.stationary).sum() <= 1e-10


def test_model_validation():
    with pytest.raises(InvalidArgumentError):
        HmpModel.create(1, [[0.99, 0.01], [0.5, 0.5]], BSC, 0.05)
    with pytest.raises(InvalidArgumentError):
        HmpModel.create(1, [[0.6, 0.5], [0.5, 0.5]], BSC, 0.05)
    with pytest.raises(InvalidArgumentError):
        HmpModel.create(1, [[0.5, 0.5], [0.5, 0.5]], BSC, 0.6)


def test_single_step_likelihood():
    m = HmpModel.uniform(1, BSC, 0.05)
    assert log_likelihood(m, [0]) == pytest.approx(np.log(0.5 * 0.8 + 0.5 * 0.2), abs=1e-15)


def test_forward_step_hand_value():
    m = HmpModel.uniform(1, BSC, 0.05)
    f = forward_step(ForwardFilter(m), 0)
    assert np.allclose(f.alpha, [0.8, 0.2])
    assert np.allclose(posterior_last_symbol(f), [0.8, 0.2])


def test_posterior_before_step_is_error():
    with pytest.raises(StateError):
        posterior_last_symbol(ForwardFilter(HmpModel.uniform(1, BSC, 0.05)))


def test_uniform_marginal_order_two():
    m = HmpModel.uniform(2, BSC, 0.05)
    assert np.allclose(m.symbol_marginals(np.full(4, 0.25))[0], [0.5, 0.5])


def test_symmetric_observations_restore_symmetry():
    m = HmpModel.create(1, [[0.9, 0.1], [0.1, 0.9]], BSC, 0.05)
    f = ForwardFilter(m)
    f.alpha = np.array([1.0, 0.0])
    f.step_count = 1
    f.step(0).step(1)
    g = ForwardFilter(m)
    g.alpha = np.array([0.0, 1.0])
    g.step_count = 1
    g.step(1).step(0)
    assert np.allclose(f.alpha, g.alpha[::-1])


def test_uniform_rows_collapse_to_iid():
    z = np.random.default_rng(0).integers(0, 2, 50)
    for k in (1, 2, 3):
        m = HmpModel.uniform(k, BSC, 0.05)
        assert log_likelihood(m, z) == pytest.approx(50 * np.log(0.5), abs=1e-10)


@pytest.mark.parametrize("k", [1, 2])
def test_forward_matches_enumeration(k):
    rng = np.random.default_rng(k)
    for _ in range(5):
        m = random_model(rng, k)
        for n in range(1, 7):
            z = rng.integers(0, 2, n)
            post, ll = filtered_posteriors(m, z)
            assert np.allclose(post[-1], brute_posterior(m, z), atol=1e-10)
            assert ll == pytest.approx(brute_loglik(m, z), abs=1e-10)
            f = ForwardFilter(m)
            for t, s in enumerate(z):
                f.step(s)
                assert np.allclose(f.posterior(), post[t], atol=1e-12)
            assert f.log_likelihood == pytest.approx(ll, abs=1e-10)


def test_log_likelihood_marginal_consistency():
    rng = np.random.default_rng(7)
    m = random_model(rng, 2)
    z = list(rng.integers(0, 2, 9))
    total = sum(np.exp(log_likelihood(m, z + [a])) for a in range(2))
    assert total == pytest.approx(np.exp(log_likelihood(m, z)), abs=1e-9)


def test_log_likelihood_empty_raises():
    with pytest.raises(InvalidArgumentError):
        log_likelihood(HmpModel.uniform(1, BSC, 0.05), [])
    with pytest.raises(InvalidArgumentError):
        log_likelihood(HmpModel.uniform(1, BSC, 0.05), [0, 2])


@pytest.mark.parametrize("k", [1, 2])
def test_forward_backward_matches_enumeration(k):
    rng = np.random.default_rng(10 + k)
    m = random_model(rng, k)
    n = 7
    z = rng.integers(0, 2, n)
    fb = forward_backward(m, z)
    paths, w = path_weights(m, z)
    w = w / w.sum()
    L, S = 2, 2**k
    gamma = np.zeros((n, S))
    xi = np.zeros((n - 1, S, L))
    for path, wt in zip(paths, w):
        states = [tuple_index(path[t : t + k], L) for t in range(n)]
        for t in range(n):
            gamma[t, states[t]] += wt
        for t in range(n - 1):
            xi[t, states[t], path[t + k]] += wt
    assert np.allclose(fb.gamma, gamma, atol=1e-10)
    assert np.allclose(fb.xi, xi, atol=1e-10)
    assert np.allclose(fb.xi.sum(axis=2), fb.gamma[:-1], atol=1e-9)
    assert fb.counts.sum() == pytest.approx(n - 1, abs=1e-9)
    assert fb.log_likelihood == pytest.approx(brute_loglik(m, z), abs=1e-10)


def test_forward_backward_single_step():
    m = random_model(np.random.default_rng(4), 2)
    fb = forward_backward(m, [1])
    post, _ = filtered_posteriors(m, [1])
    assert np.allclose(m.symbol_marginals(fb.gamma)[0], post[0])


def test_json_round_trip_recomputes_stationary():
    m = random_model(np.random.default_rng(5), 2)
    d = m.to_dict()
    d["stationary"] = [1, 0, 0, 0]
    back = HmpModel.from_dict(d)
    assert np.allclose(back.stationary, m.stationary)
    assert np.array_equal(HmpModel.from_json(m.to_json()).transitions, m.transitions)


def test_sample_emits_from_last_letter():
    m = HmpModel.create(1, [[0.9, 0.1], [0.1, 0.9]], bsc(0.01), 0.05)
    hidden, z = sample(m, 20000, np.random.default_rng(0))
    assert np.mean(hidden != z) == pytest.approx(0.01, abs=0.005)
    assert np.mean(hidden[1:] != hidden[:-1]) == pytest.approx(0.1, abs=0.01)


def test_mixing_constants_example():
    c = mixing_coefficient(0.1, 0.2, 2, 1, 1)
    assert c.mu == pytest.approx(1 / 2501, rel=1e-12)
    assert c.rho == pytest.approx(1 - 2 / 2501, rel=1e-12)
    assert c.gamma == c.rho
    assert c.beta == pytest.approx(1 / (1 - c.rho))


@given(
    st.floats(1e-3, 0.5),
    st.floats(1e-3, 0.5),
    st.integers(1, 4),
    st.integers(0, 4),
)
def test_mixing_constants_ranges(delta, pi_min, k, extra):
    c = mixing_coefficient(delta, pi_min, 2, k, k + extra)
    assert 0 < c.mu < 0.5
    assert c.log_rho < 0
    assert 0 < c.rho <= 1 and 0 < c.gamma <= 1
    if c.mu > 1e-15:
        assert c.rho < 1 and c.gamma < 1


def test_mixing_constants_validation():
    with pytest.raises(InvalidArgumentError):
        mixing_coefficient(0.6, 0.2, 2, 1, 1)
    with pytest.raises(InvalidArgumentError):
        mixing_coefficient(0.1, 0.2, 2, 2, 1)
