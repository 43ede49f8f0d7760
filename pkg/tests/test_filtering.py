import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ufilter import (
    BlockSchedule,
    EmConfig,
    EmptyClassError,
    FloorSchedule,
    HmpModel,
    InvalidArgumentError,
    LossMatrix,
    MarkovSource,
    bsc,
    cumulative_loss,
    dmc_corrupt,
    filtered_posteriors,
    model_filter_run,
    randomized_bayes,
    sample_ball,
    universal_filter_run,
)
from ufilter.core import bayes_responses
from ufilter.filtering import decision_distributions

HAM2 = LossMatrix.hamming(2)


def test_block_schedule_boundaries():
    s = BlockSchedule()
    assert s.boundaries(10**4) == [100, 200, 600, 2400]
    assert s.block_index(99) == 0
    assert s.block_index(100) == 1
    assert s.block_index(599) == 2
    for i in range(2, 12):
        assert s.boundary(i - 1) / s.boundary(i) == pytest.approx(1 / i, rel=0, abs=0)


def test_block_schedule_validation():
    with pytest.raises(InvalidArgumentError):
        BlockSchedule(c=0)
    with pytest.raises(InvalidArgumentError):
        BlockSchedule(rule="geometric")


def test_floor_schedule():
    f = FloorSchedule(0.05)
    ds = [f.delta(k) for k in range(1, 8)]
    assert ds[0] == 0.025
    assert all(a > b > 0 for a, b in zip(ds, ds[1:]))
    assert f.scaled(0.5).delta(1) == 0.0125
    with pytest.raises(EmptyClassError):
        FloorSchedule(0.6).check(2)


def test_sample_ball_zero_radius():
    rng = np.random.default_rng(0)
    assert np.array_equal(sample_ball(0, 3, rng), np.zeros(3))
    assert np.array_equal(sample_ball(0, 2, rng, size=5), np.zeros((5, 2)))


def test_sample_ball_mean_and_volume():
    rng = np.random.default_rng(1)
    eps = 0.3
    U = sample_ball(eps, 3, rng, size=10**5)
    assert np.all(np.linalg.norm(U, axis=1) <= eps + 1e-15)
    assert np.linalg.norm(U.mean(axis=0)) <= 0.02 * eps
    V = sample_ball(eps, 2, rng, size=10**5)
    assert np.mean(np.linalg.norm(V, axis=1) <= eps / 2) == pytest.approx(0.25, abs=0.01)


def test_randomized_bayes_examples():
    rng = np.random.default_rng(2)
    assert np.array_equal(randomized_bayes([0.7, 0.3], 0, HAM2), [1.0, 0.0])
    d = randomized_bayes([0.5, 0.5], 0.1, HAM2, mc_samples=10**5, rng=rng)
    assert d == pytest.approx([0.5, 0.5], abs=0.01)
    # margin 0.8 / sqrt(2) exceeds the radius, so no ball point flips the decision
    assert np.array_equal(randomized_bayes([0.9, 0.1], 0.1, HAM2, rng=rng), [1.0, 0.0])


def test_randomized_bayes_needs_rng():
    with pytest.raises(InvalidArgumentError):
        randomized_bayes([0.5, 0.5], 0.1, HAM2)


def test_margin_shortcut_agrees_with_plain_monte_carlo():
    rng = np.random.default_rng(3)
    loss = LossMatrix.from_matrix([[0, 1, 2], [1, 0, 1], [3, 1, 0]])
    V = rng.dirichlet(np.ones(3), size=200)
    eps = 0.08
    D = decision_distributions(V, eps, loss, 4000, rng)
    U = sample_ball(eps, 3, rng, size=4000)
    for v, d in zip(V, D):
        picks = np.argmin((v + U) @ loss.matrix, axis=1)
        ref = np.bincount(picks, minlength=3) / picks.size
        assert np.abs(d - ref).max() < 0.05


def test_identical_loss_columns_do_not_randomize():
    loss = LossMatrix.from_matrix([[0, 0, 1], [1, 1, 0], [1, 1, 0]])
    d = randomized_bayes([0.8, 0.1, 0.1], 0.05, loss, rng=np.random.default_rng(0))
    assert np.array_equal(d, [1.0, 0.0, 0.0])


def test_cumulative_loss_examples():
    x = np.array([0, 1, 1, 0])
    truth = np.eye(2)[x]
    assert cumulative_loss(x, truth, HAM2) == 0.0
    assert cumulative_loss(x, np.full((4, 2), 0.5), HAM2) == 0.5
    assert cumulative_loss([0, 1, 2], np.full((3, 3), 1 / 3), LossMatrix.hamming(3)) == pytest.approx(2 / 3)
    with pytest.raises(InvalidArgumentError):
        cumulative_loss([0, 1], truth, HAM2)


@given(st.integers(1, 30), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_cumulative_loss_direct_sum(n, M, seed):
    rng = np.random.default_rng(seed)
    lam = rng.random((M, M))
    D = rng.dirichlet(np.ones(M), size=n)
    x = rng.integers(0, M, n)
    direct = sum(lam[x[t], a] * D[t, a] for t in range(n) for a in range(M)) / n
    assert cumulative_loss(x, D, LossMatrix.from_matrix(lam)) == pytest.approx(direct, abs=1e-12)


def test_fixed_model_eps_zero_is_bayes():
    rng = np.random.default_rng(4)
    model = HmpModel.create(1, [[0.9, 0.1], [0.1, 0.9]], bsc(0.2), 0.05)
    src = MarkovSource.symmetric(0.1)
    x = src.sample(2000, rng)
    z = dmc_corrupt(x, bsc(0.2), rng)
    rep = model_filter_run(model, z, x, HAM2, 0.0, rng)
    post, _ = filtered_posteriors(model, z)
    assert np.array_equal(rep.decisions.argmax(axis=1), bayes_responses(post, HAM2))
    assert np.all(rep.decisions.max(axis=1) == 1.0)
    assert rep.loss == pytest.approx(rep.expected_losses.mean(), abs=1e-12)
    assert 0 <= rep.loss <= 1


def test_universal_refit_log_and_prefix():
    rng = np.random.default_rng(5)
    x = MarkovSource.symmetric(0.1).sample(3000, rng)
    z = dmc_corrupt(x, bsc(0.2), rng)
    rep = universal_filter_run(z, x, k=2, channel=bsc(0.2), loss=HAM2, epsilon=0.01, rng=rng)
    assert [r["t"] for r in rep.refits] == [100, 200, 600, 2400]
    assert [r["block"] for r in rep.refits] == [1, 2, 3, 4]
    uniform = HmpModel.uniform(2, bsc(0.2), FloorSchedule().delta(2))
    post, _ = filtered_posteriors(uniform, z[:99])
    assert np.allclose(rep.posteriors[:99], post)
    assert rep.loss == pytest.approx(cumulative_loss(x, rep.decisions, HAM2), abs=1e-12)
    assert np.allclose(rep.decisions.sum(axis=1), 1.0)


def test_universal_replays_from_start_after_refit():
    rng = np.random.default_rng(6)
    x = MarkovSource.symmetric(0.1).sample(700, rng)
    z = dmc_corrupt(x, bsc(0.2), rng)
    rep = universal_filter_run(z, x, k=1, channel=bsc(0.2), loss=HAM2, epsilon=0.0, rng=rng)
    A = np.array(rep.metadata["final_transitions"])
    model = HmpModel.create(1, A, bsc(0.2), FloorSchedule().delta(1))
    post, _ = filtered_posteriors(model, z)
    assert np.allclose(rep.posteriors[599:], post[599:], atol=1e-12)


def test_universal_run_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        x = MarkovSource.symmetric(0.1).sample(1000, rng)
        z = dmc_corrupt(x, bsc(0.2), rng)
        return universal_filter_run(z, x, k=1, channel=bsc(0.2), loss=HAM2, epsilon=0.05, rng=rng)

    a, b = run(), run()
    assert np.array_equal(a.decisions, b.decisions)
    assert a.steps_csv() == b.steps_csv()


def test_universal_run_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidArgumentError):
        universal_filter_run([0, 1], [0], k=1, channel=bsc(0.2), loss=HAM2, epsilon=0, rng=rng)
    with pytest.raises(InvalidArgumentError):
        universal_filter_run([], k=1, channel=bsc(0.2), loss=HAM2, epsilon=0, rng=rng)
    with pytest.raises(EmptyClassError):
        universal_filter_run([0, 1], k=1, channel=bsc(0.2), loss=HAM2, epsilon=0, rng=rng, floor=FloorSchedule(0.9))


def test_iid_source_beats_majority_baseline():
    rng = np.random.default_rng(8)
    x = rng.integers(0, 2, 10**5)
    z = dmc_corrupt(x, bsc(0.2), rng)
    rep = universal_filter_run(z, x, k=1, channel=bsc(0.2), loss=HAM2, epsilon=0.01, rng=rng)
    majority = np.mean(x != np.bincount(x).argmax())
    assert rep.loss <= majority + 0.01


def test_realized_loss_tracks_expected_loss():
    rng = np.random.default_rng(9)
    x = MarkovSource.symmetric(0.1).sample(20000, rng)
    z = dmc_corrupt(x, bsc(0.2), rng)
    diffs = []
    for r in range(10):
        rep = universal_filter_run(
            z, x, k=1, channel=bsc(0.2), loss=HAM2, epsilon=0.3, rng=np.random.default_rng(r), mc_samples=64
        )
        diffs.append(rep.realized_loss - rep.loss)
    diffs = np.array(diffs)
    se = diffs.std(ddof=1) / math.sqrt(diffs.size)
    assert abs(diffs.mean()) <= 3 * se + 1e-3


def test_steps_csv_layout():
    rng = np.random.default_rng(10)
    x = rng.integers(0, 2, 50)
    z = dmc_corrupt(x, bsc(0.2), rng)
    rep = universal_filter_run(z, x, k=1, channel=bsc(0.2), loss=HAM2, epsilon=0.0, rng=rng)
    lines = rep.steps_csv().splitlines()
    assert lines[0] == "t,post0,post1,dec0,dec1,sampled,loss,realized_loss"
    assert len(lines) == 51
    assert len(rep.steps_csv(thin=10).splitlines()) == 6
