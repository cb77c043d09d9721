"""First-passage engine, ladder epoch extraction, batch summaries."""

import numpy as np
import pytest
from scipy import stats

import stopwalk as sw
from stopwalk.errors import InvalidCount, MaxStepsExceeded, NoLadderEpoch

RNG = lambda s: np.random.Generator(np.random.Philox(s))


def test_unit_step_walk_crosses_exactly():
    model = sw.degenerate(x0=1.0, w0=(2.0,))
    walk = sw.run_to_boundary(model, 2.5, RNG(0))
    assert walk.tau == 3
    assert walk.x_tau == pytest.approx(3.0)
    assert walk.overshoot == pytest.approx(0.5)
    assert walk.w_tau == pytest.approx([6.0])
    assert walk.x_increments.shape == (3,)


def test_first_crossing_is_really_first():
    model = sw.bivariate_normal(nu=0.4, rho=0.3)
    for seed in range(8):
        walk = sw.run_to_boundary(model, 7.0, RNG(seed))
        cums = np.cumsum(walk.x_increments)
        assert np.all(cums[:-1] <= 7.0)
        assert cums[-1] > 7.0
        assert walk.x_tau == pytest.approx(cums[-1])


def test_stopping_index_is_a_ladder_epoch():
    model = sw.bivariate_normal(nu=0.3, rho=0.5)
    for seed in range(6):
        walk = sw.run_to_boundary(model, 4.0, RNG((9, seed)))
        epochs = sw.ladder_epochs(walk.x_increments, walk.w_increments)
        assert epochs.times[-1] == walk.tau
        assert epochs.x_heights[-1] == pytest.approx(walk.x_tau)


def test_ladder_epochs_by_hand():
    eps = sw.ladder_epochs(np.array([1.0, -1.0, 3.0, -0.5, 0.3]))
    assert eps.times.tolist() == [1, 3]
    assert eps.x_heights == pytest.approx([1.0, 3.0])
    assert eps.gaps.tolist() == [1, 2]
    assert eps.x_steps == pytest.approx([1.0, 2.0])
    with pytest.raises(NoLadderEpoch):
        sw.ladder_epochs(np.array([-1.0, -0.2, 0.0]))


def test_batch_summaries_match_walk_fields():
    model = sw.positive_exponential(rate=1.0, alpha=1.0, beta=0.3)
    out = sw.batch_stopped_sums(model, 6.0, 500, RNG(3), want_w_tau=True, want_e_sums=True)
    assert not out["failed"].any()
    assert np.all(out["x_tau"] > 6.0)
    assert out["overshoot"] == pytest.approx(out["x_tau"] - 6.0)
    # sum_e is the first covariate of the stopped sum
    assert out["sum_e"] == pytest.approx(out["w_tau"][:, 0])
    assert np.all(out["tau"] >= 1)


def test_batch_matches_single_walk_engine_statistically():
    model = sw.bivariate_normal(nu=0.5, rho=0.4)
    out = sw.batch_stopped_sums(model, 10.0, 4000, RNG(4), want_e_sums=True)
    taus = out["tau"]
    singles = np.array([sw.run_to_boundary(model, 10.0, RNG((5, s))).tau for s in range(400)])
    se = np.sqrt(taus.var() / taus.size + singles.var() / singles.size)
    assert abs(taus.mean() - singles.mean()) < 4.5 * se


def test_exponential_overshoot_is_memoryless():
    model = sw.positive_exponential(rate=1.0, alpha=0.0, beta=0.0, noise_sd=1.0)
    out = sw.batch_stopped_sums(model, 5.0, 20_000, RNG(6))
    res = stats.kstest(out["overshoot"], "expon")
    assert res.statistic < 1.63 / np.sqrt(20_000)


def test_bernoulli_ladder_sample():
    model = sw.bernoulli_step(p=0.75)
    samp = sw.sample_ladder_variables(model, 20_000, RNG(8))
    # every strict ascending ladder height of a +-1 walk is exactly 1
    assert np.all(samp.x == 1.0)
    et = samp.t.mean()
    se = samp.t.std() / np.sqrt(samp.t.size)
    assert abs(et - 2.0) < 4.5 * se  # E[T] = 1/(2p-1)


def test_positive_model_ladder_is_trivial():
    model = sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4)
    samp = sw.sample_ladder_variables(model, 2000, RNG(9))
    assert np.all(samp.t == 1)


def test_max_steps_exceeded():
    slow = sw.degenerate(x0=1.0, w0=(0.0,))
    with pytest.raises(MaxStepsExceeded):
        sw.run_to_boundary(slow, 1e6, RNG(10), max_steps=50)
    out = sw.batch_stopped_sums(slow, 1e6, 32, RNG(11), max_steps=50)
    assert out["failed"].all()


def test_invalid_count():
    model = sw.bivariate_normal(nu=0.5)
    with pytest.raises(InvalidCount):
        sw.batch_stopped_sums(model, 1.0, 0, RNG(0))
    with pytest.raises(InvalidCount):
        sw.sample_ladder_variables(model, -3, RNG(0))


def test_batch_determinism_same_seed():
    model = sw.bivariate_normal(nu=0.5, rho=0.4)
    a = sw.batch_stopped_sums(model, 8.0, 300, RNG((1, 2)), want_e_sums=True)
    b = sw.batch_stopped_sums(model, 8.0, 300, RNG((1, 2)), want_e_sums=True)
    for key in ("tau", "x_tau", "overshoot", "sum_e", "sum_e2", "sum_e3", "sum_xe"):
        assert np.array_equal(a[key], b[key]), key


def test_walk_rejects_inconsistent_increments():
    with pytest.raises(ValueError):
        sw.StoppedWalk(
            tau=2, a=1.5, x_tau=1.0, w_tau=np.array([0.0]), overshoot=-0.5,
            x_increments=np.array([0.5, 0.5]), w_increments=np.zeros((2, 1)),
        )
