"""Ladder moments, rho weight functions, and the identity suite."""

import math

import numpy as np
import pytest

import stopwalk as sw
from stopwalk.ladder import analytic_ladder_moments, check_identities, ladder_moments, rho_eval

RNG = lambda s: np.random.Generator(np.random.Philox(s))


def _ladder_ctx(model, n, seed, allow_singular=False):
    base = sw.analytic_moments(model, allow_singular=allow_singular)
    sample = sw.sample_ladder_variables(model, n, RNG(seed))
    return base, sample


def test_exponential_rho0_is_memoryless_survival():
    model = sw.positive_exponential(rate=1.0, alpha=1.0, beta=0.0, noise_sd=0.5)
    base = sw.analytic_moments(model)
    lm = analytic_ladder_moments(model, base)
    # positive increments: the first ladder height is the increment itself,
    # so rho0(x) = P(X >= x)/nu = exp(-x) at unit rate
    assert rho_eval(lm, 0.5) == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert rho_eval(lm, 2.0) == pytest.approx(math.exp(-2.0), rel=1e-12)
    assert rho_eval(lm, 0.0) == 0.0
    assert rho_eval(lm, -1.0) == 0.0
    grid = np.array([-0.5, 0.25, 1.0])
    vals = rho_eval(lm, grid)
    assert vals.shape == (3,)
    assert vals == pytest.approx([0.0, math.exp(-0.25), math.exp(-1.0)], rel=1e-12)


def test_analytic_ladder_moments_trivial_epoch():
    model = sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4, coupling=0.7)
    base = sw.analytic_moments(model)
    lm = analytic_ladder_moments(model, base)
    assert lm.e_t == 1.0
    assert lm.e_x == pytest.approx(base.nu)
    assert lm.e_x2 == pytest.approx(base.var_x + base.nu**2)
    assert lm.tz_tilde == pytest.approx(np.zeros(base.m))
    assert lm.xz_tilde == pytest.approx(base.xz)


def test_empirical_rho_matches_analytic_on_positive_model():
    model = sw.positive_exponential(rate=2.0, alpha=1.0, beta=0.5, noise_sd=0.7)
    base, sample = _ladder_ctx(model, 200_000, (21, 0))
    emp = ladder_moments(sample, base)
    ana = analytic_ladder_moments(model, base)
    for x in (0.1, 0.5, 1.0, 2.0):
        assert rho_eval(emp, x) == pytest.approx(rho_eval(ana, x), abs=0.02)
        e1 = rho_eval(emp, x, which="rho1")
        a1 = rho_eval(ana, x, which="rho1")
        assert e1.shape == a1.shape == (1,)
        assert e1 == pytest.approx(a1, abs=0.02)
        es = rho_eval(emp, x, which="rho1_star")
        as_ = rho_eval(ana, x, which="rho1_star")
        assert es.shape == as_.shape == (2,)
        assert es == pytest.approx(as_, abs=0.03)


def test_empirical_rho0_step_function_shape():
    model = sw.bivariate_normal(nu=0.5, rho=0.4)
    base, sample = _ladder_ctx(model, 5000, (22, 0))
    lm = ladder_moments(sample, base)
    xs = np.linspace(-1.0, sample.x.max() + 1.0, 200)
    vals = rho_eval(lm, xs)
    assert np.all(np.diff(vals[xs > 0]) <= 1e-15)  # survival-type, nonincreasing
    assert np.all(vals[xs <= 0] == 0.0)
    assert rho_eval(lm, sample.x.max() + 2.0) == 0.0
    # at x just above 0 the step function carries the full mass 1/(nu E T)
    assert rho_eval(lm, 1e-12) == pytest.approx(1.0 / (base.nu * lm.e_t), rel=1e-12)


def test_rho_eval_rejects_unknown_kind():
    model = sw.bivariate_normal(nu=0.5)
    base, sample = _ladder_ctx(model, 100, (23, 0))
    lm = ladder_moments(sample, base)
    with pytest.raises(ValueError):
        rho_eval(lm, 0.5, which="rho2")


def test_ladder_moment_standard_errors_cover_truth():
    model = sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4)
    base, sample = _ladder_ctx(model, 100_000, (24, 0))
    lm = ladder_moments(sample, base)
    ana = analytic_ladder_moments(model, base)
    assert abs(lm.e_t - ana.e_t) <= 1e-12  # T identically one here
    assert abs(lm.e_x - ana.e_x) <= 5 * lm.se["e_x"]
    assert abs(lm.e_x2 - ana.e_x2) <= 5 * lm.se["e_x2"]
    assert np.all(np.abs(lm.xz_tilde - ana.xz_tilde) <= 5 * lm.se["xz_tilde"] + 1e-9)
    assert np.all(
        np.abs(lm.xz_star_tilde - ana.xz_star_tilde) <= 5 * lm.se["xz_star_tilde"] + 1e-9
    )


IDENTITY_MODELS = [
    ("normal", sw.bivariate_normal(nu=0.5, rho=0.4), False),
    ("bernoulli", sw.bernoulli_step(p=0.75), True),
    ("gamma", sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4, coupling=0.7), False),
]


@pytest.mark.parametrize("label,model,singular", IDENTITY_MODELS, ids=lambda v: v if isinstance(v, str) else "")
def test_identity_suite_within_four_sigma(label, model, singular):
    base, sample = _ladder_ctx(model, 30_000, (25, hash(label) % 1000), allow_singular=singular)
    report = check_identities(sample, base)
    exclude = ("cubic_transfer_mean_variant", "quadratic_transfer_mean_variant")
    assert report.max_abs_resid(exclude=exclude) < 4.5
    assert report.n == 30_000
    names = [r.name for r in report.rows]
    assert "zeta_third_moment" in names
    assert "cubic_transfer" in names


def test_mean_variant_reading_fails_when_epochs_vary():
    # for walks that can dip below zero, E[T Z_T] != 0 and the factored
    # reading of the transfer identities must be visibly wrong
    model = sw.bernoulli_step(p=0.75)
    base, sample = _ladder_ctx(model, 100_000, (26, 0), allow_singular=True)
    report = check_identities(sample, base)
    by_name = {r.name: r for r in report.rows}
    assert abs(by_name["cubic_transfer_mean_variant"].resid) > 4.0
    assert abs(by_name["cubic_transfer"].resid) < 4.5
    # positive-increment models have T = 1, so both readings coincide
    pos = sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4)
    base_p, sample_p = _ladder_ctx(pos, 50_000, (26, 1))
    rep_p = check_identities(sample_p, base_p)
    assert rep_p.max_abs_resid() < 4.5


def test_degenerate_rows_are_zero_not_inf():
    model = sw.degenerate(x0=1.0, w0=(0.5,))
    base, sample = _ladder_ctx(model, 500, (27, 0), allow_singular=True)
    report = check_identities(sample, base)
    assert all(np.isfinite(r.resid) for r in report.rows)
    assert report.max_abs_resid() == 0.0


def test_identity_report_serialization():
    model = sw.bivariate_normal(nu=0.5, rho=0.4)
    base, sample = _ladder_ctx(model, 1000, (28, 0))
    report = check_identities(sample, base)
    d = report.to_dict()
    assert d["kind"] == "identity-report"
    assert d["n"] == 1000
    assert {"name", "claim", "estimate", "se", "resid"} <= set(d["rows"][0])
