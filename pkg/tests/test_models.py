"""Moment machinery: closed forms against simulation, and hand oracles."""

import numpy as np
import pytest

import stopwalk as sw
from stopwalk.errors import MomentsUnavailable, NonPositiveDrift, SingularSigma

RNG = lambda s: np.random.Generator(np.random.Philox(s))


def _assert_within_se(analytic, empirical, se, k=4.5, rel=0.0, floor=1e-9):
    a = np.asarray(analytic, dtype=float)
    e = np.asarray(empirical, dtype=float)
    s = np.asarray(se, dtype=float)
    assert np.all(np.abs(a - e) <= k * s + rel * np.abs(a) + floor), (a, e, s)


MODELS = [
    sw.bivariate_normal(nu=0.5, mu=0.0, rho=0.4),
    sw.bivariate_normal(nu=0.25, mu=0.3, rho=0.8),
    sw.gaussian_general(nu=0.7, mean_w=[0.2, -0.1], cov=[[1.0, 0.3, 0.1],
                                                         [0.3, 2.0, -0.4],
                                                         [0.1, -0.4, 1.5]]),
    sw.positive_exponential(rate=2.0, alpha=1.0, beta=0.5, noise_sd=0.7),
    sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4, coupling=0.7),
    sw.bernoulli_step(p=0.75),
]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind + "-" + m.fingerprint())
def test_analytic_moments_match_simulation(model):
    # the bernoulli covariate is an affine function of X, so its starred
    # residual block is rank one and the isqrt must zero the null direction
    allow = model.kind == "bernoulli-step"
    base = sw.analytic_moments(model, allow_singular=allow)
    emp = sw.sample_moments(model, 400_000, RNG(101), allow_singular=allow)
    # residual fields plug in nu-hat and gamma-hat; the reported se does not
    # carry that delta-method term, so allow for it (1/nu^2 has sensitivity 2)
    slack = 4.5 * 2.0 * np.sqrt(base.var_x) / (base.nu * np.sqrt(400_000.0))
    _assert_within_se(base.nu, emp.nu, emp.se["nu"])
    _assert_within_se(base.mu, emp.mu, emp.se["mu"])
    _assert_within_se(base.gamma, emp.gamma, emp.se["gamma"])
    _assert_within_se(base.sigma_mat, emp.sigma_mat, emp.se["sigma_mat"], rel=slack)
    _assert_within_se(
        base.sigma_star_mat, emp.sigma_star_mat, emp.se["sigma_star_mat"], rel=slack
    )
    _assert_within_se(base.z_third, emp.z_third, emp.se["z_third"], rel=slack)
    _assert_within_se(base.z_star_third, emp.z_star_third, emp.se["z_star_third"], rel=slack)
    _assert_within_se(base.z_sq_z, emp.z_sq_z, emp.se["z_sq_z"], rel=slack)
    _assert_within_se(base.z_star_sq_z, emp.z_star_sq_z, emp.se["z_star_sq_z"], rel=slack)
    _assert_within_se(base.xz, emp.xz, emp.se["xz"], rel=slack)
    _assert_within_se(base.xz_star, emp.xz_star, emp.se["xz_star"], rel=slack)
    _assert_within_se(base.mu3, emp.mu3, emp.se["mu3"])
    _assert_within_se(base.sigma_xy, emp.sigma_xy, emp.se["sigma_xy"])
    _assert_within_se(base.var_x, emp.var_x, emp.se["var_x"])


def test_bivariate_normal_closed_forms():
    ms = sw.analytic_moments(sw.bivariate_normal(nu=0.5, mu=0.0, rho=0.4))
    assert ms.nu == 0.5
    assert ms.mu == 0.0
    assert ms.gamma == pytest.approx([0.0], abs=0)
    # with gamma = 0 the residual is Y itself: unit variance, corr(X, Y) = rho
    assert ms.sigma_mat[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert ms.sigma_xy == pytest.approx(0.4, abs=1e-14)
    assert ms.xz[0] == pytest.approx(0.4, abs=1e-14)
    assert ms.mu3 == 0.0
    assert np.allclose(ms.z_third, 0.0)
    # starred last row: residual coordinate is 1 - X/nu
    assert ms.sigma_star_mat[-1, -1] == pytest.approx(ms.var_x / ms.nu**2, rel=1e-12)


def test_gamma_shifted_skewness_closed_form():
    k, th = 3.0, 0.4
    ms = sw.analytic_moments(
        sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=k, y_scale=th, coupling=0.0)
    )
    assert ms.mu == pytest.approx(0.0, abs=1e-14)
    assert ms.var_y == pytest.approx(k * th**2, rel=1e-12)
    assert ms.mu3 == pytest.approx(2.0 * k * th**3, rel=1e-12)
    # no coupling: covariate independent of the boundary increment
    assert ms.sigma_xy == pytest.approx(0.0, abs=1e-14)


def test_bernoulli_step_atoms():
    model = sw.bernoulli_step(p=0.75)
    # W = B is affine in X, so the starred residual pair is rank one
    with pytest.raises(SingularSigma):
        sw.analytic_moments(model)
    ms = sw.analytic_moments(model, allow_singular=True)
    assert ms.nu == pytest.approx(0.5)
    assert ms.gamma[0] == pytest.approx(1.5)
    assert ms.var_x == pytest.approx(0.75)
    # residual W - gamma X takes values -/+ 0.5 gamma with the two atoms
    assert ms.sigma_mat[0, 0] == pytest.approx(0.75, rel=1e-12)


def test_degenerate_needs_allow_singular():
    model = sw.degenerate(x0=1.0, w0=(0.5,))
    with pytest.raises(SingularSigma):
        sw.analytic_moments(model)
    ms = sw.analytic_moments(model, allow_singular=True)
    assert ms.nu == 1.0
    assert np.allclose(ms.sigma_mat, 0.0)
    assert np.allclose(ms.z_third, 0.0)


def test_composite_has_no_closed_forms_but_samples():
    mix = sw.composite(
        sw.bivariate_normal(nu=0.5, rho=0.2),
        sw.bivariate_normal(nu=1.0, rho=0.6),
        weight=0.3,
    )
    with pytest.raises(MomentsUnavailable):
        sw.analytic_moments(mix)
    emp = sw.sample_moments(mix, 200_000, RNG(7))
    # mixture drift: .3 * .5 + .7 * 1.0
    assert emp.nu == pytest.approx(0.85, abs=5 * emp.se["nu"])


def test_nonpositive_drift_rejected_at_construction():
    with pytest.raises(NonPositiveDrift):
        sw.bivariate_normal(nu=-0.1)
    with pytest.raises(NonPositiveDrift):
        sw.bivariate_normal(nu=0.0)
    with pytest.raises(NonPositiveDrift):
        sw.bernoulli_step(p=0.5)
    with pytest.raises(NonPositiveDrift):
        sw.degenerate(x0=-1.0)


def test_fingerprint_and_spec_round_trip():
    m1 = sw.bivariate_normal(nu=0.5, rho=0.4)
    m2 = sw.model_from_spec(m1.describe())
    assert m1.fingerprint() == m2.fingerprint()
    assert m1.fingerprint() != sw.bivariate_normal(nu=0.5, rho=0.8).fingerprint()
    mix = sw.composite(m1, sw.bernoulli_step(p=0.75), weight=0.25)
    assert sw.model_from_spec(mix.describe()).fingerprint() == mix.fingerprint()


@pytest.mark.parametrize("model", [
    sw.bivariate_normal(nu=1.0, mu=0.0, rho=0.6),
    sw.gamma_shifted(x_shape=4.0, x_scale=0.25, y_shape=12.0, y_scale=0.25, coupling=1.0),
], ids=("normal", "gamma"))
def test_lifted_t_covariance_matches_simulation(model):
    """Sigma* of the (e, e^2, n) lift against a direct per-step estimate."""
    sig_star, gam_star = sw.lifted_t_sigma_star(model)
    assert gam_star == pytest.approx([0.0, 1.0, 1.0], abs=1e-12)
    rng = RNG(55)
    x, w = model.sample_block(rng, 1, 400_000)
    x = x[0]
    e = w[0, :, 0]
    lift = np.column_stack([e, e**2, np.ones_like(e)])
    resid = lift - gam_star[None, :] * x[:, None]
    resid -= resid.mean(axis=0)  # center to isolate the covariance
    cov = resid.T @ resid / x.size
    se = np.abs(cov).max() * 0.05 + 0.01
    assert np.all(np.abs(cov - sig_star) <= se), (cov, sig_star)
