"""Studentized statistics and confidence intervals at the random sample size.

The stopped walk supplies tau observations e_1..e_tau of its first tracked
covariate. The uncorrected interval studentizes the stopped mean as if tau
were fixed; the corrected interval shifts both endpoints by a plug-in
estimate of the first-order coverage error, which depends on the increment
skewness, the covariance between covariate and boundary increments, and
the boundary level. Both endpoints move together, so widths are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVariance,
    IncrementsNotRetained,
    NonPositiveNuHat,
    TooFewObservations,
)
from .expansion import norm_quantile
from .walk import StoppedWalk

MU3_MODES = ("zero", "estimated")
METHODS = ("anscombe", "corrected-zero-mu3", "corrected-estimated-mu3")


@dataclass(frozen=True)
class PluginEstimates:
    """Within-walk moment estimates driving the corrected interval."""

    tau: int
    ybar: float
    nu_hat: float
    sigma_sq_hat: float     # 1/(tau-1) sum (e_i - ybar)^2
    sigma0_sq_hat: float    # 1/tau version
    mu3_hat: float
    sigma_xy_hat: float
    mu3_mode: str


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    alpha: float
    method: str

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _observations(walk: StoppedWalk) -> tuple[np.ndarray, np.ndarray]:
    if walk.w_increments is None or walk.x_increments is None:
        raise IncrementsNotRetained("interval construction needs per-step increments")
    return walk.x_increments, walk.w_increments[:, 0]


def t_statistics(walk: StoppedWalk, mu: float) -> tuple[float, float]:
    """(T, T0): studentized stopped means with the tau-1 and tau denominators.

    Both share sign and |T| <= |T0|.
    """
    _, e = _observations(walk)
    tau = e.size
    if tau < 2:
        raise TooFewObservations("studentizing needs tau >= 2")
    ybar = float(e.mean())
    ss = float(np.sum((e - ybar) ** 2))
    if ss == 0.0:
        raise DegenerateVariance("all observations equal; variance estimate is zero")
    sigma_hat = math.sqrt(ss / (tau - 1))
    sigma0_hat = math.sqrt(ss / tau)
    t = (ybar - mu) * math.sqrt(tau) / sigma_hat
    t0 = (ybar - mu) * math.sqrt(tau) / sigma0_hat
    return t, t0


def plugin_estimates(walk: StoppedWalk, mu3_mode: str = "zero") -> PluginEstimates:
    """Moment plug-ins evaluated on one stopped walk.

    nu_hat = X_tau / tau; sigma_xy_hat pairs per-step boundary increments
    with the covariate observations; mu3_mode picks zero or the empirical
    third central moment.
    """
    if mu3_mode not in MU3_MODES:
        raise ValueError(f"mu3_mode must be one of {MU3_MODES}")
    x_inc, e = _observations(walk)
    tau = e.size
    if tau < 2:
        raise TooFewObservations("plug-in estimates need tau >= 2")
    ybar = float(e.mean())
    ss = float(np.sum((e - ybar) ** 2))
    sigma_sq = ss / (tau - 1)
    sigma0_sq = ss / tau
    xbar = walk.x_tau / tau
    sigma_xy = float((x_inc * e).mean() - xbar * ybar)
    mu3 = 0.0 if mu3_mode == "zero" else float(((e - ybar) ** 3).mean())
    return PluginEstimates(
        tau=tau,
        ybar=ybar,
        nu_hat=float(xbar),
        sigma_sq_hat=float(sigma_sq),
        sigma0_sq_hat=float(sigma0_sq),
        mu3_hat=mu3,
        sigma_xy_hat=sigma_xy,
        mu3_mode=mu3_mode,
    )


def ci_anscombe(walk: StoppedWalk, alpha: float = 0.05) -> ConfidenceInterval:
    """ybar +- z_{alpha} sigma_hat / sqrt(tau), the fixed-size-style interval."""
    est = plugin_estimates(walk)
    z = float(norm_quantile(1.0 - alpha))
    half = z * math.sqrt(est.sigma_sq_hat / est.tau)
    return ConfidenceInterval(est.ybar - half, est.ybar + half, alpha, "anscombe")


def _shift_value(est: PluginEstimates, a: float, z: float) -> float:
    if est.nu_hat <= 0.0:
        raise NonPositiveNuHat(f"nu_hat = {est.nu_hat} <= 0")
    sigma_hat = math.sqrt(est.sigma_sq_hat)
    if sigma_hat == 0.0:
        # both bracket terms carry vanishing numerators in this case
        return 0.0
    bracket = est.mu3_hat * (1.0 + 2.0 * z * z) / (6.0 * sigma_hat**3) - est.sigma_xy_hat / (
        2.0 * est.nu_hat * sigma_hat
    )
    return (sigma_hat / math.sqrt(est.tau)) * math.sqrt(est.nu_hat / a) * bracket


def ci_corrected(
    walk: StoppedWalk, alpha: float = 0.05, mu3_mode: str = "zero"
) -> ConfidenceInterval:
    """The anscombe interval translated by the first-order coverage correction.

    The shift applies to both endpoints, so the width matches ci_anscombe
    exactly; mu3_mode picks the skewness plug-in.
    """
    est = plugin_estimates(walk, mu3_mode)
    z = float(norm_quantile(1.0 - alpha))
    shift = _shift_value(est, walk.a, z)
    half = z * math.sqrt(est.sigma_sq_hat / est.tau)
    method = "corrected-zero-mu3" if mu3_mode == "zero" else "corrected-estimated-mu3"
    return ConfidenceInterval(
        est.ybar + shift - half, est.ybar + shift + half, alpha, method
    )


# ---------------------------------------------------------------------------
# vectorized twin used by the Monte Carlo harness


def batch_intervals(
    summaries: dict, a: float, alpha: float, method: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lower, upper, bad) arrays from per-walk running sums.

    summaries carries tau, x_tau, sum_e, sum_e2, sum_e3, sum_xe and the
    failed mask from the walk engine. bad marks replications with failed
    walks or tau < 2; their bounds are NaN. Agrees with the scalar
    ci_* constructors to floating-point roundoff.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    tau = summaries["tau"].astype(float)
    bad = summaries["failed"] | (summaries["tau"] < 2)
    safe_tau = np.where(bad, 2.0, tau)
    ybar = summaries["sum_e"] / safe_tau
    ss = np.maximum(summaries["sum_e2"] - safe_tau * ybar**2, 0.0)
    sigma_hat = np.sqrt(ss / (safe_tau - 1.0))
    z = float(norm_quantile(1.0 - alpha))
    half = z * sigma_hat / np.sqrt(safe_tau)
    if method == "anscombe":
        shift = 0.0
    else:
        nu_hat = summaries["x_tau"] / safe_tau
        bad = bad | (nu_hat <= 0.0)
        nu_safe = np.where(nu_hat > 0.0, nu_hat, 1.0)
        sigma_safe = np.where(sigma_hat > 0.0, sigma_hat, 1.0)
        sigma_xy = summaries["sum_xe"] / safe_tau - nu_hat * ybar
        if method == "corrected-estimated-mu3":
            mu3 = (
                summaries["sum_e3"] / safe_tau
                - 3.0 * ybar * summaries["sum_e2"] / safe_tau
                + 2.0 * ybar**3
            )
        else:
            mu3 = 0.0
        bracket = mu3 * (1.0 + 2.0 * z * z) / (6.0 * sigma_safe**3) - sigma_xy / (
            2.0 * nu_safe * sigma_safe
        )
        shift = np.where(
            sigma_hat > 0.0,
            sigma_hat / np.sqrt(safe_tau) * np.sqrt(nu_safe / a) * bracket,
            0.0,
        )
    lower = np.where(bad, np.nan, ybar + shift - half)
    upper = np.where(bad, np.nan, ybar + shift + half)
    return lower, upper, bad
