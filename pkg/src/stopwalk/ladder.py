"""First-ladder moments, the survival-type weight functions, and identity checks.

The first strict ascending ladder triple (T, X-tilde, W-tilde) drives every
second-order correction downstream: expansions consume E[T], E[X-tilde],
E[X-tilde^2], the standardized cross moments E[X-tilde Z-tilde] and the
weight functions

    rho_0(x) = P(X-tilde >= x) / (nu E[T])
    rho_1(x) = E[Z-tilde; X-tilde >= x] / (nu sqrt(E[T]))

(with Z-tilde = Sigma^{-1/2}(W-tilde - gamma X-tilde)/sqrt(E[T]) and a
starred variant that appends the epoch count to the covariates). All three
vanish on (-inf, 0].

For models whose X increment is almost surely positive the first ladder
epoch is T = 1 and everything is available in closed form; otherwise the
moments are plain Monte Carlo averages over a LadderSample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import MomentsUnavailable
from .models import IncrementModel, MomentSet
from .walk import LadderSample

_RHO_KINDS = ("rho0", "rho1", "rho1_star")


@dataclass
class LadderMoments:
    """Moments of the first ladder triple plus the rho weight functions."""

    e_t: float
    e_x: float
    e_x2: float
    xz_tilde: np.ndarray        # E[X-tilde Z-tilde], length m
    xz_star_tilde: np.ndarray   # starred version, length m+1
    tz_tilde: np.ndarray        # E[T Z-tilde], length m
    nu: float
    source: str
    fingerprint: str
    n_draws: int | None = None
    se: dict | None = None
    # empirical representation: samples sorted by ladder height
    _x_sorted: np.ndarray | None = field(default=None, repr=False)
    _z_suffix: np.ndarray | None = field(default=None, repr=False)
    _z_star_suffix: np.ndarray | None = field(default=None, repr=False)
    # analytic representation: survival-type integrals as callables
    _rho_fns: dict | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.xz_tilde.size


def ladder_moments(sample: LadderSample, base: MomentSet) -> LadderMoments:
    """Empirical ladder moments from sampled (T, X-tilde, W-tilde) triples.

    Z-tilde uses base's Sigma^{-1/2} and gamma with the empirical E[T].
    """
    t = sample.t.astype(float)
    x = sample.x
    w = sample.w
    n = t.size
    e_t = float(t.mean())
    root_et = math.sqrt(e_t)
    resid = w - np.outer(x, base.gamma)
    # starred residual is (W, T) - gamma* X; the appended coordinate is T - X/nu
    resid_star = np.concatenate([resid, (t - x / base.nu)[:, None]], axis=1)
    z = (resid @ base.sigma_isqrt.T) / root_et
    z_star = (resid_star @ base.sigma_star_isqrt.T) / root_et
    prod_xz = x[:, None] * z
    prod_xz_star = x[:, None] * z_star
    prod_tz = t[:, None] * z
    root_n = math.sqrt(n)
    se = {
        "e_t": float(t.std() / root_n),
        "e_x": float(x.std() / root_n),
        "e_x2": float((x**2).std() / root_n),
        "xz_tilde": prod_xz.std(axis=0) / root_n,
        "xz_star_tilde": prod_xz_star.std(axis=0) / root_n,
        "tz_tilde": prod_tz.std(axis=0) / root_n,
    }
    order = np.argsort(x, kind="stable")
    x_sorted = x[order]
    z_suffix = _suffix_sums(z[order])
    z_star_suffix = _suffix_sums(z_star[order])
    return LadderMoments(
        e_t=e_t,
        e_x=float(x.mean()),
        e_x2=float((x**2).mean()),
        xz_tilde=prod_xz.mean(axis=0),
        xz_star_tilde=prod_xz_star.mean(axis=0),
        tz_tilde=prod_tz.mean(axis=0),
        nu=base.nu,
        source="empirical",
        fingerprint=sample.fingerprint or base.fingerprint,
        n_draws=n,
        se=se,
        _x_sorted=x_sorted,
        _z_suffix=z_suffix,
        _z_star_suffix=z_star_suffix,
    )


def _suffix_sums(arr: np.ndarray) -> np.ndarray:
    """suffix[i] = sum of rows i..n-1; one extra zero row at the end."""
    out = np.zeros((arr.shape[0] + 1, arr.shape[1]))
    out[:-1] = np.cumsum(arr[::-1], axis=0)[::-1]
    return out


def analytic_ladder_moments(model: IncrementModel, base: MomentSet) -> LadderMoments:
    """Closed-form ladder moments for models with X > 0 almost surely.

    A strictly positive increment makes every step a ladder epoch, so T = 1
    and the ladder law equals the increment law; the rho functions reduce to
    survival-type integrals of the increment distribution.
    """
    if not model.positive_x():
        raise MomentsUnavailable(
            f"kind {model.kind!r} does not have almost surely positive X"
        )
    nu = base.nu
    p = model.params
    m = base.m

    if model.kind == "positive-exponential":
        lam = p["rate"]
        gamma1 = base.gamma[0]
        # residual polynomials in X (noise averages out of the indicators)
        r_poly = np.array([0.0, p["alpha"] - gamma1, p["beta"]])
        n_poly = np.array([1.0, -lam])

        def partial(poly, x):
            # E[poly(X); X >= x] via E[X^k; X >= x] recursion for Exp(lam)
            x = np.asarray(x, dtype=float)
            surv = np.exp(-lam * np.maximum(x, 0.0))
            ik = surv.copy()
            total = poly[0] * ik
            for k in range(1, len(poly)):
                ik = np.maximum(x, 0.0) ** k * surv + (k / lam) * ik
                total = total + poly[k] * ik
            return total

        def surv_fn(x):
            return np.exp(-lam * np.maximum(np.asarray(x, dtype=float), 0.0))

        def resid_partial(x):
            return np.stack([partial(r_poly, x), partial(n_poly, x)], axis=-1)

    elif model.kind == "gamma-shifted":
        k_x, th_x = p["x_shape"], p["x_scale"]
        gamma1 = base.gamma[0]
        d = p["coupling"] - gamma1

        def surv_fn(x):
            return special.gammaincc(k_x, np.maximum(np.asarray(x, dtype=float), 0.0) / th_x)

        def resid_partial(x):
            x = np.asarray(x, dtype=float)
            s0 = surv_fn(x)
            ex = nu * special.gammaincc(k_x + 1.0, np.maximum(x, 0.0) / th_x)
            centered = ex - nu * s0  # E[X - nu; X >= x]
            return np.stack([d * centered, -centered / nu], axis=-1)

    else:  # degenerate point mass
        x0 = p["x0"]

        def surv_fn(x):
            return (np.asarray(x, dtype=float) <= x0).astype(float)

        def resid_partial(x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape + (m + 1,))

    isq = base.sigma_isqrt
    isq_star = base.sigma_star_isqrt

    def rho0(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= 0, 0.0, surv_fn(x) / nu)

    def rho1(x):
        x = np.asarray(x, dtype=float)
        vals = resid_partial(x)[..., :m] @ isq.T / nu
        return np.where((x <= 0)[..., None], 0.0, vals)

    def rho1_star(x):
        x = np.asarray(x, dtype=float)
        vals = resid_partial(x) @ isq_star.T / nu
        return np.where((x <= 0)[..., None], 0.0, vals)

    return LadderMoments(
        e_t=1.0,
        e_x=nu,
        e_x2=base.var_x + nu**2,
        xz_tilde=base.xz.copy(),
        xz_star_tilde=base.xz_star.copy(),
        tz_tilde=np.zeros(m),
        nu=nu,
        source="analytic",
        fingerprint=base.fingerprint,
        _rho_fns={"rho0": rho0, "rho1": rho1, "rho1_star": rho1_star},
    )


def rho_eval(lm: LadderMoments, x, which: str = "rho0"):
    """Evaluate rho_0, rho_1 or the starred rho_1 at x (scalar or array).

    Empirical sources give step functions with P(X-tilde >= x) conventions;
    all variants are identically zero for x <= 0. rho_1 returns an array
    with a trailing coordinate axis.
    """
    if which not in _RHO_KINDS:
        raise ValueError(f"which must be one of {_RHO_KINDS}")
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    if lm._rho_fns is not None:
        vals = lm._rho_fns[which](x_arr)
    else:
        n = lm.n_draws
        idx = np.searchsorted(lm._x_sorted, x_arr, side="left")
        mask = x_arr <= 0
        if which == "rho0":
            vals = (n - idx) / (n * lm.nu * lm.e_t)
            vals = np.where(mask, 0.0, vals)
        else:
            suffix = lm._z_suffix if which == "rho1" else lm._z_star_suffix
            vals = suffix[idx] / (n * lm.nu * math.sqrt(lm.e_t))
            vals = np.where(mask[:, None], 0.0, vals)
    if scalar:
        return float(vals[0]) if which == "rho0" else vals[0]
    return vals


# ---------------------------------------------------------------------------
# identity suite


@dataclass
class IdentityRow:
    name: str
    claim: float
    estimate: float
    se: float
    resid: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "claim": self.claim,
            "estimate": self.estimate,
            "se": self.se,
            "resid": self.resid,
        }


@dataclass
class IdentityReport:
    fingerprint: str
    n: int
    rows: list

    def to_dict(self) -> dict:
        return {
            "kind": "identity-report",
            "fingerprint": self.fingerprint,
            "n": self.n,
            "rows": [r.to_dict() for r in self.rows],
        }

    def max_abs_resid(self, exclude: tuple = ()) -> float:
        vals = [abs(r.resid) for r in self.rows if r.name not in exclude]
        return max(vals) if vals else 0.0


def _row(name: str, diff: np.ndarray, claim: float, n: int) -> IdentityRow:
    """Studentized residual of a per-draw difference with zero mean under the claim."""
    mean = float(diff.mean())
    sd = float(diff.std())
    se = sd / math.sqrt(n)
    if se == 0.0:
        resid = 0.0 if mean == 0.0 else math.inf
    else:
        resid = mean / se
    return IdentityRow(name=name, claim=float(claim), estimate=float(mean + claim), se=se, resid=resid)


def check_identities(sample: LadderSample, base: MomentSet) -> IdentityReport:
    """Studentized checks of the stopped-walk moment identities.

    Each row pairs an empirical ladder moment with its claimed value from
    the increment moments, differencing per draw so the standard error
    accounts for the correlation between the two sides. Conventions:
    zeta_T = (X_T - nu T)/sd(X); Z_T = Sigma^{-1/2}(W_T - gamma X_T),
    unnormalized by E[T]. The cubic/quadratic transfer rows restate the
    Z-to-Z-tilde third-moment relations after multiplying through by
    E[T]^{3/2}, which removes any plug-in E[T] from the per-draw
    differences; the "_mean_variant" rows carry the rejected reading that
    replaces the joint moment E[T (q.Z-tilde)] by E[T] E[q.Z-tilde] (= 0)
    and are expected to fail for models where E[T Z_T] != 0.
    """
    t = sample.t.astype(float)
    x = sample.x
    w = sample.w
    n = t.size
    m = base.m
    nu = base.nu
    sx = math.sqrt(base.var_x) if base.var_x > 0 else 1.0
    zeta = (x - nu * t) / sx
    k3e = base.x3_central / sx**3
    resid = w - np.outer(x, base.gamma)
    z = resid @ base.sigma_isqrt.T
    resid_star = np.concatenate([resid, (t - x / nu)[:, None]], axis=1)
    z_q = z[:, 0]  # q = e_1 probe for the transfer rows
    zsq = (z**2).sum(axis=1)
    c3 = float(base.z_third[0, 0, 0])
    csq = float(base.z_sq_z[0])

    rows = [_row("zeta_mean", zeta, 0.0, n)]
    if base.var_x > 0:
        # the studentized second/third moment rows divide by sd(X); they are
        # undefined for walks with no x-variance and are omitted there
        rows.append(_row("zeta_second_moment", zeta**2 - t, float(t.mean()), n))
        rows.append(_row("zeta_third_moment", zeta**3 - 3.0 * t * zeta - t * k3e, 0.0, n))
    rows.append(_row("height_mean", x - nu * t, float(nu * t.mean()), n))
    for k in range(m):
        rows.append(
            _row(
                f"covariate_mean_{k + 1}",
                w[:, k] - base.gamma[k] * x,
                float(base.gamma[k] * x.mean()),
                n,
            )
        )
    for k in range(m):
        rows.append(
            _row(
                f"cross_moment_z{k + 1}",
                (x - nu * t) * z[:, k] - t * base.xz[k],
                float(t.mean() * base.xz[k]),
                n,
            )
        )
        rows.append(
            _row(
                f"time_cross_moment_z{k + 1}",
                (x / nu - t) * z[:, k] - t * base.xz[k] / nu,
                float(t.mean() * base.xz[k] / nu),
                n,
            )
        )
    for j in range(m):
        for k in range(j, m):
            rows.append(
                _row(
                    f"residual_covariance_{j + 1}{k + 1}",
                    resid[:, j] * resid[:, k] - t * base.sigma_mat[j, k],
                    float(t.mean() * base.sigma_mat[j, k]),
                    n,
                )
            )
    for j in range(m + 1):
        for k in range(j, m + 1):
            rows.append(
                _row(
                    f"residual_covariance_star_{j + 1}{k + 1}",
                    resid_star[:, j] * resid_star[:, k] - t * base.sigma_star_mat[j, k],
                    float(t.mean() * base.sigma_star_mat[j, k]),
                    n,
                )
            )
    rows.append(
        _row("cubic_transfer", z_q**3 - t * c3 - 3.0 * t * z_q, float((t * (c3 + 3 * z_q)).mean()), n)
    )
    rows.append(_row("cubic_transfer_mean_variant", z_q**3 - t * c3, float((t * c3).mean()), n))
    rows.append(
        _row(
            "quadratic_transfer",
            zsq * z_q - t * csq - (m + 2.0) * t * z_q,
            float((t * (csq + (m + 2.0) * z_q)).mean()),
            n,
        )
    )
    rows.append(
        _row("quadratic_transfer_mean_variant", zsq * z_q - t * csq, float((t * csq).mean()), n)
    )
    return IdentityReport(fingerprint=base.fingerprint, n=n, rows=rows)
