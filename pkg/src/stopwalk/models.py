"""Increment distributions and their population moments.

A model fixes the joint law of a single step ``(x, w)`` of a random walk:
``x`` is the real-valued component checked against the stopping boundary,
``w`` is the vector of m tracked covariates accumulated alongside it.  All
second-order approximations downstream are driven by a :class:`MomentSet`,
which collects the drift, the regression coefficients ``gamma = E[W]/E[X]``,
the residual covariances of ``W - gamma X`` (plain and with the step counter
adjoined), and the third-order moments of the standardized residuals.

Moments come either from closed forms (`analytic_moments`) or from plain
Monte Carlo averages with standard errors (`sample_moments`).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import special

from .errors import (
    InvalidCount,
    MomentsUnavailable,
    NonPositiveDrift,
    SingularSigma,
)

# Relative eigenvalue floor below which Sigma counts as singular.
EIG_REL_TOL = 1e-10

KINDS = (
    "bivariate-normal",
    "gaussian-general",
    "positive-exponential",
    "gamma-shifted",
    "bernoulli-step",
    "degenerate",
    "composite",
)


def as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    """Normalize seeds/None to a Generator; pass Generators through."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# model definition


@dataclass(frozen=True)
class IncrementModel:
    """One-step increment law. Construct through the factory functions."""

    kind: str
    dim_w: int
    params: dict

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        _VALIDATORS[self.kind](self)

    def fingerprint(self) -> str:
        """Stable hash of (kind, dim_w, params); tags derived moment objects."""
        blob = json.dumps(
            {"kind": self.kind, "dim_w": self.dim_w, "params": _jsonable(self.params)},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def drift(self) -> float | None:
        """E[X] when known in closed form, else None."""
        return _DRIFTS[self.kind](self)

    def positive_x(self) -> bool:
        """True when X > 0 almost surely (ladder structure is trivial)."""
        return self.kind in ("positive-exponential", "gamma-shifted") or (
            self.kind == "degenerate" and self.params["x0"] > 0
        )

    def sample_block(
        self, rng: np.random.Generator, rows: int, cols: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Draw a (rows, cols) block of steps; returns (x, w) with w of shape (rows, cols, m)."""
        return _SAMPLERS[self.kind](self, rng, rows, cols)

    def describe(self) -> dict:
        return {"kind": self.kind, "dim_w": self.dim_w, "params": _jsonable(self.params)}


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, IncrementModel):
        return obj.describe()
    return obj


# -- factories --------------------------------------------------------------


def bivariate_normal(nu: float, mu: float = 0.0, rho: float = 0.0) -> IncrementModel:
    """(X, Y) jointly normal, unit variances, E[X] = nu, E[Y] = mu, Corr = rho."""
    return IncrementModel(
        "bivariate-normal", 1, {"nu": float(nu), "mu": float(mu), "rho": float(rho)}
    )


def gaussian_general(nu: float, mean_w, cov) -> IncrementModel:
    """(X, W) jointly normal; cov is the (1+m) x (1+m) covariance of (X, W)."""
    mean_w = np.atleast_1d(np.asarray(mean_w, dtype=float))
    cov = np.asarray(cov, dtype=float)
    return IncrementModel(
        "gaussian-general",
        mean_w.size,
        {"nu": float(nu), "mean_w": mean_w.tolist(), "cov": cov.tolist()},
    )


def positive_exponential(
    rate: float = 1.0, alpha: float = 1.0, beta: float = 0.0, noise_sd: float = 1.0
) -> IncrementModel:
    """X ~ Exp(rate) > 0 and W = alpha X + beta X^2 + noise_sd * N(0,1)."""
    return IncrementModel(
        "positive-exponential",
        1,
        {
            "rate": float(rate),
            "alpha": float(alpha),
            "beta": float(beta),
            "noise_sd": float(noise_sd),
        },
    )


def gamma_shifted(
    x_shape: float,
    x_scale: float,
    y_shape: float,
    y_scale: float,
    y_shift: float | None = None,
    coupling: float = 0.0,
) -> IncrementModel:
    """X ~ Gamma(x_shape, x_scale) > 0; Y = G + y_shift + coupling (X - E[X]).

    G ~ Gamma(y_shape, y_scale) independent of X.  The default shift
    -y_shape*y_scale centers Y at zero.
    """
    if y_shift is None:
        y_shift = -float(y_shape) * float(y_scale)
    return IncrementModel(
        "gamma-shifted",
        1,
        {
            "x_shape": float(x_shape),
            "x_scale": float(x_scale),
            "y_shape": float(y_shape),
            "y_scale": float(y_scale),
            "y_shift": float(y_shift),
            "coupling": float(coupling),
        },
    )


def bernoulli_step(p: float) -> IncrementModel:
    """Lattice walk: X = 2B - 1 with B ~ Bernoulli(p), W = B. Needs p > 1/2."""
    return IncrementModel("bernoulli-step", 1, {"p": float(p)})


def degenerate(x0: float = 1.0, w0=(0.0,)) -> IncrementModel:
    """Point mass at (x0, w0); covariances vanish identically."""
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    return IncrementModel("degenerate", w0.size, {"x0": float(x0), "w0": w0.tolist()})


def composite(first: IncrementModel, second: IncrementModel, weight: float) -> IncrementModel:
    """Mixture drawing each step from `first` with probability `weight`.

    No closed-form moments are attached; use sample_moments.
    """
    if first.dim_w != second.dim_w:
        raise ValueError("mixture components must share dim_w")
    return IncrementModel(
        "composite",
        first.dim_w,
        {"first": first, "second": second, "weight": float(weight)},
    )


def model_from_spec(spec: dict) -> IncrementModel:
    """Build a model from a plain dict, e.g. parsed from a JSON config."""
    kind = spec.get("kind")
    params = dict(spec.get("params", {}))
    if kind == "bivariate-normal":
        return bivariate_normal(**params)
    if kind == "gaussian-general":
        return gaussian_general(**params)
    if kind == "positive-exponential":
        return positive_exponential(**params)
    if kind == "gamma-shifted":
        return gamma_shifted(**params)
    if kind == "bernoulli-step":
        return bernoulli_step(**params)
    if kind == "degenerate":
        return degenerate(**params)
    if kind == "composite":
        return composite(
            model_from_spec(params["first"]),
            model_from_spec(params["second"]),
            params["weight"],
        )
    raise ValueError(f"unknown model kind {kind!r}")


# -- validators (drift positivity is checked at construction) ---------------


def _require_positive_drift(nu: float, what: str):
    if not nu > 0:
        raise NonPositiveDrift(f"{what} gives E[X] = {nu} <= 0")


def _validate_bivariate(m: IncrementModel):
    p = m.params
    _require_positive_drift(p["nu"], "bivariate-normal")
    if not -1.0 < p["rho"] < 1.0:
        raise ValueError("rho must lie in (-1, 1)")


def _validate_gaussian(m: IncrementModel):
    p = m.params
    _require_positive_drift(p["nu"], "gaussian-general")
    cov = np.asarray(p["cov"], dtype=float)
    if cov.shape != (1 + m.dim_w, 1 + m.dim_w):
        raise ValueError("cov must be (1+m) x (1+m) for (X, W)")
    if not np.allclose(cov, cov.T):
        raise ValueError("cov must be symmetric")


def _validate_exponential(m: IncrementModel):
    p = m.params
    if p["rate"] <= 0:
        raise ValueError("rate must be positive")
    if p["noise_sd"] < 0:
        raise ValueError("noise_sd must be nonnegative")


def _validate_gamma(m: IncrementModel):
    p = m.params
    for key in ("x_shape", "x_scale", "y_shape", "y_scale"):
        if p[key] <= 0:
            raise ValueError(f"{key} must be positive")


def _validate_bernoulli(m: IncrementModel):
    p = m.params["p"]
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    _require_positive_drift(2.0 * p - 1.0, "bernoulli-step")


def _validate_degenerate(m: IncrementModel):
    if m.params["x0"] <= 0:
        raise NonPositiveDrift("degenerate x0 <= 0")


def _validate_composite(m: IncrementModel):
    w = m.params["weight"]
    if not 0.0 <= w <= 1.0:
        raise ValueError("weight must lie in [0, 1]")


_VALIDATORS = {
    "bivariate-normal": _validate_bivariate,
    "gaussian-general": _validate_gaussian,
    "positive-exponential": _validate_exponential,
    "gamma-shifted": _validate_gamma,
    "bernoulli-step": _validate_bernoulli,
    "degenerate": _validate_degenerate,
    "composite": _validate_composite,
}

_DRIFTS = {
    "bivariate-normal": lambda m: m.params["nu"],
    "gaussian-general": lambda m: m.params["nu"],
    "positive-exponential": lambda m: 1.0 / m.params["rate"],
    "gamma-shifted": lambda m: m.params["x_shape"] * m.params["x_scale"],
    "bernoulli-step": lambda m: 2.0 * m.params["p"] - 1.0,
    "degenerate": lambda m: m.params["x0"],
    "composite": lambda m: None,
}


# -- samplers ----------------------------------------------------------------


def _sample_bivariate(m, rng, rows, cols):
    p = m.params
    z = rng.standard_normal((2, rows, cols))
    x = p["nu"] + z[0]
    y = p["mu"] + p["rho"] * z[0] + math.sqrt(1.0 - p["rho"] ** 2) * z[1]
    return x, y[..., None]


def _sample_gaussian(m, rng, rows, cols):
    p = m.params
    cov = np.asarray(p["cov"], dtype=float)
    mean = np.concatenate(([p["nu"]], np.asarray(p["mean_w"], dtype=float)))
    # eigen factor rather than Cholesky so PSD-but-singular covariances sample too
    vals, vecs = np.linalg.eigh(cov)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    z = rng.standard_normal((rows, cols, mean.size))
    draws = mean + z @ factor.T
    return draws[..., 0], draws[..., 1:]


def _sample_exponential(m, rng, rows, cols):
    p = m.params
    x = rng.exponential(1.0 / p["rate"], (rows, cols))
    w = p["alpha"] * x + p["beta"] * x * x
    if p["noise_sd"] > 0:
        w = w + p["noise_sd"] * rng.standard_normal((rows, cols))
    return x, w[..., None]


def _sample_gamma(m, rng, rows, cols):
    p = m.params
    x = rng.gamma(p["x_shape"], p["x_scale"], (rows, cols))
    g = rng.gamma(p["y_shape"], p["y_scale"], (rows, cols))
    nu = p["x_shape"] * p["x_scale"]
    y = g + p["y_shift"] + p["coupling"] * (x - nu)
    return x, y[..., None]


def _sample_bernoulli(m, rng, rows, cols):
    b = (rng.random((rows, cols)) < m.params["p"]).astype(float)
    return 2.0 * b - 1.0, b[..., None]


def _sample_degenerate(m, rng, rows, cols):
    p = m.params
    x = np.full((rows, cols), p["x0"])
    w = np.broadcast_to(np.asarray(p["w0"]), (rows, cols, m.dim_w)).copy()
    return x, w


def _sample_composite(m, rng, rows, cols):
    p = m.params
    pick = rng.random((rows, cols)) < p["weight"]
    xa, wa = p["first"].sample_block(rng, rows, cols)
    xb, wb = p["second"].sample_block(rng, rows, cols)
    x = np.where(pick, xa, xb)
    w = np.where(pick[..., None], wa, wb)
    return x, w


_SAMPLERS = {
    "bivariate-normal": _sample_bivariate,
    "gaussian-general": _sample_gaussian,
    "positive-exponential": _sample_exponential,
    "gamma-shifted": _sample_gamma,
    "bernoulli-step": _sample_bernoulli,
    "degenerate": _sample_degenerate,
    "composite": _sample_composite,
}


def sample_increment(
    model: IncrementModel, rng: np.random.Generator | int | None = None
) -> tuple[float, np.ndarray]:
    """Draw a single step (x, w)."""
    x, w = model.sample_block(as_rng(rng), 1, 1)
    return float(x[0, 0]), w[0, 0].copy()


# ---------------------------------------------------------------------------
# moment sets


@dataclass(frozen=True)
class MomentSet:
    """Population moments of one increment, in walk and standardized coordinates.

    Starred quantities refer to the augmented covariate W* = (W, 1) whose
    running sum appends the step counter n. Z = Sigma^{-1/2}(W - gamma X)
    and Z* likewise with the starred residual.
    """

    nu: float
    mu: float
    gamma: np.ndarray
    gamma_star: np.ndarray
    sigma_mat: np.ndarray
    sigma_star_mat: np.ndarray
    z_third: np.ndarray
    z_star_third: np.ndarray
    z_sq_z: np.ndarray
    z_star_sq_z: np.ndarray
    xz: np.ndarray
    xz_star: np.ndarray
    sigma_sq: float
    var_y: float
    mu3: float
    sigma_xy: float
    var_x: float
    x3_central: float
    fingerprint: str
    source: str
    n_draws: int | None = None
    se: dict | None = None
    # symmetric square-root factors, cached at construction
    sigma_isqrt: np.ndarray = field(repr=False, default=None)
    sigma_sqrt: np.ndarray = field(repr=False, default=None)
    sigma_star_isqrt: np.ndarray = field(repr=False, default=None)
    sigma_star_sqrt: np.ndarray = field(repr=False, default=None)
    sigma_det: float = 0.0
    sigma_star_det: float = 0.0

    @property
    def m(self) -> int:
        return self.gamma.size

    @property
    def sd_y(self) -> float:
        return math.sqrt(self.var_y)

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "mu": self.mu,
            "gamma": self.gamma.tolist(),
            "gamma_star": self.gamma_star.tolist(),
            "sigma_mat": self.sigma_mat.tolist(),
            "sigma_star_mat": self.sigma_star_mat.tolist(),
            "z_third": self.z_third.tolist(),
            "z_star_third": self.z_star_third.tolist(),
            "z_sq_z": self.z_sq_z.tolist(),
            "z_star_sq_z": self.z_star_sq_z.tolist(),
            "xz": self.xz.tolist(),
            "xz_star": self.xz_star.tolist(),
            "sigma_sq": self.sigma_sq,
            "var_y": self.var_y,
            "sigma": self.sd_y,
            "mu3": self.mu3,
            "sigma_xy": self.sigma_xy,
            "var_x": self.var_x,
            "x3_central": self.x3_central,
            "fingerprint": self.fingerprint,
            "source": self.source,
            "n_draws": self.n_draws,
        }


def sym_isqrt(mat: np.ndarray, allow_singular: bool = False):
    """Symmetric (inverse) square root via eigendecomposition.

    Eigenvalues below EIG_REL_TOL * max eigenvalue raise SingularSigma,
    unless allow_singular, in which case they are inverted to zero.
    Returns (isqrt, sqrt, pseudo-determinant over the retained spectrum).
    """
    mat = np.asarray(mat, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    top = float(vals.max(initial=0.0))
    cutoff = EIG_REL_TOL * top
    bad = vals <= cutoff
    if bad.any() and not allow_singular:
        raise SingularSigma(
            f"covariance eigenvalues {vals.tolist()} below relative tolerance {EIG_REL_TOL}"
        )
    inv_root = np.where(bad, 0.0, 1.0 / np.sqrt(np.where(bad, 1.0, vals)))
    root = np.sqrt(np.clip(vals, 0.0, None))
    isqrt = (vecs * inv_root) @ vecs.T
    sqrt = (vecs * root) @ vecs.T
    det = float(np.prod(vals[~bad])) if (~bad).any() else 0.0
    return isqrt, sqrt, det


def _assemble(
    *,
    nu: float,
    mu: float,
    ew: np.ndarray,
    var_x: float,
    x3c: float,
    cov_rstar: np.ndarray,
    t3_rstar: np.ndarray,
    x_rstar: np.ndarray,
    var_y: float,
    mu3: float,
    sigma_xy: float,
    fingerprint: str,
    source: str,
    n_draws: int | None = None,
    se: dict | None = None,
    allow_singular: bool = False,
) -> MomentSet:
    """Build a MomentSet from residual statistics of R* = (W - gamma X, 1 - X/nu)."""
    if not nu > 0:
        raise NonPositiveDrift(f"E[X] = {nu} <= 0")
    ew = np.asarray(ew, dtype=float)
    m = ew.size
    gamma = ew / nu
    gamma_star = np.concatenate([gamma, [1.0 / nu]])
    sigma_star = np.asarray(cov_rstar, dtype=float)
    sigma = sigma_star[:m, :m]
    isq, sq, det = sym_isqrt(sigma, allow_singular)
    isq_s, sq_s, det_s = sym_isqrt(sigma_star, allow_singular)
    t3 = np.asarray(t3_rstar, dtype=float)
    z_third = np.einsum("ai,bj,ck,ijk->abc", isq, isq, isq, t3[:m, :m, :m])
    z_star_third = np.einsum("ai,bj,ck,ijk->abc", isq_s, isq_s, isq_s, t3)
    z_sq_z = np.einsum("iik->k", z_third)
    z_star_sq_z = np.einsum("iik->k", z_star_third)
    x_rstar = np.asarray(x_rstar, dtype=float)
    xz = isq @ x_rstar[:m]
    xz_star = isq_s @ x_rstar
    return MomentSet(
        nu=float(nu),
        mu=float(mu),
        gamma=gamma,
        gamma_star=gamma_star,
        sigma_mat=sigma,
        sigma_star_mat=sigma_star,
        z_third=z_third,
        z_star_third=z_star_third,
        z_sq_z=z_sq_z,
        z_star_sq_z=z_star_sq_z,
        xz=xz,
        xz_star=xz_star,
        sigma_sq=float(sigma[0, 0]),
        var_y=float(var_y),
        mu3=float(mu3),
        sigma_xy=float(sigma_xy),
        var_x=float(var_x),
        x3_central=float(x3c),
        fingerprint=fingerprint,
        source=source,
        n_draws=n_draws,
        se=se,
        sigma_isqrt=isq,
        sigma_sqrt=sq,
        sigma_star_isqrt=isq_s,
        sigma_star_sqrt=sq_s,
        sigma_det=det,
        sigma_star_det=det_s,
    )


# -- polynomial helpers for closed forms ------------------------------------
# Polynomials in X are coefficient arrays, low order first; expectations are
# taken against precomputed raw moments of X.


def _pmul(a, b):
    return np.convolve(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def _pexp(poly, raw) -> float:
    poly = np.asarray(poly, dtype=float)
    return float(sum(c * raw[k] for k, c in enumerate(poly)))


def _exp_raw_moments(rate: float, order: int) -> list[float]:
    return [math.factorial(k) / rate**k for k in range(order + 1)]


def _gamma_raw_moments(shape: float, scale: float, order: int) -> list[float]:
    out = [1.0]
    for k in range(1, order + 1):
        out.append(out[-1] * (shape + k - 1) * scale)
    return out


def _gamma_centrals(shape: float, scale: float) -> tuple[float, float, float]:
    """(c2, c3, c4) central moments of Gamma(shape, scale)."""
    c2 = shape * scale**2
    c3 = 2.0 * shape * scale**3
    c4 = 6.0 * shape * scale**4 + 3.0 * c2**2
    return c2, c3, c4


def _third_tensor_from_pair(e3_aa_b) -> np.ndarray:
    """Symmetric (2,2,2) tensor from E[R^i Rn^j] with i + j = 3.

    e3_aa_b = (E[R^3], E[R^2 Rn], E[R Rn^2], E[Rn^3]).
    """
    t = np.empty((2, 2, 2))
    r3, r2n, rn2, n3 = e3_aa_b
    t[0, 0, 0] = r3
    t[0, 0, 1] = t[0, 1, 0] = t[1, 0, 0] = r2n
    t[0, 1, 1] = t[1, 0, 1] = t[1, 1, 0] = rn2
    t[1, 1, 1] = n3
    return t


# -- analytic moments per kind ----------------------------------------------


def _moments_gaussian_like(nu, means_w, cov, mu3x=0.0):
    """Residual statistics for jointly normal (X, W); all third moments vanish."""
    means_w = np.asarray(means_w, dtype=float)
    cov = np.asarray(cov, dtype=float)
    m = means_w.size
    var_x = cov[0, 0]
    c_xw = cov[0, 1:]
    cov_w = cov[1:, 1:]
    gamma = means_w / nu
    cov_r = cov_w - np.outer(gamma, c_xw) - np.outer(c_xw, gamma) + np.outer(gamma, gamma) * var_x
    cross = -(c_xw - gamma * var_x) / nu
    cov_rstar = np.zeros((m + 1, m + 1))
    cov_rstar[:m, :m] = cov_r
    cov_rstar[:m, m] = cross
    cov_rstar[m, :m] = cross
    cov_rstar[m, m] = var_x / nu**2
    t3 = np.zeros((m + 1, m + 1, m + 1))
    x_rstar = np.concatenate([c_xw - gamma * var_x, [-var_x / nu]])
    return dict(
        nu=nu,
        mu=float(means_w[0]),
        ew=means_w,
        var_x=var_x,
        x3c=mu3x,
        cov_rstar=cov_rstar,
        t3_rstar=t3,
        x_rstar=x_rstar,
        var_y=float(cov_w[0, 0]),
        mu3=0.0,
        sigma_xy=float(c_xw[0]),
    )


def _moments_bivariate(model):
    p = model.params
    cov = np.array([[1.0, p["rho"]], [p["rho"], 1.0]])
    return _moments_gaussian_like(p["nu"], [p["mu"]], cov)


def _moments_gaussian(model):
    p = model.params
    return _moments_gaussian_like(p["nu"], p["mean_w"], np.asarray(p["cov"], dtype=float))


def _moments_exponential(model):
    p = model.params
    lam, alpha, beta, s = p["rate"], p["alpha"], p["beta"], p["noise_sd"]
    raw = _exp_raw_moments(lam, 9)
    nu = raw[1]
    ew = alpha * raw[1] + beta * raw[2]
    gamma = ew / nu
    # residual of W and of the counter, as polynomials in X (noise handled apart)
    p_r = np.array([0.0, alpha - gamma, beta])
    q_n = np.array([1.0, -1.0 / nu])
    cov_rstar = np.array(
        [
            [_pexp(_pmul(p_r, p_r), raw) + s**2, _pexp(_pmul(p_r, q_n), raw)],
            [_pexp(_pmul(p_r, q_n), raw), _pexp(_pmul(q_n, q_n), raw)],
        ]
    )
    t3 = _third_tensor_from_pair(
        (
            _pexp(_pmul(p_r, _pmul(p_r, p_r)), raw),
            _pexp(_pmul(_pmul(p_r, p_r), q_n), raw),
            _pexp(_pmul(p_r, _pmul(q_n, q_n)), raw),
            _pexp(_pmul(q_n, _pmul(q_n, q_n)), raw),
        )
    )
    x_poly = np.array([0.0, 1.0])
    x_rstar = np.array([_pexp(_pmul(x_poly, p_r), raw), _pexp(_pmul(x_poly, q_n), raw)])
    # centered W polynomial for the scalar section-level moments
    p_yc = np.array([-ew, alpha, beta])
    var_y = _pexp(_pmul(p_yc, p_yc), raw) + s**2
    mu3 = _pexp(_pmul(p_yc, _pmul(p_yc, p_yc)), raw)
    sigma_xy = _pexp(_pmul(x_poly, p_yc), raw)
    x3c = _pexp(_pmul(np.array([-nu, 1.0]), _pmul(np.array([-nu, 1.0]), np.array([-nu, 1.0]))), raw)
    return dict(
        nu=nu,
        mu=ew,
        ew=np.array([ew]),
        var_x=raw[2] - nu**2,
        x3c=x3c,
        cov_rstar=cov_rstar,
        t3_rstar=t3,
        x_rstar=x_rstar,
        var_y=var_y,
        mu3=mu3,
        sigma_xy=sigma_xy,
    )


def _moments_gamma(model):
    p = model.params
    nu = p["x_shape"] * p["x_scale"]
    vx, k3x, _ = _gamma_centrals(p["x_shape"], p["x_scale"])
    c2y, c3y, _ = _gamma_centrals(p["y_shape"], p["y_scale"])
    c = p["coupling"]
    mu = p["y_shape"] * p["y_scale"] + p["y_shift"]
    gamma = mu / nu
    d = c - gamma
    cov_rstar = np.array(
        [[c2y + d * d * vx, -d * vx / nu], [-d * vx / nu, vx / nu**2]]
    )
    t3 = _third_tensor_from_pair(
        (
            c3y + d**3 * k3x,
            -(d * d) * k3x / nu,
            d * k3x / nu**2,
            -k3x / nu**3,
        )
    )
    x_rstar = np.array([d * vx, -vx / nu])
    return dict(
        nu=nu,
        mu=mu,
        ew=np.array([mu]),
        var_x=vx,
        x3c=k3x,
        cov_rstar=cov_rstar,
        t3_rstar=t3,
        x_rstar=x_rstar,
        var_y=c2y + c * c * vx,
        mu3=c3y + c**3 * k3x,
        sigma_xy=c * vx,
    )


def _moments_bernoulli(model):
    p = model.params["p"]
    probs = np.array([1.0 - p, p])
    b = np.array([0.0, 1.0])
    x = 2.0 * b - 1.0
    nu = 2.0 * p - 1.0
    ew = p
    gamma = ew / nu
    r = b - gamma * x
    rn = 1.0 - x / nu

    def e(vals):
        return float(np.dot(probs, vals))

    cov_rstar = np.array([[e(r * r), e(r * rn)], [e(r * rn), e(rn * rn)]])
    t3 = _third_tensor_from_pair((e(r**3), e(r * r * rn), e(r * rn * rn), e(rn**3)))
    x_rstar = np.array([e(x * r), e(x * rn)])
    var_x = e(x * x) - nu**2
    mu_y = ew
    return dict(
        nu=nu,
        mu=mu_y,
        ew=np.array([ew]),
        var_x=var_x,
        x3c=e((x - nu) ** 3),
        cov_rstar=cov_rstar,
        t3_rstar=t3,
        x_rstar=x_rstar,
        var_y=e(b * b) - ew**2,
        mu3=e((b - ew) ** 3),
        sigma_xy=e((x - nu) * (b - ew)),
    )


def _moments_degenerate(model):
    p = model.params
    m = model.dim_w
    w0 = np.asarray(p["w0"], dtype=float)
    return dict(
        nu=p["x0"],
        mu=float(w0[0]) if m else 0.0,
        ew=w0,
        var_x=0.0,
        x3c=0.0,
        cov_rstar=np.zeros((m + 1, m + 1)),
        t3_rstar=np.zeros((m + 1, m + 1, m + 1)),
        x_rstar=np.zeros(m + 1),
        var_y=0.0,
        mu3=0.0,
        sigma_xy=0.0,
    )


_ANALYTIC = {
    "bivariate-normal": _moments_bivariate,
    "gaussian-general": _moments_gaussian,
    "positive-exponential": _moments_exponential,
    "gamma-shifted": _moments_gamma,
    "bernoulli-step": _moments_bernoulli,
    "degenerate": _moments_degenerate,
}


def analytic_moments(model: IncrementModel, allow_singular: bool = False) -> MomentSet:
    """Closed-form MomentSet for kinds that have one.

    Raises MomentsUnavailable for composite models, NonPositiveDrift when
    E[X] <= 0, SingularSigma when a residual covariance is degenerate
    (unless allow_singular, which maps null directions to zero).
    """
    if model.kind not in _ANALYTIC:
        raise MomentsUnavailable(
            f"model kind {model.kind!r} has no closed-form moments; use sample_moments"
        )
    stats = _ANALYTIC[model.kind](model)
    return _assemble(
        **stats,
        fingerprint=model.fingerprint(),
        source="analytic",
        allow_singular=allow_singular,
    )


# -- empirical moments -------------------------------------------------------


def sample_moments(
    model: IncrementModel,
    n: int,
    rng: np.random.Generator | int | None = None,
    allow_singular: bool = False,
) -> MomentSet:
    """Monte Carlo MomentSet from n draws, with plain standard errors.

    Standardized quantities use the empirical Sigma^{-1/2}; the reported
    standard errors treat those plug-in factors as fixed. Intended for
    n >= 10_000; smaller n is accepted but the errors become unreliable.
    """
    if not (isinstance(n, (int, np.integer)) and n > 1):
        raise InvalidCount(f"need an integer n >= 2, got {n!r}")
    rng = as_rng(rng)
    m = model.dim_w
    xs = np.empty(n)
    ws = np.empty((n, m))
    done = 0
    while done < n:
        take = min(65536, n - done)
        x, w = model.sample_block(rng, 1, take)
        xs[done : done + take] = x[0]
        ws[done : done + take] = w[0]
        done += take
    nu = float(xs.mean())
    if not nu > 0:
        raise NonPositiveDrift(f"empirical E[X] = {nu} <= 0")
    ew = ws.mean(axis=0)
    gamma = ew / nu
    # empirical residuals have exactly zero mean by construction of gamma
    rstar = np.concatenate([ws - np.outer(xs, gamma), 1.0 - (xs / nu)[:, None]], axis=1)
    cov_rstar = rstar.T @ rstar / n
    t3 = np.einsum("ni,nj,nk->ijk", rstar, rstar, rstar) / n
    x_rstar = (xs[:, None] * rstar).mean(axis=0)
    xc = xs - nu
    e = ws[:, 0]
    mu = float(ew[0])
    ec = e - mu
    stats = dict(
        nu=nu,
        mu=mu,
        ew=ew,
        var_x=float((xc**2).mean()),
        x3c=float((xc**3).mean()),
        cov_rstar=cov_rstar,
        t3_rstar=t3,
        x_rstar=x_rstar,
        var_y=float((ec**2).mean()),
        mu3=float((ec**3).mean()),
        sigma_xy=float((xc * ec).mean()),
    )
    ms = _assemble(
        **stats,
        fingerprint=model.fingerprint(),
        source="empirical",
        n_draws=n,
        allow_singular=allow_singular,
    )
    # standard errors of the mean for each reported entry
    root_n = math.sqrt(n)

    def se_of(arr):
        return np.std(arr, axis=0) / root_n

    z = rstar[:, :m] @ ms.sigma_isqrt.T
    z_star = rstar @ ms.sigma_star_isqrt.T
    se = {
        "nu": float(se_of(xs)),
        "mu": float(se_of(e)),
        "gamma": se_of(ws / nu),
        "sigma_mat": se_of(rstar[:, :m, None] * rstar[:, None, :m]),
        "sigma_star_mat": se_of(rstar[:, :, None] * rstar[:, None, :]),
        "z_third": se_of(z[:, :, None, None] * z[:, None, :, None] * z[:, None, None, :]),
        "z_star_third": se_of(
            z_star[:, :, None, None] * z_star[:, None, :, None] * z_star[:, None, None, :]
        ),
        "z_sq_z": se_of((z**2).sum(axis=1)[:, None] * z),
        "z_star_sq_z": se_of((z_star**2).sum(axis=1)[:, None] * z_star),
        "xz": se_of(xs[:, None] * z),
        "xz_star": se_of(xs[:, None] * z_star),
        "var_y": float(se_of(ec**2)),
        "mu3": float(se_of(ec**3)),
        "sigma_xy": float(se_of(xc * ec)),
        "var_x": float(se_of(xc**2)),
    }
    object.__setattr__(ms, "se", se)
    return ms


# -- fourth-moment helpers for the studentized-statistic lift ----------------


def lifted_t_sigma_star(model: IncrementModel) -> tuple[np.ndarray, np.ndarray]:
    """Sigma* and gamma* of the walk (X, (e, e^2, n)) built on centered e.

    e is the centered first covariate increment; the lifted walk tracks the
    running sums needed by the studentized statistic. Returns
    (sigma_star (3,3), gamma_star (3,)). Closed forms exist for the
    continuous scalar kinds.
    """
    ms = analytic_moments(model)
    nu, v, m3, cxe, vx = ms.nu, ms.var_y, ms.mu3, ms.sigma_xy, ms.var_x
    kind = model.kind
    p = model.params
    if kind == "bivariate-normal":
        m4 = 3.0 * v * v
        cxe2 = 0.0
    elif kind == "gamma-shifted":
        _, k3x, c4x = _gamma_centrals(p["x_shape"], p["x_scale"])
        c2y, _, c4y = _gamma_centrals(p["y_shape"], p["y_scale"])
        c = p["coupling"]
        m4 = c4y + 6.0 * c * c * c2y * vx + c**4 * c4x
        cxe2 = c * c * k3x
    elif kind == "positive-exponential":
        raw = _exp_raw_moments(p["rate"], 9)
        ew = p["alpha"] * raw[1] + p["beta"] * raw[2]
        p_yc = np.array([-ew, p["alpha"], p["beta"]])
        s = p["noise_sd"]
        p2 = _pmul(p_yc, p_yc)
        m4 = _pexp(_pmul(p2, p2), raw) + 6.0 * _pexp(p2, raw) * s**2 + 3.0 * s**4
        cxe2 = _pexp(_pmul(np.array([-nu, 1.0]), p2), raw) + 0.0
    else:
        raise MomentsUnavailable(f"no fourth-moment closed form for kind {kind!r}")
    gv = v / nu
    sigma_star = np.array(
        [
            [v, m3 - gv * cxe, -cxe / nu],
            [m3 - gv * cxe, m4 - v * v + gv * gv * vx - 2.0 * gv * cxe2, -cxe2 / nu + gv * vx / nu],
            [-cxe / nu, -cxe2 / nu + gv * vx / nu, vx / nu**2],
        ]
    )
    gamma_star = np.array([0.0, gv, 1.0 / nu])
    return sigma_star, gamma_star
