"""Second-order distribution approximations for boundary-crossed walks.

Everything revolves around the standardized argument

    q(x, w) = Sigma^{-1/2} (w - gamma x - gamma a) sqrt(nu/a)

(with x the overshoot past the boundary a) and the odd cubic polynomial

    H(q) = E(q.Z)^3 / 6 - E[|Z|^2 (q.Z)] / 2
           + (d + 2 - |q|^2) E[X (q.Z)] / (2 nu)  -  ladder term,

whose variants differ in dimension d, in the ladder term, and in whether
the covariates carry the step counter. The joint density approximation,
its covariate marginal, the renewal-measure density for positive
increments, and the distribution expansion for smooth statistics of the
stopped walk are all assembled from these two ingredients together with
the rho weight functions of the ladder module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import (
    DomainError,
    InvalidStatistic,
    MissingLadderMoments,
    OutOfNeighborhood,
    WrongDimension,
)
from .ladder import LadderMoments, analytic_ladder_moments, ladder_moments, rho_eval
from .models import IncrementModel, MomentSet, analytic_moments, as_rng
from .walk import StoppedWalk, sample_ladder_variables

H_VARIANTS = ("general", "starred", "positive", "marginal0", "marginal0_star")
SIGN_MODES = {"plus": 1.0, "minus": -1.0}


def norm_cdf(x):
    return special.ndtr(x)


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def norm_quantile(p):
    return special.ndtri(p)


class ClampCounter:
    """Counts density/cdf evaluations that needed clamping."""

    def __init__(self):
        self.count = 0


@dataclass
class ExpansionContext:
    """Moments, ladder moments and the boundary level, taken together.

    The ladder part may be None for evaluations that do not need it; any
    term that does raises MissingLadderMoments. Moment and ladder objects
    must come from the same model (matching fingerprints).
    """

    moments: MomentSet
    ladder: LadderMoments | None
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("boundary a must be positive")
        if (
            self.ladder is not None
            and self.ladder.fingerprint
            and self.moments.fingerprint
            and self.ladder.fingerprint != self.moments.fingerprint
        ):
            raise ValueError("moments and ladder moments come from different models")

    def require_ladder(self, what: str) -> LadderMoments:
        if self.ladder is None:
            raise MissingLadderMoments(f"{what} needs ladder moments")
        return self.ladder


def make_context(
    model: IncrementModel,
    a: float,
    *,
    ladder_draws: int = 100_000,
    rng=None,
    moments: MomentSet | None = None,
) -> ExpansionContext:
    """Convenience constructor: analytic moments plus the cheapest valid ladder.

    Positive-increment models get the closed-form ladder law; all others
    sample ladder_draws first-ladder triples from the given rng.
    """
    ms = moments if moments is not None else analytic_moments(model)
    if model.positive_x():
        lm = analytic_ladder_moments(model, ms)
    else:
        lm = ladder_moments(sample_ladder_variables(model, ladder_draws, as_rng(rng)), ms)
    return ExpansionContext(moments=ms, ladder=lm, a=a)


# ---------------------------------------------------------------------------
# standardized argument and the H polynomial


def q_point(w, x, ctx: ExpansionContext, starred: bool = False, marginal: bool = False):
    """Standardized argument of the density expansion.

    w: covariate point (length m, or m+1 with the epoch count appended when
    starred). x: overshoot past the boundary; ignored for the marginal
    form, which drops the overshoot shift.
    """
    ms = ctx.moments
    w = np.atleast_1d(np.asarray(w, dtype=float))
    gamma = ms.gamma_star if starred else ms.gamma
    isq = ms.sigma_star_isqrt if starred else ms.sigma_isqrt
    if w.shape[-1] != gamma.size:
        raise WrongDimension(
            f"expected covariate point of length {gamma.size}, got {w.shape[-1]}"
        )
    shift = gamma * ctx.a if marginal else gamma * (float(x) + ctx.a)
    return isq @ (w - shift) * math.sqrt(ms.nu / ctx.a)


def _h_parts(ctx: ExpansionContext, variant: str):
    """(third tensor, |Z|^2 Z vector, XZ vector, dimension, coefficient shift)."""
    ms = ctx.moments
    if variant in ("starred", "marginal0_star"):
        return ms.z_star_third, ms.z_star_sq_z, ms.xz_star, ms.m + 1
    return ms.z_third, ms.z_sq_z, ms.xz, ms.m


def eval_H(q, ctx: ExpansionContext, variant: str = "general") -> float:
    """The cubic correction polynomial, in one of its five variants.

    general / starred: the full walk with ladder correction term
    -E[X-tilde (q.Z-tilde)] / (nu sqrt(E T)); the starred form appends the
    epoch count and uses d = m+1.

    positive: almost surely positive X, no ladder term, and the linear
    coefficient (d - |q|^2) in place of (d + 2 - |q|^2).

    marginal0 / marginal0_star: the overshoot-integrated forms used with
    the marginal argument q-tilde; the ladder term becomes
    +(q . Sigma^{-1/2} gamma) E[X-tilde^2] / (2 nu E T).
    """
    if variant not in H_VARIANTS:
        raise ValueError(f"variant must be one of {H_VARIANTS}")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    t3, sqz, xz, d = _h_parts(ctx, variant)
    if q.size != d:
        raise WrongDimension(f"variant {variant!r} expects q of length {d}")
    ms = ctx.moments
    nu = ms.nu
    qq = float(q @ q)
    val = float(np.einsum("ijk,i,j,k->", t3, q, q, q)) / 6.0
    val -= 0.5 * float(q @ sqz)
    shift = 0.0 if variant == "positive" else 2.0
    val += (d + shift - qq) * float(q @ xz) / (2.0 * nu)
    if variant in ("general", "starred"):
        lm = ctx.require_ladder(f"eval_H variant {variant!r}")
        cross = lm.xz_star_tilde if variant == "starred" else lm.xz_tilde
        val -= float(q @ cross) / (nu * math.sqrt(lm.e_t))
    elif variant in ("marginal0", "marginal0_star"):
        lm = ctx.require_ladder(f"eval_H variant {variant!r}")
        if variant == "marginal0":
            direction = ms.sigma_isqrt @ ms.gamma
        else:
            direction = ms.sigma_star_isqrt @ ms.gamma_star
        val += float(q @ direction) * lm.e_x2 / (2.0 * nu * lm.e_t)
    return val


# ---------------------------------------------------------------------------
# densities


def _phi_d(q: np.ndarray) -> float:
    d = q.size
    return math.exp(-0.5 * float(q @ q)) / (2.0 * math.pi) ** (d / 2.0)


def density_qhat(
    x,
    w,
    ctx: ExpansionContext,
    variant: str = "general",
    sign_mode: str = "plus",
    clamp: ClampCounter | None = None,
) -> float:
    """Second-order joint density of (overshoot, stopped covariates).

    Densities are with respect to Lebesgue measure in (x, w); for the
    starred variant w carries the epoch count as its last coordinate and
    the reference measure counts that coordinate. Negative raw values are
    clamped to zero (tallied in `clamp`); the approximation vanishes for
    x <= 0. sign_mode switches the sign of the rho_1 first-order term and
    exists only to document the resolution of the two printed conventions;
    "plus" is correct and the default.
    """
    if sign_mode not in SIGN_MODES:
        raise ValueError(f"sign_mode must be one of {sorted(SIGN_MODES)}")
    sgn = SIGN_MODES[sign_mode]
    if variant not in ("general", "starred", "positive"):
        raise ValueError("density variant must be general, starred or positive")
    starred = variant == "starred"
    ms = ctx.moments
    lm = ctx.require_ladder("density_qhat")
    x = float(x)
    if x <= 0.0:
        return 0.0
    q = q_point(w, x, ctx, starred=starred)
    d = q.size
    det = ms.sigma_star_det if starred else ms.sigma_det
    norm = math.sqrt(det) * (ctx.a / ms.nu) ** (d / 2.0)
    rho0 = float(rho_eval(lm, x, "rho0"))
    rho1 = rho_eval(lm, x, "rho1_star" if starred else "rho1")
    h_val = eval_H(q, ctx, variant=variant)
    correction = h_val * rho0 + sgn * float(q @ rho1)
    raw = _phi_d(q) / norm * (rho0 + math.sqrt(ms.nu / ctx.a) * correction)
    if raw < 0.0:
        if clamp is not None:
            clamp.count += 1
        return 0.0
    return raw


def renewal_density_rhat(x, z, ctx: ExpansionContext) -> float:
    """Second-order renewal-measure density at (level x, standardized covariate z).

    Defined for almost surely positive X increments; the covariate
    argument is already standardized, z = Sigma^{-1/2}(w - gamma x).
    Requires x > 0.
    """
    x = float(x)
    if x <= 0.0:
        raise DomainError("renewal density needs x > 0")
    ms = ctx.moments
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size != ms.m:
        raise WrongDimension(f"expected standardized covariate of length {ms.m}")
    u = z * math.sqrt(ms.nu / x)
    h_val = eval_H(u, ctx, variant="positive")
    norm = ms.nu * math.sqrt(ms.sigma_det) * (x / ms.nu) ** (ms.m / 2.0)
    raw = _phi_d(u) / norm * (1.0 + math.sqrt(ms.nu / x) * h_val)
    return max(raw, 0.0)


# ---------------------------------------------------------------------------
# covariate marginal cdf (scalar covariate)


def _marginal_h1(ctx: ExpansionContext, w_hat):
    ms = ctx.moments
    sigma = math.sqrt(ms.sigma_sq)
    gamma1 = float(ms.gamma[0])
    core = -float(ms.z_third[0, 0, 0]) / 6.0 + float(ms.xz[0]) / (2.0 * ms.nu)
    val = (np.square(w_hat) - 1.0) * core
    if gamma1 != 0.0:
        lm = ctx.require_ladder("marginal cdf ladder term")
        val = val - gamma1 * lm.e_x2 / (2.0 * ms.nu * sigma * lm.e_t)
    return val


def marginal_cdf_w(w, ctx: ExpansionContext, clamp: ClampCounter | None = None) -> float:
    """P(W_tau <= w) to second order, for a single tracked covariate."""
    ms = ctx.moments
    if ms.m != 1:
        raise WrongDimension("marginal cdf is defined for m = 1 contexts")
    sigma = math.sqrt(ms.sigma_sq)
    w_hat = (float(w) - ms.gamma[0] * ctx.a) / (sigma * math.sqrt(ctx.a / ms.nu))
    raw = float(
        norm_cdf(w_hat)
        + math.sqrt(ms.nu / ctx.a) * norm_pdf(w_hat) * _marginal_h1(ctx, w_hat)
    )
    if raw < 0.0 or raw > 1.0:
        if clamp is not None:
            clamp.count += 1
    return min(max(raw, 0.0), 1.0)


def marginal_cdf_w_grid(ws, ctx: ExpansionContext) -> np.ndarray:
    """Marginal cdf on an increasing grid, monotone-rearranged and clamped."""
    ws = np.asarray(ws, dtype=float)
    if np.any(np.diff(ws) < 0):
        raise ValueError("grid must be nondecreasing")
    ms = ctx.moments
    if ms.m != 1:
        raise WrongDimension("marginal cdf is defined for m = 1 contexts")
    sigma = math.sqrt(ms.sigma_sq)
    w_hat = (ws - ms.gamma[0] * ctx.a) / (sigma * math.sqrt(ctx.a / ms.nu))
    raw = norm_cdf(w_hat) + math.sqrt(ms.nu / ctx.a) * norm_pdf(w_hat) * _marginal_h1(
        ctx, w_hat
    )
    return np.clip(np.maximum.accumulate(raw), 0.0, 1.0)


# ---------------------------------------------------------------------------
# smooth statistics of the stopped walk


@dataclass
class SigmaStarPartition:
    """Blocks of Sigma* with the first covariate separated out.

    Coordinate 0 is the statistic's primary covariate y; the remaining
    coordinates (trailing epoch count included) form v*.
    """

    sigma_star: np.ndarray
    gamma_star: np.ndarray

    def __post_init__(self):
        self.sigma_star = np.asarray(self.sigma_star, dtype=float)
        self.gamma_star = np.asarray(self.gamma_star, dtype=float)
        k = self.sigma_star.shape[0]
        if self.sigma_star.shape != (k, k) or self.gamma_star.size != k:
            raise ValueError("sigma_star and gamma_star sizes disagree")
        vals = np.linalg.eigvalsh(self.sigma_star)
        if vals.min() <= 1e-10 * max(vals.max(), 1.0):
            from .errors import SingularSigma

            raise SingularSigma("sigma_star block matrix is not positive definite")
        self.sigma11 = float(self.sigma_star[0, 0])
        self.sigma12 = self.sigma_star[0, 1:].copy()
        self.sigma21 = self.sigma_star[1:, 0].copy()
        self.sigma22 = self.sigma_star[1:, 1:].copy()
        solve = np.linalg.solve(self.sigma22, self.sigma21)
        self.sigma11_2 = float(self.sigma11 - self.sigma12 @ solve)
        self.sigma22_1 = self.sigma22 - np.outer(self.sigma21, self.sigma12) / self.sigma11
        self.gamma1 = float(self.gamma_star[0])
        self.gamma2 = self.gamma_star[1:].copy()

    @classmethod
    def from_moments(cls, ms: MomentSet) -> "SigmaStarPartition":
        return cls(ms.sigma_star_mat, ms.gamma_star)


class SmoothStatistic:
    """A smooth function h(x, w, t) of the scaled stopped walk.

    The statistic evaluated on a walk is sqrt(a) h(X_tau/a, W_tau/a, tau/a).
    Regularity at the deterministic limit s0 = (1, gamma1, gamma2) is
    required: h(s0) = 0, dh/dx = 0, dh/dy = 1 (y = first covariate) and
    zero gradient in the remaining coordinates. These are checked by
    central finite differences at construction. The second-order data
    (h0 = d2h/dy2 / 2, the mixed vector h1 = grad_{v*} dh/dy, and
    A = half the v* Hessian) may be passed exactly; anything omitted is
    estimated by finite differences.
    """

    def __init__(
        self,
        h,
        gamma1: float,
        gamma2,
        h0: float | None = None,
        h1: np.ndarray | None = None,
        quad: np.ndarray | None = None,
        name: str = "",
        fd_step: float = 1e-5,
        fd_tol: float = 1e-4,
    ):
        self.h = h
        self.gamma1 = float(gamma1)
        self.gamma2 = np.atleast_1d(np.asarray(gamma2, dtype=float))
        self.name = name or getattr(h, "__name__", "statistic")
        self.k = self.gamma2.size
        self._check_regularity(fd_step, fd_tol)
        if h0 is None:
            h0 = 0.5 * self._fd2(0, 0, fd_step)
        if h1 is None:
            h1 = np.array([self._fd_mixed(0, 1 + j, fd_step) for j in range(self.k)])
        if quad is None:
            quad = np.array(
                [
                    [0.5 * self._fd_cross(1 + i, 1 + j, fd_step) for j in range(self.k)]
                    for i in range(self.k)
                ]
            )
        self.h0 = float(h0)
        self.h1_vec = np.atleast_1d(np.asarray(h1, dtype=float))
        self.quad = np.asarray(quad, dtype=float)
        if self.h1_vec.size != self.k or self.quad.shape != (self.k, self.k):
            raise InvalidStatistic("second-order data has the wrong shape")
        self.validated = True

    # coordinates are packed as (x, y, v...) with t last inside gamma2
    def _point(self, offsets: dict) -> float:
        coords = np.concatenate(([1.0, self.gamma1], self.gamma2))
        for i, d in offsets.items():
            coords = coords.copy()
            coords[i] += d
        x = coords[0]
        w = coords[1:-1]
        t = coords[-1]
        return float(self.h(x, w, t))

    def _fd1(self, i: int, step: float) -> float:
        return (self._point({i: step}) - self._point({i: -step})) / (2.0 * step)

    def _fd2(self, i: int, j_unused: int, step: float) -> float:
        c = self._point({})
        return (self._point({i: step}) - 2.0 * c + self._point({i: -step})) / step**2

    def _fd_mixed(self, i: int, j: int, step: float) -> float:
        # d2 h / dy dv_j with i the y index offsetting coordinate 1
        pp = self._point({1: step, j: step})
        pm = self._point({1: step, j: -step})
        mp = self._point({1: -step, j: step})
        mm = self._point({1: -step, j: -step})
        return (pp - pm - mp + mm) / (4.0 * step**2)

    def _fd_cross(self, i: int, j: int, step: float) -> float:
        if i == j:
            return self._fd2(i, 0, step)
        pp = self._point({i: step, j: step})
        pm = self._point({i: step, j: -step})
        mp = self._point({i: -step, j: step})
        mm = self._point({i: -step, j: -step})
        return (pp - pm - mp + mm) / (4.0 * step**2)

    def _check_regularity(self, step: float, tol: float):
        try:
            v0 = self._point({})
        except Exception as exc:
            raise InvalidStatistic(f"h is not evaluable at s0: {exc}") from exc
        if not math.isfinite(v0) or abs(v0) > tol:
            raise InvalidStatistic(f"h(s0) = {v0}, expected 0")
        dx = self._fd1(0, step)
        if abs(dx) > tol:
            raise InvalidStatistic(f"dh/dx(s0) = {dx}, expected 0")
        dy = self._fd1(1, step)
        if abs(dy - 1.0) > tol:
            raise InvalidStatistic(f"dh/dy(s0) = {dy}, expected 1")
        for j in range(self.k):
            dv = self._fd1(2 + j, step)
            if abs(dv) > tol:
                raise InvalidStatistic(f"dh/dv*_{j}(s0) = {dv}, expected 0")


def xi_statistic(walk: StoppedWalk, stat: SmoothStatistic, a: float | None = None) -> float:
    """sqrt(a) h(X_tau/a, W_tau/a, tau/a); raises OutOfNeighborhood when h fails."""
    a = walk.a if a is None else float(a)
    try:
        val = stat.h(walk.x_tau / a, np.asarray(walk.w_tau, dtype=float) / a, walk.tau / a)
    except Exception as exc:
        raise OutOfNeighborhood(f"statistic not evaluable at the stopped point: {exc}") from exc
    val = float(val)
    if not math.isfinite(val):
        raise OutOfNeighborhood("statistic evaluated to a non-finite value")
    return math.sqrt(a) * val


def t_statistic_smooth(part: SigmaStarPartition) -> SmoothStatistic:
    """The studentized-mean statistic as a SmoothStatistic, exact second order.

    Valid for normalized lifted walks: covariates (e, e^2, counter) with
    centered e, unit variance and unit drift, so gamma* = (0, 1, 1).
    """
    if abs(part.gamma1) > 1e-12 or np.max(np.abs(part.gamma2 - 1.0)) > 1e-9:
        raise InvalidStatistic(
            "studentized statistic requires the normalized lift (gamma* = (0, 1, 1)); "
            "center and scale the covariate first"
        )

    def h(x, w, t):
        return w[0] / math.sqrt(w[1] - w[0] ** 2 / t)

    return SmoothStatistic(
        h,
        gamma1=0.0,
        gamma2=part.gamma2,
        h0=0.0,
        h1=np.array([-0.5, 0.0]),
        quad=np.zeros((2, 2)),
        name="studentized-mean",
    )


def fa_cdf(
    c,
    ctx: ExpansionContext,
    part: SigmaStarPartition,
    stat: SmoothStatistic,
    clamp: ClampCounter | None = None,
):
    """Second-order cdf of sqrt(a) h(X_tau/a, W_tau/a, tau/a) at c.

    The moments in ctx describe the walk whose first covariate is the
    statistic's y; the partition carries the covariance blocks of the
    full covariate stack (epoch counter last). Vectorized over c.
    """
    if not getattr(stat, "validated", False):
        raise InvalidStatistic("statistic has not passed its regularity check")
    ms = ctx.moments
    if abs(part.gamma1 - float(ms.gamma[0])) > 1e-8:
        raise ValueError("partition and moments disagree on gamma_1")
    nu = ms.nu
    sigma = math.sqrt(part.sigma11)
    c_arr = np.asarray(c, dtype=float)
    chat = c_arr * math.sqrt(nu) / sigma
    s_row = ms.sigma_sqrt[0, :]
    ry3 = float(np.einsum("ijk,i,j,k->", ms.z_third, s_row, s_row, s_row))
    rxy = float(s_row @ ms.xz)
    bracket = (-ry3 / (6.0 * sigma**3) + rxy / (2.0 * nu * sigma)) * (chat**2 - 1.0)
    if part.gamma1 != 0.0:
        lm = ctx.require_ladder("fa_cdf ladder term")
        bracket = bracket - part.gamma1 * lm.e_x2 / (2.0 * nu * sigma * lm.e_t)
    bracket = bracket - sigma * chat**2 * stat.h0 / nu
    bracket = bracket - chat**2 * float(stat.h1_vec @ part.sigma21) / (nu * sigma)
    bracket = bracket - (chat**2 - 1.0) * float(
        part.sigma12 @ stat.quad @ part.sigma21
    ) / (nu * sigma**3)
    bracket = bracket - float(np.trace(stat.quad @ part.sigma22)) / (nu * sigma)
    raw = norm_cdf(chat) + norm_pdf(chat) * math.sqrt(nu / ctx.a) * bracket
    clipped = np.clip(raw, 0.0, 1.0)
    if clamp is not None:
        clamp.count += int(np.sum(raw != clipped))
    if np.ndim(c) == 0:
        return float(clipped)
    return clipped


def fa_cdf_grid(cs, ctx, part, stat) -> np.ndarray:
    """fa_cdf on an increasing grid, monotone-rearranged."""
    cs = np.asarray(cs, dtype=float)
    if np.any(np.diff(cs) < 0):
        raise ValueError("grid must be nondecreasing")
    return np.clip(np.maximum.accumulate(fa_cdf(cs, ctx, part, stat)), 0.0, 1.0)


def t0_cdf(c, a: float, nu: float, sigma: float, mu3: float, sigma_xy: float):
    """Second-order cdf of the studentized stopped mean at c.

    sigma is the increment standard deviation of the first covariate,
    mu3 its third central moment, sigma_xy its covariance with the
    boundary increment. Vectorized over c; clamped to [0, 1].
    """
    if not (a > 0 and nu > 0 and sigma > 0):
        raise ValueError("a, nu and sigma must be positive")
    c_arr = np.asarray(c, dtype=float)
    corr = mu3 * (1.0 + 2.0 * c_arr**2) / (6.0 * sigma**3) - sigma_xy / (2.0 * nu * sigma)
    raw = norm_cdf(c_arr) + norm_pdf(c_arr) * math.sqrt(nu / a) * corr
    clipped = np.clip(raw, 0.0, 1.0)
    if np.ndim(c) == 0:
        return float(clipped)
    return clipped


# ---------------------------------------------------------------------------
# quadrature helpers (boxes are exact in the Gaussian directions)


def _phi_box_moments(lo: float, hi: float) -> np.ndarray:
    """[integral of q^p phi(q) dq over (lo, hi)] for p = 0..3; infinite limits fine."""
    lo = float(lo)
    hi = float(hi)

    def cdf(v):
        return float(norm_cdf(v))

    def pdf(v):
        return 0.0 if math.isinf(v) else float(norm_pdf(v))

    def m2term(v):
        return 0.0 if math.isinf(v) else v * pdf(v)

    def m3term(v):
        return 0.0 if math.isinf(v) else (v * v + 2.0) * pdf(v)

    m0 = cdf(hi) - cdf(lo)
    m1 = pdf(lo) - pdf(hi)
    m2 = m0 + m2term(lo) - m2term(hi)
    m3 = m3term(lo) - m3term(hi)
    return np.array([m0, m1, m2, m3])


def _box_table(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.stack([_phi_box_moments(l, h) for l, h in zip(lo, hi)])


def _integrate_h_over_box(ctx: ExpansionContext, variant: str, table: np.ndarray) -> float:
    """Integral of phi_d(q) H(q) over the box encoded by the moment table."""
    t3, sqz, xz, d = _h_parts(ctx, variant)
    nu = ctx.moments.nu
    shift = 0.0 if variant == "positive" else 2.0

    def mono(counts) -> float:
        out = 1.0
        for i in range(d):
            out *= table[i, counts[i]]
        return out

    def lin(vec) -> float:
        total = 0.0
        for k in range(d):
            counts = [0] * d
            counts[k] = 1
            total += vec[k] * mono(counts)
        return total

    cubic = 0.0
    for i in range(d):
        for j in range(d):
            for k in range(d):
                counts = [0] * d
                counts[i] += 1
                counts[j] += 1
                counts[k] += 1
                cubic += t3[i, j, k] * mono(counts)
    sq_lin = 0.0
    for j in range(d):
        for k in range(d):
            counts = [0] * d
            counts[j] += 2
            counts[k] += 1
            sq_lin += xz[k] * mono(counts)
    total = cubic / 6.0 - 0.5 * lin(sqz) + (d + shift) * lin(xz) / (2.0 * nu) - sq_lin / (2.0 * nu)
    if variant in ("general", "starred"):
        lm = ctx.require_ladder("box integral ladder term")
        cross = lm.xz_star_tilde if variant == "starred" else lm.xz_tilde
        total -= lin(cross) / (nu * math.sqrt(lm.e_t))
    elif variant in ("marginal0", "marginal0_star"):
        lm = ctx.require_ladder("box integral ladder term")
        ms = ctx.moments
        direction = (
            ms.sigma_isqrt @ ms.gamma
            if variant == "marginal0"
            else ms.sigma_star_isqrt @ ms.gamma_star
        )
        total += lin(direction) * lm.e_x2 / (2.0 * nu * lm.e_t)
    return total


def box_probability(
    ctx: ExpansionContext,
    x_lo: float,
    x_hi: float,
    w_lo: float,
    w_hi: float,
    variant: str = "general",
    sign_mode: str = "plus",
    n_grid: int = 2001,
) -> float:
    """Expansion mass of {overshoot in (x_lo, x_hi], W_tau in (w_lo, w_hi]}.

    Scalar covariate only. The Gaussian direction is integrated in closed
    form; the overshoot direction by a midpoint rule against the rho
    weights.
    """
    ms = ctx.moments
    if ms.m != 1:
        raise WrongDimension("box probabilities are implemented for m = 1")
    if variant not in ("general", "positive"):
        raise ValueError("box probability variant must be general or positive")
    sgn = SIGN_MODES[sign_mode]
    lm = ctx.require_ladder("box probability")
    scale = ms.sigma_isqrt[0, 0] * math.sqrt(ms.nu / ctx.a)
    gamma1 = ms.gamma[0]
    xs = np.linspace(max(x_lo, 0.0), x_hi, n_grid + 1)
    mids = 0.5 * (xs[1:] + xs[:-1])
    dx = np.diff(xs)
    rho0 = rho_eval(lm, mids, "rho0")
    rho1 = rho_eval(lm, mids, "rho1")[:, 0]
    total = 0.0
    root = math.sqrt(ms.nu / ctx.a)
    for mid, w_, r0, r1 in zip(mids, dx, rho0, rho1):
        if r0 == 0.0 and r1 == 0.0:
            continue
        shift = gamma1 * (mid + ctx.a)
        lo = (w_lo - shift) * scale
        hi = (w_hi - shift) * scale
        table = _box_table(np.array([lo]), np.array([hi]))
        m0, m1 = table[0, 0], table[0, 1]
        h_int = _integrate_h_over_box(ctx, variant, table)
        total += w_ * (r0 * m0 + root * (r0 * h_int + sgn * r1 * m1))
    return float(total)


def density_mass_leading(
    ctx: ExpansionContext, n_grid: int = 20001, x_max: float | None = None
) -> float:
    """Numerical mass of the leading density term over (0, inf) x R^m.

    The Gaussian factor integrates to one exactly, leaving the overshoot
    integral of rho_0, done by midpoint rule up to x_max (defaulting to
    the top of the ladder support estimate).
    """
    lm = ctx.require_ladder("density mass")
    if x_max is None:
        if lm._x_sorted is not None:
            x_max = float(lm._x_sorted[-1]) * (1.0 + 1e-9) + 1e-12
        else:
            x_max = 1.0
            while float(rho_eval(lm, x_max, "rho0")) > 1e-12 * float(
                rho_eval(lm, 1e-9, "rho0")
            ):
                x_max *= 2.0
    xs = np.linspace(0.0, x_max, n_grid + 1)
    mids = 0.5 * (xs[1:] + xs[:-1])
    rho0 = rho_eval(lm, mids, "rho0")
    return float(np.sum(rho0 * np.diff(xs)))


def expected_renewal_boxes(
    ctx: ExpansionContext,
    a: float,
    delta: float,
    z_boxes,
    n_nodes: int = 64,
) -> np.ndarray:
    """Expected walk-point counts in (a, a+delta] x z-box, one per box.

    Each box is an (lo_vec, hi_vec) pair of length-m bounds; infinities are
    fine. Integrates the renewal density over the slab with Gauss-Legendre
    in the level and closed forms in the standardized covariate directions.
    The full-space box recovers the level marginal delta/nu at leading
    order exactly.
    """
    ms = ctx.moments
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    xs = a + 0.5 * delta * (nodes + 1.0)
    ws = 0.5 * delta * weights
    out = np.zeros(len(z_boxes))
    for b, (lo_raw, hi_raw) in enumerate(z_boxes):
        lo = np.asarray(lo_raw, dtype=float)
        hi = np.asarray(hi_raw, dtype=float)
        if lo.size != ms.m or hi.size != ms.m:
            raise WrongDimension("z box dimension must match m")
        total = 0.0
        for x, wq in zip(xs, ws):
            s = math.sqrt(ms.nu / x)
            table = _box_table(lo * s, hi * s)
            m0 = float(np.prod(table[:, 0]))
            h_int = _integrate_h_over_box(ctx, "positive", table)
            total += wq * (m0 + s * h_int) / ms.nu
        out[b] = total
    return out
