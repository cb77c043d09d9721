"""Monte Carlo experiment harness.

Replications are split into fixed-size chunks; every chunk owns a Philox
generator keyed by (seed, purpose, cell, chunk), so results do not depend
on how many workers execute the chunks. All cross-chunk reductions happen
in chunk order over integer tallies, which keeps serialized reports
byte-identical for any worker count.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, MomentsUnavailable
from .expansion import (
    box_probability,
    expected_renewal_boxes,
    make_context,
    marginal_cdf_w_grid,
    norm_cdf,
    t0_cdf,
)
from .inference import METHODS, batch_intervals
from .ladder import LadderSample, check_identities
from .models import (
    IncrementModel,
    analytic_moments,
    bivariate_normal,
    model_from_spec,
)
from .walk import _block_len, batch_stopped_sums, default_max_steps, sample_ladder_variables

STATISTICS = ("t0", "t", "w")
DEFAULT_GRID = (-2.5, -1.96, -1.645, -1.0, -0.5, 0.0, 0.5, 1.0, 1.645, 1.96, 2.5)

# purpose tags keep the generator streams of different experiment types disjoint
_P_COVERAGE = 1
_P_CDF = 2
_P_IDENTITY = 3
_P_RENEWAL = 4
_P_SIGN = 5
_P_LADDER_CTX = 6


def chunk_rng(seed: int, purpose: int, cell: int, chunk: int) -> np.random.Generator:
    """Generator for one (experiment, cell, chunk) slot, worker-independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, purpose, cell, chunk))))


def _chunk_sizes(reps: int, chunk_size: int) -> list[int]:
    full, rest = divmod(reps, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def _run_chunks(fn, n_chunks: int, workers: int) -> list:
    """Evaluate fn(0..n_chunks-1), returning results in chunk order."""
    if workers <= 1 or n_chunks <= 1:
        return [fn(j) for j in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_chunks)))


@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple[IncrementModel, ...]
    a_values: tuple[float, ...]
    alpha: float = 0.05
    reps: int = 10_000
    seed: int = 0
    workers: int = 1
    chunk_size: int = 4096
    methods: tuple[str, ...] = METHODS
    statistic: str = "t0"
    grid: tuple[float, ...] = DEFAULT_GRID
    ladder_reps: int = 100_000
    delta: float = 1.0
    z_boxes: tuple | None = None
    rect_boxes: tuple | None = None
    mu_true: float | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if not self.models:
            raise InvalidConfig("models", "at least one model required")
        if not self.a_values or any(a <= 0 for a in self.a_values):
            raise InvalidConfig("a", "boundary levels must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig("alpha", f"alpha = {self.alpha} outside (0, 1)")
        if self.reps <= 0:
            raise InvalidConfig("reps", "reps must be positive")
        if self.chunk_size <= 0:
            raise InvalidConfig("chunk_size", "chunk_size must be positive")
        for m in self.methods:
            if m not in METHODS:
                raise InvalidConfig("methods", f"unknown method {m!r}")
        if self.statistic not in STATISTICS:
            raise InvalidConfig("statistic", f"statistic must be one of {STATISTICS}")
        g = np.asarray(self.grid, dtype=float)
        if g.size == 0 or np.any(np.diff(g) <= 0):
            raise InvalidConfig("grid", "grid must be strictly increasing")
        if self.delta <= 0:
            raise InvalidConfig("delta", "delta must be positive")
        if self.ladder_reps <= 0:
            raise InvalidConfig("ladder_reps", "ladder_reps must be positive")

    def echo(self) -> dict:
        # worker count deliberately omitted: reports must not depend on it
        return {
            "models": [m.describe() for m in self.models],
            "a": list(self.a_values),
            "alpha": self.alpha,
            "reps": self.reps,
            "seed": self.seed,
            "chunk_size": self.chunk_size,
            "methods": list(self.methods),
            "statistic": self.statistic,
            "grid": list(self.grid),
            "ladder_reps": self.ladder_reps,
            "delta": self.delta,
            "mu_true": self.mu_true,
        }


_CONFIG_KEYS = {
    "model", "models", "a", "a_values", "alpha", "reps", "seed", "workers",
    "chunk_size", "methods", "statistic", "grid", "ladder_reps", "delta",
    "z_boxes", "rect_boxes", "mu_true", "max_steps",
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated config from a plain dict (e.g. parsed JSON)."""
    if not isinstance(raw, dict):
        raise InvalidConfig("config", "config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise InvalidConfig("config", f"unknown keys: {sorted(unknown)}")
    if "model" in raw and "models" in raw:
        raise InvalidConfig("model", "give either 'model' or 'models', not both")
    specs = raw.get("models", [raw["model"]] if "model" in raw else None)
    if specs is None:
        raise InvalidConfig("model", "a model spec is required")
    try:
        models = tuple(model_from_spec(s) for s in specs)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig("model", str(exc)) from exc
    a_raw = raw.get("a", raw.get("a_values"))
    if a_raw is None:
        raise InvalidConfig("a", "a boundary level is required")
    a_values = tuple(float(v) for v in (a_raw if isinstance(a_raw, (list, tuple)) else [a_raw]))
    kwargs = {}
    for key in ("alpha", "delta"):
        if key in raw:
            kwargs[key] = float(raw[key])
    for key in ("reps", "seed", "workers", "chunk_size", "ladder_reps", "max_steps"):
        if key in raw and raw[key] is not None:
            kwargs[key] = int(raw[key])
    if "methods" in raw:
        kwargs["methods"] = tuple(raw["methods"])
    if "statistic" in raw:
        kwargs["statistic"] = raw["statistic"]
    if "grid" in raw:
        kwargs["grid"] = tuple(float(v) for v in raw["grid"])
    if "z_boxes" in raw and raw["z_boxes"] is not None:
        kwargs["z_boxes"] = tuple(tuple(b) for b in raw["z_boxes"])
    if "rect_boxes" in raw and raw["rect_boxes"] is not None:
        kwargs["rect_boxes"] = tuple(tuple(map(tuple, b)) for b in raw["rect_boxes"])
    if raw.get("mu_true") is not None:
        kwargs["mu_true"] = float(raw["mu_true"])
    return ExperimentConfig(models=models, a_values=a_values, **kwargs)


def table1_config(reps: int = 10_000, seed: int = 2718, workers: int = 1,
                  chunk_size: int = 4096) -> ExperimentConfig:
    """Eight-cell coverage study: nu in {.5, .25} x rho in {.4, .8} x a in {10, 25}."""
    models = tuple(
        bivariate_normal(nu=nu, mu=0.0, rho=rho)
        for nu in (0.5, 0.25)
        for rho in (0.4, 0.8)
    )
    return ExperimentConfig(
        models=models, a_values=(10.0, 25.0), alpha=0.05, reps=reps,
        seed=seed, workers=workers, chunk_size=chunk_size,
    )


def _cells(config: ExperimentConfig) -> list[tuple[float, IncrementModel]]:
    # a is the outer loop so columns group by boundary level
    return [(a, m) for a in config.a_values for m in config.models]


def _model_label(desc: dict) -> str:
    params = desc.get("params", {})
    if desc.get("kind") == "bivariate-normal":
        return f"nu={params['nu']:g} rho={params['rho']:g}"
    scalar = [f"{k}={v:g}" for k, v in params.items() if isinstance(v, (int, float))]
    return desc.get("kind", "?") + ("" if not scalar else " " + " ".join(scalar))


def _cell_mu(config: ExperimentConfig, model: IncrementModel) -> float:
    if config.mu_true is not None:
        return config.mu_true
    try:
        return analytic_moments(model, allow_singular=True).mu
    except MomentsUnavailable as exc:
        raise InvalidConfig(
            "mu_true", "model has no closed-form mean; set mu_true explicitly"
        ) from exc


# ---------------------------------------------------------------------------
# reports


@dataclass
class CoverageReport:
    config: dict
    cells: list

    kind = "coverage-report"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "cells": self.cells}

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageReport":
        if d.get("kind") != cls.kind:
            raise ValueError(f"not a {cls.kind} payload")
        return cls(config=d["config"], cells=d["cells"])


@dataclass
class CdfReport:
    config: dict
    cells: list

    kind = "cdf-report"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "cells": self.cells}

    @classmethod
    def from_dict(cls, d: dict) -> "CdfReport":
        if d.get("kind") != cls.kind:
            raise ValueError(f"not a {cls.kind} payload")
        return cls(config=d["config"], cells=d["cells"])


@dataclass
class IdentitySuite:
    config: dict
    reports: list

    kind = "identity-suite"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "reports": self.reports}

    @classmethod
    def from_dict(cls, d: dict) -> "IdentitySuite":
        if d.get("kind") != cls.kind:
            raise ValueError(f"not a {cls.kind} payload")
        return cls(config=d["config"], reports=d["reports"])


@dataclass
class RenewalReport:
    config: dict
    cells: list

    kind = "renewal-report"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "cells": self.cells}

    @classmethod
    def from_dict(cls, d: dict) -> "RenewalReport":
        if d.get("kind") != cls.kind:
            raise ValueError(f"not a {cls.kind} payload")
        return cls(config=d["config"], cells=d["cells"])


@dataclass
class SignReport:
    config: dict
    cells: list

    kind = "sign-report"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "cells": self.cells}

    @classmethod
    def from_dict(cls, d: dict) -> "SignReport":
        if d.get("kind") != cls.kind:
            raise ValueError(f"not a {cls.kind} payload")
        return cls(config=d["config"], cells=d["cells"])


# ---------------------------------------------------------------------------
# coverage


def run_coverage(config: ExperimentConfig) -> CoverageReport:
    """Interval coverage and one-sided error tallies per (a, model, method).

    Every replication lands in exactly one of cover / upper / lower /
    rejected, so the four integers always sum to reps.
    """
    sizes = _chunk_sizes(config.reps, config.chunk_size)
    cells_out = []
    for ci, (a, model) in enumerate(_cells(config)):
        mu = _cell_mu(config, model)

        def one_chunk(j, _a=a, _model=model, _mu=mu, _ci=ci):
            rng = chunk_rng(config.seed, _P_COVERAGE, _ci, j)
            sums = batch_stopped_sums(
                _model, _a, sizes[j], rng,
                max_steps=config.max_steps, want_e_sums=True,
            )
            out = {}
            for method in config.methods:
                lo, hi, bad = batch_intervals(sums, _a, config.alpha, method)
                ok = ~bad
                cover = ok & (lo <= _mu) & (_mu <= hi)
                upper = ok & ~cover & (_mu > hi)
                lower = ok & ~cover & (_mu < lo)
                out[method] = (
                    int(np.count_nonzero(cover)),
                    int(np.count_nonzero(upper)),
                    int(np.count_nonzero(lower)),
                    int(np.count_nonzero(bad)),
                )
            return out

        chunk_results = _run_chunks(one_chunk, len(sizes), config.workers)
        methods_out = {}
        for method in config.methods:
            n_cover = n_upper = n_lower = n_rej = 0
            for res in chunk_results:
                c, u, l, r = res[method]
                n_cover += c
                n_upper += u
                n_lower += l
                n_rej += r
            n_valid = n_cover + n_upper + n_lower
            def _rate(k):
                return k / n_valid if n_valid else float("nan")
            def _se(k):
                if not n_valid:
                    return float("nan")
                p = k / n_valid
                return math.sqrt(p * (1.0 - p) / n_valid)
            methods_out[method] = {
                "n_cover": n_cover,
                "n_upper": n_upper,
                "n_lower": n_lower,
                "n_rejected": n_rej,
                "coverage": _rate(n_cover),
                "p_upper": _rate(n_upper),
                "p_lower": _rate(n_lower),
                "se_coverage": _se(n_cover),
                "se_upper": _se(n_upper),
                "se_lower": _se(n_lower),
                "rejected_warning": n_rej > 0.01 * config.reps,
            }
        cells_out.append({
            "model": model.describe(),
            "a": a,
            "mu": mu,
            "reps": config.reps,
            "methods": methods_out,
        })
    return CoverageReport(config=config.echo(), cells=cells_out)


# ---------------------------------------------------------------------------
# cdf comparison


def _grid_counts(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.array([np.count_nonzero(values <= c) for c in grid], dtype=np.int64)


def run_cdf_compare(config: ExperimentConfig) -> CdfReport:
    """Empirical distribution of a stopped-walk statistic against its expansion.

    statistic 't0' / 't' studentizes the stopped mean (tau vs tau-1 variance
    denominators); 'w' uses the raw stopped sum with the grid read in
    standardized units.
    """
    sizes = _chunk_sizes(config.reps, config.chunk_size)
    grid = np.asarray(config.grid, dtype=float)
    cells_out = []
    for ci, (a, model) in enumerate(_cells(config)):
        ms = analytic_moments(model)
        mu = _cell_mu(config, model)
        sigma = ms.sd_y
        want_w = config.statistic == "w"

        def one_chunk(j, _a=a, _model=model, _mu=mu, _ci=ci):
            rng = chunk_rng(config.seed, _P_CDF, _ci, j)
            sums = batch_stopped_sums(
                _model, _a, sizes[j], rng,
                max_steps=config.max_steps, want_e_sums=True,
            )
            tau = sums["tau"].astype(float)
            bad = sums["failed"] | (sums["tau"] < 2)
            safe_tau = np.where(bad, 2.0, tau)
            ybar = sums["sum_e"] / safe_tau
            ss = np.maximum(sums["sum_e2"] - safe_tau * ybar**2, 0.0)
            if config.statistic == "w":
                vals = sums["sum_e"][~bad]
                return {"n_bad": int(np.count_nonzero(bad)), "main": _grid_counts(vals, w_grid)}
            bad = bad | (ss <= 0.0)
            ok = ~bad
            root = np.sqrt(safe_tau)[ok]
            diff = (ybar[ok] - _mu) * root
            t0_vals = diff / np.sqrt(ss[ok] / safe_tau[ok])
            t_vals = diff / np.sqrt(ss[ok] / (safe_tau[ok] - 1.0))
            main = t0_vals if config.statistic == "t0" else t_vals
            other = t_vals if config.statistic == "t0" else t0_vals
            return {
                "n_bad": int(np.count_nonzero(bad)),
                "main": _grid_counts(main, grid),
                "other": _grid_counts(other, grid),
            }

        if want_w:
            # grid in standardized units, mapped onto the raw stopped-sum scale
            scale = math.sqrt(ms.sigma_sq) * math.sqrt(a / ms.nu)
            w_grid = ms.gamma[0] * a + scale * grid
            ctx = make_context(
                model, a, ladder_draws=config.ladder_reps,
                rng=chunk_rng(config.seed, _P_LADDER_CTX, ci, 0), moments=ms,
            )
            expansion = marginal_cdf_w_grid(w_grid, ctx)
            normal_ref = norm_cdf(grid)
        else:
            expansion = t0_cdf(grid, a, ms.nu, sigma, ms.mu3, ms.sigma_xy)
            normal_ref = norm_cdf(grid)

        chunk_results = _run_chunks(one_chunk, len(sizes), config.workers)
        n_bad = sum(res["n_bad"] for res in chunk_results)
        n_valid = config.reps - n_bad
        counts = np.zeros(grid.size, dtype=np.int64)
        counts_other = np.zeros(grid.size, dtype=np.int64)
        for res in chunk_results:
            counts += res["main"]
            if "other" in res:
                counts_other += res["other"]
        emp = counts / n_valid if n_valid else np.full(grid.size, np.nan)
        rows = []
        for k, c in enumerate(grid):
            p = float(emp[k])
            se = math.sqrt(p * (1.0 - p) / n_valid) if n_valid else float("nan")
            rows.append({
                "c": float(c),
                "empirical": p,
                "normal": float(normal_ref[k]),
                "expansion": float(expansion[k]),
                "gap_normal": p - float(normal_ref[k]),
                "gap_expansion": p - float(expansion[k]),
                "se": se,
            })
        cell = {
            "model": model.describe(),
            "a": a,
            "statistic": config.statistic,
            "n_valid": n_valid,
            "n_rejected": n_bad,
            "rows": rows,
            "sup_gap_normal": max(abs(r["gap_normal"]) for r in rows),
            "sup_gap_expansion": max(abs(r["gap_expansion"]) for r in rows),
        }
        if not want_w and n_valid:
            cell["sup_t_vs_t0"] = float(np.max(np.abs(counts - counts_other)) / n_valid)
        cells_out.append(cell)
    return CdfReport(config=config.echo(), cells=cells_out)


# ---------------------------------------------------------------------------
# ladder identities


def _gather_ladder(config: ExperimentConfig, model: IncrementModel, ci: int) -> LadderSample:
    sizes = _chunk_sizes(config.reps, config.chunk_size)

    def one_chunk(j):
        rng = chunk_rng(config.seed, _P_IDENTITY, ci, j)
        return sample_ladder_variables(model, sizes[j], rng, max_steps=config.max_steps)

    parts = _run_chunks(one_chunk, len(sizes), config.workers)
    return LadderSample(
        t=np.concatenate([p.t for p in parts]),
        x=np.concatenate([p.x for p in parts]),
        w=np.vstack([p.w for p in parts]),
        fingerprint=model.fingerprint(),
    )


def run_identity_checks(config: ExperimentConfig) -> IdentitySuite:
    """Studentized ladder/stopping identity residuals for each model."""
    reports = []
    for ci, model in enumerate(config.models):
        base = analytic_moments(model, allow_singular=True)
        sample = _gather_ladder(config, model, ci)
        rep = check_identities(sample, base)
        d = rep.to_dict()
        d["model"] = model.describe()
        reports.append(d)
    return IdentitySuite(config=config.echo(), reports=reports)


# ---------------------------------------------------------------------------
# renewal slab counts


def _default_z_boxes(m: int) -> tuple:
    full = (tuple([-math.inf] * m), tuple([math.inf] * m))
    below = (tuple([-math.inf] * m), tuple([0.0] * m))
    mid = (tuple([0.0] * m), tuple([1.0] * m))
    return (full, below, mid)


def _renewal_counts(model, a, delta, boxes, rows, rng, max_steps, gamma, isq):
    m = model.dim_w
    counts = np.zeros((rows, len(boxes)), dtype=np.int64)
    failed = np.zeros(rows, dtype=bool)
    carry_x = np.zeros(rows)
    carry_w = np.zeros((rows, m))
    active = np.arange(rows)
    block = _block_len(model, a + delta)
    steps = 0
    while active.size:
        if steps >= max_steps:
            failed[active] = True
            break
        x, w = model.sample_block(rng, active.size, block)
        cx = np.cumsum(x, axis=1) + carry_x[active, None]
        cw = np.cumsum(w, axis=1) + carry_w[active, None, :]
        in_slab = (cx > a) & (cx <= a + delta)
        if in_slab.any():
            z = (cw - gamma[None, None, :] * cx[:, :, None]) @ isq.T
            for b, (lo, hi) in enumerate(boxes):
                lo_a = np.asarray(lo, dtype=float)
                hi_a = np.asarray(hi, dtype=float)
                hit = in_slab & np.all((z > lo_a) & (z <= hi_a), axis=2)
                counts[active, b] += hit.sum(axis=1)
        carry_x[active] = cx[:, -1]
        carry_w[active] = cw[:, -1]
        active = active[cx[:, -1] <= a + delta]
        steps += block
    return counts, failed


def run_renewal_check(config: ExperimentConfig) -> RenewalReport:
    """Observed vs predicted point counts in the slab (a, a+delta] per z-box.

    Requires strictly positive boundary increments so the cumulative sums
    visit the slab exactly once per replication window.
    """
    sizes = _chunk_sizes(config.reps, config.chunk_size)
    cells_out = []
    for ci, (a, model) in enumerate(_cells(config)):
        if not model.positive_x():
            raise InvalidConfig("model", "renewal check needs positive increments")
        ms = analytic_moments(model)
        boxes = config.z_boxes if config.z_boxes is not None else _default_z_boxes(ms.m)
        max_steps = config.max_steps or default_max_steps(model, a + config.delta)
        ctx = make_context(model, a, moments=ms)
        expected = expected_renewal_boxes(ctx, a, config.delta, boxes)

        def one_chunk(j, _a=a, _model=model, _ci=ci, _boxes=boxes, _ms=ms, _max=max_steps):
            rng = chunk_rng(config.seed, _P_RENEWAL, _ci, j)
            counts, fail = _renewal_counts(
                _model, _a, config.delta, _boxes, sizes[j], rng, _max,
                _ms.gamma, _ms.sigma_isqrt,
            )
            ok = ~fail
            return {
                "n_bad": int(np.count_nonzero(fail)),
                "sum": counts[ok].sum(axis=0),
                "sum_sq": (counts[ok].astype(np.int64) ** 2).sum(axis=0),
            }

        chunk_results = _run_chunks(one_chunk, len(sizes), config.workers)
        n_bad = sum(r["n_bad"] for r in chunk_results)
        n = config.reps - n_bad
        tot = np.zeros(len(boxes), dtype=np.int64)
        tot_sq = np.zeros(len(boxes), dtype=np.int64)
        for r in chunk_results:
            tot += r["sum"]
            tot_sq += r["sum_sq"]
        rows = []
        for b, (lo, hi) in enumerate(boxes):
            mean = tot[b] / n if n else float("nan")
            var = tot_sq[b] / n - mean**2 if n else float("nan")
            se = math.sqrt(max(var, 0.0) / n) if n else float("nan")
            resid = (mean - expected[b]) / se if se and se > 0 else float("inf") if mean != expected[b] else 0.0
            rows.append({
                "z_lo": list(lo),
                "z_hi": list(hi),
                "observed_mean": float(mean),
                "expected": float(expected[b]),
                "se": float(se),
                "resid": float(resid),
            })
        cells_out.append({
            "model": model.describe(),
            "a": a,
            "delta": config.delta,
            "n": n,
            "n_rejected": n_bad,
            "boxes": rows,
        })
    return RenewalReport(config=config.echo(), cells=cells_out)


# ---------------------------------------------------------------------------
# density sign discrimination


def _default_rect_boxes(ms, lm, a: float) -> tuple:
    """Rectangles in (overshoot, covariate) space split along both axes."""
    s = math.sqrt(ms.sigma_mat[0, 0]) * math.sqrt(a / ms.nu)
    c = ms.gamma[0] * a
    ex = lm.e_x
    out = []
    for q_lo, q_hi in ((0.25, 1.75), (-1.75, -0.25)):
        for x_lo, x_hi in ((0.0, 0.8 * ex), (0.8 * ex, 3.0 * ex)):
            out.append(((x_lo, x_hi), (c + q_lo * s, c + q_hi * s)))
    return tuple(out)


def run_sign_check(config: ExperimentConfig) -> SignReport:
    """Empirical box masses of (overshoot, W_tau) against both sign variants.

    The correction term linear in rho1 flips with the sign mode, so boxes
    asymmetric in the standardized covariate separate the two candidates
    whenever rho1 is not identically zero.
    """
    sizes = _chunk_sizes(config.reps, config.chunk_size)
    cells_out = []
    for ci, (a, model) in enumerate(_cells(config)):
        ms = analytic_moments(model)
        if ms.m != 1:
            raise InvalidConfig("model", "sign check implemented for one covariate")
        ctx = make_context(
            model, a, ladder_draws=config.ladder_reps,
            rng=chunk_rng(config.seed, _P_LADDER_CTX, ci, 0), moments=ms,
        )
        boxes = config.rect_boxes if config.rect_boxes is not None else _default_rect_boxes(ms, ctx.ladder, a)

        def one_chunk(j, _a=a, _model=model, _ci=ci, _boxes=boxes):
            rng = chunk_rng(config.seed, _P_SIGN, _ci, j)
            sums = batch_stopped_sums(
                _model, _a, sizes[j], rng, max_steps=config.max_steps, want_w_tau=True,
            )
            ok = ~sums["failed"]
            over = sums["overshoot"][ok]
            wv = sums["w_tau"][ok, 0]
            hits = []
            for (x_lo, x_hi), (w_lo, w_hi) in _boxes:
                inside = (over > x_lo) & (over <= x_hi) & (wv > w_lo) & (wv <= w_hi)
                hits.append(int(np.count_nonzero(inside)))
            return {"n_bad": int(np.count_nonzero(~ok)), "hits": np.array(hits, dtype=np.int64)}

        chunk_results = _run_chunks(one_chunk, len(sizes), config.workers)
        n_bad = sum(r["n_bad"] for r in chunk_results)
        n = config.reps - n_bad
        tot = np.zeros(len(boxes), dtype=np.int64)
        for r in chunk_results:
            tot += r["hits"]
        rows = []
        z_plus_max = 0.0
        z_minus_max = 0.0
        for b, ((x_lo, x_hi), (w_lo, w_hi)) in enumerate(boxes):
            emp = tot[b] / n if n else float("nan")
            se = math.sqrt(max(emp * (1.0 - emp), 1e-12) / n) if n else float("nan")
            plus = box_probability(
                ctx, x_lo, x_hi, w_lo, w_hi, sign_mode="plus",
            )
            minus = box_probability(
                ctx, x_lo, x_hi, w_lo, w_hi, sign_mode="minus",
            )
            z_plus = (emp - plus) / se
            z_minus = (emp - minus) / se
            z_plus_max = max(z_plus_max, abs(z_plus))
            z_minus_max = max(z_minus_max, abs(z_minus))
            rows.append({
                "x": [x_lo, x_hi],
                "w": [w_lo, w_hi],
                "empirical": float(emp),
                "se": float(se),
                "plus": float(plus),
                "minus": float(minus),
                "z_plus": float(z_plus),
                "z_minus": float(z_minus),
            })
        if z_plus_max + 1.0 <= z_minus_max:
            preferred = "plus"
        elif z_minus_max + 1.0 <= z_plus_max:
            preferred = "minus"
        else:
            preferred = "inconclusive"
        cells_out.append({
            "model": model.describe(),
            "a": a,
            "n": n,
            "n_rejected": n_bad,
            "boxes": rows,
            "sup_z_plus": z_plus_max,
            "sup_z_minus": z_minus_max,
            "preferred": preferred,
        })
    return SignReport(config=config.echo(), cells=cells_out)


# ---------------------------------------------------------------------------
# serialization


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _coverage_csv(d: dict) -> str:
    cells = d["cells"]
    labels = [f"a={c['a']:g} {_model_label(c['model'])}" for c in cells]
    lines = ["quantity," + ",".join(labels)]
    methods = d["config"]["methods"]
    for method in methods:
        for key, tag in (("coverage", "coverage"), ("p_upper", "p_mu_ge_ucl"), ("p_lower", "p_mu_le_lcl")):
            vals = [_fmt(c["methods"][method][key]) for c in cells]
            lines.append(f"{tag}({method})," + ",".join(vals))
    return "\n".join(lines) + "\n"


def _cdf_csv(d: dict) -> str:
    lines = ["model,a,statistic,c,empirical,normal,expansion,gap_normal,gap_expansion,se"]
    for cell in d["cells"]:
        label = _model_label(cell["model"])
        for r in cell["rows"]:
            lines.append(",".join([
                label, _fmt(cell["a"]), cell["statistic"], _fmt(r["c"]),
                _fmt(r["empirical"]), _fmt(r["normal"]), _fmt(r["expansion"]),
                _fmt(r["gap_normal"]), _fmt(r["gap_expansion"]), _fmt(r["se"]),
            ]))
    return "\n".join(lines) + "\n"


def _identity_csv(d: dict) -> str:
    lines = ["model,row,claim,estimate,se,resid"]
    for rep in d["reports"]:
        label = _model_label(rep.get("model", {}))
        for r in rep["rows"]:
            lines.append(",".join([
                label, r["name"], _fmt(r["claim"]), _fmt(r["estimate"]),
                _fmt(r["se"]), _fmt(r["resid"]),
            ]))
    return "\n".join(lines) + "\n"


def _renewal_csv(d: dict) -> str:
    lines = ["model,a,delta,z_lo,z_hi,observed_mean,expected,se,resid"]
    for cell in d["cells"]:
        label = _model_label(cell["model"])
        for r in cell["boxes"]:
            lines.append(",".join([
                label, _fmt(cell["a"]), _fmt(cell["delta"]),
                ";".join(_fmt(v) for v in r["z_lo"]),
                ";".join(_fmt(v) for v in r["z_hi"]),
                _fmt(r["observed_mean"]), _fmt(r["expected"]),
                _fmt(r["se"]), _fmt(r["resid"]),
            ]))
    return "\n".join(lines) + "\n"


def _sign_csv(d: dict) -> str:
    lines = ["model,a,x_lo,x_hi,w_lo,w_hi,empirical,se,plus,minus,z_plus,z_minus"]
    for cell in d["cells"]:
        label = _model_label(cell["model"])
        for r in cell["boxes"]:
            lines.append(",".join([
                label, _fmt(cell["a"]),
                _fmt(r["x"][0]), _fmt(r["x"][1]), _fmt(r["w"][0]), _fmt(r["w"][1]),
                _fmt(r["empirical"]), _fmt(r["se"]), _fmt(r["plus"]),
                _fmt(r["minus"]), _fmt(r["z_plus"]), _fmt(r["z_minus"]),
            ]))
    return "\n".join(lines) + "\n"


_CSV_WRITERS = {
    "coverage-report": _coverage_csv,
    "cdf-report": _cdf_csv,
    "identity-suite": _identity_csv,
    "renewal-report": _renewal_csv,
    "sign-report": _sign_csv,
}


def serialize_report(report, fmt: str = "json") -> str:
    """Serialize a report object (or its dict form) to json or csv text.

    The json form is stable: re-serializing a parsed payload reproduces the
    bytes, which is what the determinism checks compare.
    """
    d = report.to_dict() if hasattr(report, "to_dict") else report
    if fmt == "json":
        return json.dumps(d, indent=2) + "\n"
    if fmt == "csv":
        writer = _CSV_WRITERS.get(d.get("kind"))
        if writer is None:
            raise ValueError(f"no csv layout for report kind {d.get('kind')!r}")
        return writer(d)
    raise ValueError("fmt must be 'json' or 'csv'")


def report_from_dict(d: dict):
    """Rehydrate a parsed report payload into its report class."""
    kinds = {
        "coverage-report": CoverageReport,
        "cdf-report": CdfReport,
        "identity-suite": IdentitySuite,
        "renewal-report": RenewalReport,
        "sign-report": SignReport,
    }
    cls = kinds.get(d.get("kind"))
    if cls is None:
        raise ValueError(f"unknown report kind {d.get('kind')!r}")
    return cls.from_dict(d)


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file in the destination directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
