"""End-to-end acceptance gate.

One test per shipped claim, each printing a single [PASS]/[FAIL] line with
the measured numbers before asserting. Reference coverage values are the
published eight-cell study; tolerances and rep counts are part of the claim.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

import stopwalk as sw
from stopwalk.expansion import (
    SigmaStarPartition,
    density_mass_leading,
    eval_H,
    fa_cdf,
    make_context,
    t0_cdf,
    t_statistic_smooth,
)
from stopwalk.harness import (
    ExperimentConfig,
    run_cdf_compare,
    run_coverage,
    run_identity_checks,
    run_renewal_check,
    serialize_report,
    table1_config,
)

RNG = lambda s: np.random.Generator(np.random.Philox(s))


def _verdict(num: int, ok: bool, detail: str) -> None:
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] criterion-{num}: {detail}")


# cells ordered a=10 then a=25, models (nu, rho) = (.5,.4), (.5,.8), (.25,.4), (.25,.8)
TABLE1_REF = {
    "anscombe": {
        "coverage": [0.884, 0.881, 0.892, 0.894, 0.890, 0.887, 0.890, 0.893],
        "p_upper": [0.047, 0.035, 0.045, 0.030, 0.051, 0.047, 0.050, 0.042],
        "p_lower": [0.069, 0.083, 0.064, 0.075, 0.059, 0.066, 0.061, 0.065],
    },
    "corrected-zero-mu3": {
        "coverage": [0.880, 0.876, 0.892, 0.879, 0.890, 0.884, 0.883, 0.885],
        "p_upper": [0.057, 0.055, 0.057, 0.062, 0.057, 0.061, 0.064, 0.062],
        "p_lower": [0.063, 0.069, 0.051, 0.060, 0.054, 0.055, 0.054, 0.053],
    },
    "corrected-estimated-mu3": {
        "coverage": [0.874, 0.873, 0.892, 0.876, 0.888, 0.885, 0.882, 0.885],
        "p_upper": [0.058, 0.056, 0.059, 0.063, 0.058, 0.060, 0.063, 0.061],
        "p_lower": [0.068, 0.071, 0.050, 0.060, 0.054, 0.056, 0.055, 0.054],
    },
}


def test_criterion_1_table1_reproduction():
    start = time.perf_counter()
    report = run_coverage(table1_config(reps=10_000, workers=1))
    elapsed = time.perf_counter() - start
    worst = 0.0
    worst_where = ""
    for k, cell in enumerate(report.cells):
        for method, ref in TABLE1_REF.items():
            row = cell["methods"][method]
            for key in ("coverage", "p_upper", "p_lower"):
                gap = abs(row[key] - ref[key][k])
                if gap > worst:
                    worst = gap
                    worst_where = f"cell {k + 1} {method} {key}"
    ok = worst <= 0.015 and elapsed < 120.0
    _verdict(
        1,
        ok,
        f"eight-cell study at 1e4 reps: max |deviation| {worst:.4f} <= 0.015 "
        f"({worst_where}), wall {elapsed:.1f}s < 120s",
    )
    assert worst <= 0.015, worst_where
    assert elapsed < 120.0


@pytest.fixture(scope="module")
def coverage_100k():
    return run_coverage(table1_config(reps=100_000, workers=1))


def test_criterion_2_corrected_intervals_less_biased(coverage_100k):
    report = coverage_100k
    worst_margin = math.inf
    worst_where = ""
    ratios = []
    for k, cell in enumerate(report.cells):
        rows = cell["methods"]
        bias = {m: abs(r["p_upper"] - r["p_lower"]) for m, r in rows.items()}
        for method in ("corrected-zero-mu3", "corrected-estimated-mu3"):
            margin = bias["anscombe"] - bias[method]
            if margin < worst_margin:
                worst_margin = margin
                worst_where = f"cell {k + 1} {method}"
        rho = cell["model"]["params"]["rho"]
        if rho == 0.8:
            r = rows["anscombe"]
            hi, lo = max(r["p_upper"], r["p_lower"]), min(r["p_upper"], r["p_lower"])
            ratios.append(hi / lo)
    min_ratio = min(ratios)
    ok = worst_margin > 0.0 and min_ratio > 1.5
    _verdict(
        2,
        ok,
        "1e5-rep bias |p_upper - p_lower|: corrected beats anscombe in every cell "
        f"(min margin {worst_margin:.4f} at {worst_where}); "
        f"anscombe one-sided error ratio at rho=0.8 cells >= {min_ratio:.2f} > 1.5",
    )
    assert worst_margin > 0.0, worst_where
    assert min_ratio > 1.5


def test_criterion_3_expansion_beats_normal_reference():
    cfg = ExperimentConfig(
        models=(sw.bivariate_normal(nu=0.25, mu=0.0, rho=0.8),),
        a_values=(25.0,),
        reps=1_000_000,
        seed=314,
        chunk_size=8192,
        statistic="t0",
        grid=(-1.645, 0.0, 1.645),
    )
    cell = run_cdf_compare(cfg).cells[0]
    checked = 0
    ok = True
    details = []
    for row in cell["rows"]:
        correction = abs(row["expansion"] - row["normal"])
        if correction <= 3.0 * row["se"]:
            continue
        checked += 1
        better = abs(row["gap_expansion"]) < abs(row["gap_normal"])
        ok = ok and better
        details.append(
            f"c={row['c']:g}: |emp-expansion| {abs(row['gap_expansion']):.4f} vs "
            f"|emp-normal| {abs(row['gap_normal']):.4f}"
        )
    ok = ok and checked == 3
    _verdict(
        3,
        ok,
        "1e6-rep studentized cdf, nu=.25 rho=.8 a=25: corrections exceed 3 MC se "
        f"at {checked}/3 grid points and the expansion wins each ({'; '.join(details)})",
    )
    assert checked == 3
    for row in cell["rows"]:
        if abs(row["expansion"] - row["normal"]) > 3.0 * row["se"]:
            assert abs(row["gap_expansion"]) < abs(row["gap_normal"]), row["c"]


def test_criterion_4_identity_suite():
    cfg = ExperimentConfig(
        models=(
            sw.bivariate_normal(nu=0.5, mu=0.0, rho=0.4),
            sw.bernoulli_step(p=0.75),
            sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4, coupling=0.7),
        ),
        a_values=(1.0,),
        reps=100_000,
        seed=271,
        chunk_size=16384,
    )
    start = time.perf_counter()
    suite = run_identity_checks(cfg)
    elapsed = time.perf_counter() - start
    # the *_mean_variant rows are deliberate wrong-reading diagnostics (they
    # replace a joint moment with a product of means) and fail by design on
    # models with E[T Z-tilde] != 0; they are not identities
    exclude = ("cubic_transfer_mean_variant", "quadratic_transfer_mean_variant")
    worst = 0.0
    worst_where = ""
    for d in suite.reports:
        for r in d["rows"]:
            if r["name"] in exclude:
                continue
            if abs(r["resid"]) > worst:
                worst = abs(r["resid"])
                worst_where = f"{d['model']['kind']}:{r['name']}"
    ok = worst < 4.0 and elapsed < 60.0
    _verdict(
        4,
        ok,
        f"identity suite, 3 models x 1e5 ladder draws: max |studentized residual| "
        f"{worst:.2f} < 4 ({worst_where}), wall {elapsed:.1f}s < 60s",
    )
    assert worst < 4.0, worst_where
    assert elapsed < 60.0


def test_criterion_5_overshoot_and_renewal_counts():
    n = 100_000
    model = sw.positive_exponential(rate=1.0, alpha=1.0, beta=0.0, noise_sd=1.0)
    out = sw.batch_stopped_sums(model, 10.0, n, RNG((55, 0)))
    ks = stats.kstest(out["overshoot"], "expon").statistic
    ks_bound = 1.63 / math.sqrt(n)

    cfg = ExperimentConfig(
        models=(model,),
        a_values=(20.0,),
        reps=20_000,
        seed=555,
        chunk_size=4096,
        delta=1.0,
    )
    box = run_renewal_check(cfg).cells[0]["boxes"][0]
    delta_ok = abs(box["expected"] - 1.0) < 1e-9
    ok = ks <= ks_bound and abs(box["resid"]) <= 4.0 and delta_ok
    _verdict(
        5,
        ok,
        f"unit-rate exponential overshoot at a=10: KS {ks:.5f} <= {ks_bound:.5f}; "
        f"exponential slab count over all covariates {box['observed_mean']:.4f} "
        f"vs delta {box['expected']:.1f} ({box['resid']:+.2f} se)",
    )
    assert ks <= ks_bound
    assert delta_ok
    assert abs(box["resid"]) <= 4.0


NORMALIZED = (
    sw.bivariate_normal(nu=1.0, mu=0.0, rho=0.6),
    sw.gamma_shifted(x_shape=4.0, x_scale=0.25, y_shape=12.0, y_scale=0.25, coupling=1.0),
)


def test_criterion_6_internal_reductions():
    sup_gap = 0.0
    grid = np.linspace(-4.0, 4.0, 100)
    for model in NORMALIZED:
        ms = sw.analytic_moments(model)
        part = SigmaStarPartition(*sw.lifted_t_sigma_star(model))
        stat = t_statistic_smooth(part)
        ctx = make_context(model, 30.0, rng=RNG((66, 0)))
        gap = np.max(np.abs(
            fa_cdf(grid, ctx, part, stat)
            - t0_cdf(grid, 30.0, ms.nu, math.sqrt(ms.var_y), ms.mu3, ms.sigma_xy)
        ))
        sup_gap = max(sup_gap, float(gap))

    gauss_ctx = make_context(sw.bivariate_normal(nu=0.5, mu=0.0, rho=0.4), 10.0,
                             ladder_draws=100_000, rng=RNG((66, 1)))
    mass_emp = density_mass_leading(gauss_ctx)
    exp_ctx = make_context(sw.positive_exponential(rate=1.0, alpha=1.0, beta=0.5, noise_sd=0.7), 10.0)
    mass_ana = density_mass_leading(exp_ctx)

    rng = RNG((66, 2))
    odd_gap = 0.0
    gctx = make_context(sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4, coupling=0.7), 8.0)
    for variant, d in (("general", 1), ("starred", 2), ("positive", 1)):
        for _ in range(1000):
            q = rng.standard_normal(d) * 2.5
            resid = eval_H(q, gctx, variant) + eval_H(-q, gctx, variant)
            odd_gap = max(odd_gap, abs(resid))

    ok = sup_gap < 1e-12 and abs(mass_emp - 1.0) <= 0.01 and abs(mass_ana - 1.0) <= 0.01 and odd_gap < 1e-10
    _verdict(
        6,
        ok,
        f"smooth-statistic cdf equals studentized closed form to {sup_gap:.2e} "
        f"(100-point grid, 2 models); leading density mass {mass_emp:.4f} / "
        f"{mass_ana:.6f} within 1 +- 0.01; H oddness defect {odd_gap:.2e} over 1000 draws x 3 variants",
    )
    assert sup_gap < 1e-12
    assert abs(mass_emp - 1.0) <= 0.01
    assert abs(mass_ana - 1.0) <= 0.01
    assert odd_gap < 1e-10


def test_criterion_7_worker_count_invariance():
    texts = []
    for workers in (1, 4, 8):
        cfg = ExperimentConfig(
            models=(sw.bivariate_normal(nu=0.5, mu=0.0, rho=0.8),),
            a_values=(10.0, 25.0),
            reps=20_000,
            seed=777,
            chunk_size=2048,
            workers=workers,
        )
        texts.append(serialize_report(run_coverage(cfg)))
    ok = texts[0] == texts[1] == texts[2]
    _verdict(
        7,
        ok,
        f"coverage report bytes identical for workers 1/4/8 "
        f"({len(texts[0])} chars, 2 cells x 2e4 reps)",
    )
    assert texts[0] == texts[1]
    assert texts[0] == texts[2]
