"""Monte Carlo harness: configs, determinism, tallies, serialization."""

import json

import numpy as np
import pytest

import stopwalk as sw
from stopwalk.errors import InvalidConfig
from stopwalk.harness import (
    ExperimentConfig,
    chunk_rng,
    config_from_dict,
    report_from_dict,
    run_cdf_compare,
    run_coverage,
    run_identity_checks,
    run_renewal_check,
    run_sign_check,
    serialize_report,
    table1_config,
    write_text_atomic,
)

NORMAL = sw.bivariate_normal(nu=0.5, mu=0.0, rho=0.4)
EXP_SKEW = sw.positive_exponential(rate=1.0, alpha=1.0, beta=0.5, noise_sd=0.7)
EXP_SYM = sw.positive_exponential(rate=1.0, alpha=1.0, beta=0.0, noise_sd=1.0)
GAMMA = sw.gamma_shifted(x_shape=2.0, x_scale=0.5, y_shape=3.0, y_scale=0.4, coupling=0.7)


def small_config(**kw):
    base = dict(models=(NORMAL,), a_values=(6.0,), reps=2000, seed=7, chunk_size=512)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        small_config(alpha=1.5)
    with pytest.raises(InvalidConfig):
        small_config(models=())
    with pytest.raises(InvalidConfig):
        small_config(a_values=(-1.0,))
    with pytest.raises(InvalidConfig):
        small_config(reps=0)
    with pytest.raises(InvalidConfig):
        small_config(methods=("anscombe", "bonferroni"))
    with pytest.raises(InvalidConfig):
        small_config(statistic="median")
    with pytest.raises(InvalidConfig):
        small_config(grid=(1.0, 1.0, 2.0))
    with pytest.raises(InvalidConfig):
        small_config(delta=0.0)


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(InvalidConfig):
        config_from_dict({"model": NORMAL.describe(), "a": 5.0, "repz": 100})
    with pytest.raises(InvalidConfig):
        config_from_dict({"a": 5.0})
    with pytest.raises(InvalidConfig):
        config_from_dict(
            {"model": NORMAL.describe(), "models": [NORMAL.describe()], "a": 5.0}
        )
    with pytest.raises(InvalidConfig):
        config_from_dict({"model": {"kind": "cauchy"}, "a": 5.0})
    with pytest.raises(InvalidConfig):
        config_from_dict({"model": NORMAL.describe()})


def test_config_echo_round_trip():
    cfg = table1_config(reps=50, seed=11)
    back = config_from_dict(cfg.echo())
    assert back.echo() == cfg.echo()
    # scalar a and single model spellings are accepted too
    one = config_from_dict({"model": NORMAL.describe(), "a": 5.0, "reps": 10})
    assert one.a_values == (5.0,)
    assert len(one.models) == 1


def test_chunk_rng_is_keyed_and_stable():
    a = chunk_rng(3, 1, 0, 2).standard_normal(4)
    b = chunk_rng(3, 1, 0, 2).standard_normal(4)
    c = chunk_rng(3, 1, 0, 3).standard_normal(4)
    d = chunk_rng(3, 2, 0, 2).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_coverage_tallies_partition_reps():
    rep = run_coverage(small_config())
    cell = rep.cells[0]
    for method, row in cell["methods"].items():
        total = row["n_cover"] + row["n_upper"] + row["n_lower"] + row["n_rejected"]
        assert total == 2000, method
        assert 0.7 < row["coverage"] < 1.0
        assert row["se_coverage"] > 0.0
        assert not row["rejected_warning"]
    assert cell["mu"] == 0.0  # bivariate normal covariate mean


def test_coverage_mu_override_and_composite_guard():
    rep = run_coverage(small_config(mu_true=0.0))
    assert rep.cells[0]["mu"] == 0.0
    mix = sw.composite(NORMAL, sw.bivariate_normal(nu=0.5, mu=1.0, rho=0.4), 0.5)
    with pytest.raises(InvalidConfig):
        run_coverage(small_config(models=(mix,)))


def test_coverage_workers_do_not_change_bytes():
    reports = [
        serialize_report(run_coverage(small_config(workers=w, reps=3000)))
        for w in (1, 4)
    ]
    assert reports[0] == reports[1]


def test_coverage_csv_layout():
    cfg = small_config(a_values=(6.0, 12.0))
    text = serialize_report(run_coverage(cfg), fmt="csv")
    lines = text.strip().split("\n")
    assert len(lines) == 1 + 3 * 3  # header + three rows per method
    header = lines[0].split(",")
    assert header[0] == "quantity"
    assert len(header) == 3  # two cells
    assert lines[1].startswith("coverage(anscombe),")
    assert lines[2].startswith("p_mu_ge_ucl(anscombe),")
    assert lines[3].startswith("p_mu_le_lcl(anscombe),")
    assert lines[4].startswith("coverage(corrected-zero-mu3),")


def test_report_json_round_trip():
    rep = run_coverage(small_config(reps=800))
    text = serialize_report(rep)
    parsed = json.loads(text)
    again = serialize_report(report_from_dict(parsed))
    assert text == again
    assert parsed["kind"] == "coverage-report"
    with pytest.raises(ValueError):
        report_from_dict({"kind": "mystery"})
    with pytest.raises(ValueError):
        serialize_report({"kind": "mystery"}, fmt="csv")
    with pytest.raises(ValueError):
        serialize_report(rep, fmt="yaml")


def test_cdf_compare_t0_and_t_agree_closely():
    cfg = small_config(reps=30_000, a_values=(10.0,))
    rep = run_cdf_compare(cfg)
    cell = rep.cells[0]
    assert cell["n_valid"] + cell["n_rejected"] == 30_000
    assert 0.0 <= cell["sup_t_vs_t0"] < 0.05
    # rho = .4 puts a ~.036 correction at c = 0; the expansion should
    # absorb most of it while the plain normal reference cannot
    assert cell["sup_gap_expansion"] < cell["sup_gap_normal"]
    rows = cell["rows"]
    assert [r["c"] for r in rows] == list(cfg.grid)
    for r in rows:
        assert abs(r["gap_expansion"]) <= abs(r["empirical"] - r["expansion"]) + 1e-15
        assert 0.0 <= r["empirical"] <= 1.0


def test_cdf_compare_w_statistic_path():
    cfg = small_config(reps=20_000, a_values=(10.0,), statistic="w", models=(EXP_SKEW,))
    rep = run_cdf_compare(cfg)
    cell = rep.cells[0]
    assert cell["statistic"] == "w"
    assert "sup_t_vs_t0" not in cell
    vals = [r["expansion"] for r in cell["rows"]]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert vals == sorted(vals)
    assert cell["sup_gap_expansion"] < 0.05


def test_identity_suite_through_harness():
    cfg = ExperimentConfig(
        models=(NORMAL, GAMMA), a_values=(5.0,), reps=20_000, seed=9, chunk_size=8192
    )
    suite = run_identity_checks(cfg)
    assert len(suite.reports) == 2
    exclude = ("cubic_transfer_mean_variant", "quadratic_transfer_mean_variant")
    for d in suite.reports:
        worst = max(
            abs(r["resid"]) for r in d["rows"] if r["name"] not in exclude
        )
        assert worst < 4.5, d["model"]["kind"]
    text = serialize_report(suite)
    assert serialize_report(report_from_dict(json.loads(text))) == text
    csv_text = serialize_report(suite, fmt="csv")
    assert csv_text.splitlines()[0].startswith("model,")


def test_renewal_check_counts_match_expected():
    cfg = ExperimentConfig(
        models=(GAMMA,), a_values=(15.0,), reps=4000, seed=13, chunk_size=1024, delta=1.0
    )
    rep = run_renewal_check(cfg)
    cell = rep.cells[0]
    assert cell["n"] + cell["n_rejected"] == 4000
    full = cell["boxes"][0]
    assert full["expected"] == pytest.approx(cfg.delta / 1.0, rel=1e-9)  # nu = 1
    assert abs(full["resid"]) < 4.5
    # sub-boxes nest inside the full count
    assert full["observed_mean"] >= max(b["observed_mean"] for b in cell["boxes"][1:])
    with pytest.raises(InvalidConfig):
        run_renewal_check(small_config())  # normal increments are not positive


def test_sign_check_prefers_plus_on_skewed_model():
    cfg = ExperimentConfig(
        models=(EXP_SKEW,), a_values=(12.0,), reps=60_000, seed=17, chunk_size=8192
    )
    rep = run_sign_check(cfg)
    cell = rep.cells[0]
    assert cell["preferred"] == "plus"
    assert cell["sup_z_plus"] + 1.0 <= cell["sup_z_minus"]
    assert cell["n"] + cell["n_rejected"] == 60_000


def test_sign_check_inconclusive_when_rho1_vanishes():
    # symmetric residual: rho_1 is identically zero, so the two sign
    # conventions predict the same box masses exactly
    cfg = ExperimentConfig(
        models=(EXP_SYM,), a_values=(10.0,), reps=20_000, seed=19, chunk_size=8192
    )
    rep = run_sign_check(cfg)
    cell = rep.cells[0]
    assert cell["preferred"] == "inconclusive"
    for row in cell["boxes"]:
        assert row["plus"] == pytest.approx(row["minus"], abs=1e-14)


def test_write_text_atomic(tmp_path):
    target = tmp_path / "out" / "report.json"
    target.parent.mkdir()
    write_text_atomic(str(target), "payload\n")
    assert target.read_text() == "payload\n"
    write_text_atomic(str(target), "second\n")
    assert target.read_text() == "second\n"
    assert list(target.parent.iterdir()) == [target]
