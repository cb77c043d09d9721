"""Render report payloads to PNG files.

Every function takes a report dict (the to_dict form), draws with the Agg
backend, saves under the given directory, and returns the file paths. No
figure is ever shown interactively.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import _model_label


def _ensure_dir(outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)


def plot_coverage(report: dict, outdir: str) -> list[str]:
    """One panel per quantity; methods as lines over the experiment cells."""
    _ensure_dir(outdir)
    cells = report["cells"]
    methods = report["config"]["methods"]
    labels = [f"a={c['a']:g}\n{_model_label(c['model'])}" for c in cells]
    xs = np.arange(len(cells))
    alpha = report["config"]["alpha"]
    fig, axes = plt.subplots(3, 1, figsize=(1.6 + 1.1 * len(cells), 9.0), sharex=True)
    panels = (
        ("coverage", "coverage", 1.0 - 2 * alpha),
        ("p_upper", "P(mu above interval)", alpha),
        ("p_lower", "P(mu below interval)", alpha),
    )
    for ax, (key, title, target) in zip(axes, panels):
        se_key = "se_coverage" if key == "coverage" else "se_" + key.removeprefix("p_")
        for method in methods:
            ys = [c["methods"][method][key] for c in cells]
            es = [c["methods"][method][se_key] for c in cells]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=method)
        ax.axhline(target, color="gray", linestyle="--", linewidth=1)
        ax.set_ylabel(title)
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="best", fontsize=8)
    axes[-1].set_xticks(xs)
    axes[-1].set_xticklabels(labels, fontsize=7)
    fig.tight_layout()
    path = os.path.join(outdir, "coverage.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return [path]


def plot_cdf(report: dict, outdir: str) -> list[str]:
    """Gap curves (empirical minus reference) with pointwise 2-se bands."""
    _ensure_dir(outdir)
    paths = []
    for i, cell in enumerate(report["cells"]):
        grid = [r["c"] for r in cell["rows"]]
        gap_n = [r["gap_normal"] for r in cell["rows"]]
        gap_e = [r["gap_expansion"] for r in cell["rows"]]
        band = [2.0 * r["se"] for r in cell["rows"]]
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        ax.axhline(0.0, color="gray", linewidth=1)
        ax.fill_between(grid, [-b for b in band], band, color="gray", alpha=0.2,
                        label="2 se band")
        ax.plot(grid, gap_n, marker="o", label="empirical - normal")
        ax.plot(grid, gap_e, marker="s", label="empirical - expansion")
        ax.set_xlabel("grid point")
        ax.set_ylabel("cdf gap")
        ax.set_title(f"{cell['statistic']} at a={cell['a']:g}, {_model_label(cell['model'])}",
                     fontsize=9)
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(outdir, f"cdf-cell{i}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_identities(report: dict, outdir: str) -> list[str]:
    """Residual bars per identity row with the 4-sigma acceptance band."""
    _ensure_dir(outdir)
    paths = []
    for i, rep in enumerate(report["reports"]):
        names = [r["name"] for r in rep["rows"]]
        resid = [r["resid"] for r in rep["rows"]]
        fig, ax = plt.subplots(figsize=(max(6.0, 0.32 * len(names)), 4.4))
        ax.bar(range(len(names)), resid, color="steelblue")
        ax.axhline(4.0, color="red", linestyle="--", linewidth=1)
        ax.axhline(-4.0, color="red", linestyle="--", linewidth=1)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=80, fontsize=6)
        ax.set_ylabel("studentized residual")
        ax.set_title(_model_label(rep.get("model", {})), fontsize=9)
        fig.tight_layout()
        path = os.path.join(outdir, f"identities-model{i}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_renewal(report: dict, outdir: str) -> list[str]:
    _ensure_dir(outdir)
    paths = []
    for i, cell in enumerate(report["cells"]):
        n = len(cell["boxes"])
        xs = np.arange(n)
        obs = [r["observed_mean"] for r in cell["boxes"]]
        exp_ = [r["expected"] for r in cell["boxes"]]
        err = [2.0 * r["se"] for r in cell["boxes"]]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.errorbar(xs - 0.08, obs, yerr=err, fmt="o", label="observed")
        ax.plot(xs + 0.08, exp_, "s", color="darkorange", label="expected")
        ax.set_xticks(xs)
        ax.set_xticklabels([f"box {k}" for k in range(n)], fontsize=8)
        ax.set_ylabel("mean points in slab")
        ax.set_title(f"a={cell['a']:g}, delta={cell['delta']:g}, "
                     f"{_model_label(cell['model'])}", fontsize=9)
        ax.legend(fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(outdir, f"renewal-cell{i}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_sign(report: dict, outdir: str) -> list[str]:
    _ensure_dir(outdir)
    paths = []
    for i, cell in enumerate(report["cells"]):
        n = len(cell["boxes"])
        xs = np.arange(n)
        zp = [abs(r["z_plus"]) for r in cell["boxes"]]
        zm = [abs(r["z_minus"]) for r in cell["boxes"]]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.bar(xs - 0.18, zp, width=0.36, label="|z| plus")
        ax.bar(xs + 0.18, zm, width=0.36, label="|z| minus")
        ax.axhline(4.0, color="red", linestyle="--", linewidth=1)
        ax.set_xticks(xs)
        ax.set_xticklabels([f"box {k}" for k in range(n)], fontsize=8)
        ax.set_ylabel("|studentized gap|")
        ax.set_title(f"preferred: {cell['preferred']} "
                     f"({_model_label(cell['model'])}, a={cell['a']:g})", fontsize=9)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(outdir, f"sign-cell{i}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


PLOTTERS = {
    "coverage-report": plot_coverage,
    "cdf-report": plot_cdf,
    "identity-suite": plot_identities,
    "renewal-report": plot_renewal,
    "sign-report": plot_sign,
}


def render_report(report: dict, outdir: str) -> list[str]:
    """Dispatch on the payload kind; returns the saved figure paths."""
    plotter = PLOTTERS.get(report.get("kind"))
    if plotter is None:
        raise ValueError(f"no figures defined for report kind {report.get('kind')!r}")
    return plotter(report, outdir)
