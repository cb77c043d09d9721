"""Command line front end.

Subcommands mirror the library entry points: simulate walks, run coverage /
cdf / identity / renewal / sign experiments, print moment sets, and evaluate
expansion formulas directly. Reports go to stdout or, with --out, to a file
written atomically; --figures additionally renders PNGs for report-producing
commands.

Exit codes: 0 success, 2 configuration or usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import InvalidConfig, StopwalkError
from .expansion import t0_cdf
from .harness import (
    ExperimentConfig,
    config_from_dict,
    run_cdf_compare,
    run_coverage,
    run_identity_checks,
    run_renewal_check,
    run_sign_check,
    serialize_report,
    table1_config,
    write_text_atomic,
)
from .models import analytic_moments, model_from_spec, sample_moments
from .walk import batch_stopped_sums


def _load_model_arg(text: str):
    """Inline JSON if the argument starts with '{', else a path to a JSON file."""
    try:
        if text.lstrip().startswith("{"):
            spec = json.loads(text)
        else:
            with open(text) as fh:
                spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig("model", f"cannot read model spec: {exc}") from exc
    try:
        return model_from_spec(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig("model", str(exc)) from exc


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _config_from_args(args, need_a: bool = True) -> ExperimentConfig:
    """Merge --config file contents with explicit flags (flags win)."""
    raw: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig("config", f"cannot read config file: {exc}") from exc
        if not isinstance(raw, dict):
            raise InvalidConfig("config", "config file must hold a JSON object")
    if getattr(args, "table1", False):
        base = table1_config()
        raw.setdefault("models", [m.describe() for m in base.models])
        raw.setdefault("a", list(base.a_values))
        raw.setdefault("seed", base.seed)
    if getattr(args, "model", None):
        raw["model"] = _load_model_arg(args.model).describe()
        raw.pop("models", None)
    for key in ("reps", "seed", "alpha", "workers", "chunk_size", "delta",
                "statistic", "ladder_reps", "max_steps"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    if getattr(args, "a", None) is not None:
        raw["a"] = args.a
    if getattr(args, "methods", None):
        raw["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "grid", None):
        raw["grid"] = _float_list(args.grid)
    if need_a and "a" not in raw and "a_values" not in raw:
        raise InvalidConfig("a", "a boundary level is required (use --a or a config file)")
    if need_a is False:
        raw.setdefault("a", [1.0])
    return config_from_dict(raw)


def _emit(args, report, plot_kind: bool = True) -> None:
    text = serialize_report(report, args.format)
    if args.out:
        write_text_atomic(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if getattr(args, "figures", None) and plot_kind:
        from .plots import render_report

        paths = render_report(report.to_dict(), args.figures)
        for p in paths:
            print(f"figure {p}")


def _add_common(sp, with_a: bool = True) -> None:
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--model", help="inline JSON model spec or path to one")
    if with_a:
        sp.add_argument("--a", type=_float_list, help="boundary level(s), comma separated")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--chunk-size", type=int, dest="chunk_size")
    sp.add_argument("--max-steps", type=int, dest="max_steps")
    sp.add_argument("--out", help="output path (written atomically)")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.add_argument("--figures", help="directory for rendered PNG figures")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stopwalk", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="sample stopped walks")
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("coverage", help="confidence interval coverage study")
    _add_common(sp)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--methods", help="comma separated method names")
    sp.add_argument("--table1", action="store_true",
                    help="use the built-in eight-cell study configuration")
    sp.set_defaults(func=cmd_coverage)

    sp = sub.add_parser("cdf", help="empirical cdf against the expansion")
    _add_common(sp)
    sp.add_argument("--statistic", choices=("t0", "t", "w"))
    sp.add_argument("--grid", help="comma separated evaluation points (--grid=-2,0,2)")
    sp.add_argument("--ladder-reps", type=int, dest="ladder_reps")
    sp.set_defaults(func=cmd_cdf)

    sp = sub.add_parser("identities", help="ladder and stopping identity residuals")
    _add_common(sp, with_a=False)
    sp.set_defaults(func=cmd_identities)

    sp = sub.add_parser("renewal", help="slab point counts against the renewal density")
    _add_common(sp)
    sp.add_argument("--delta", type=float)
    sp.set_defaults(func=cmd_renewal)

    sp = sub.add_parser("sign", help="discriminate the correction sign variants")
    _add_common(sp)
    sp.add_argument("--ladder-reps", type=int, dest="ladder_reps")
    sp.set_defaults(func=cmd_sign)

    sp = sub.add_parser("moments", help="print a model's moment set")
    sp.add_argument("--model", required=True)
    sp.add_argument("--empirical", type=int, metavar="N",
                    help="estimate from N simulated increments instead of closed forms")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--allow-singular", action="store_true")
    sp.add_argument("--out")
    sp.add_argument("--digits", type=int, default=6)
    sp.set_defaults(func=cmd_moments)

    sp = sub.add_parser("eval", help="evaluate expansion formulas at given arguments")
    sp.add_argument("--op", choices=("t0-cdf",), default="t0-cdf")
    sp.add_argument("--c", type=_float_list, required=True,
                    help="evaluation points; use --c=-1.6,0,1.6 for leading minus")
    sp.add_argument("--a", type=float, required=True)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--mu3", type=float, default=0.0)
    sp.add_argument("--sigma-xy", type=float, dest="sigma_xy", default=0.0)
    sp.add_argument("--moments-json", dest="moments_json",
                    help="read nu/sigma/mu3/sigma_xy from a moments payload")
    sp.add_argument("--digits", type=int, default=6)
    sp.set_defaults(func=cmd_eval)

    return p


def cmd_simulate(args) -> int:
    if not args.model:
        raise InvalidConfig("model", "simulate requires --model")
    model = _load_model_arg(args.model)
    if not args.a:
        raise InvalidConfig("a", "simulate requires --a")
    a = args.a[0]
    reps = args.reps or 100
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((args.seed or 0, 0))))
    sums = batch_stopped_sums(model, a, reps, rng, max_steps=args.max_steps, want_w_tau=True)
    rows = []
    for i in range(reps):
        if sums["failed"][i]:
            continue
        rows.append({
            "tau": int(sums["tau"][i]),
            "x_tau": float(sums["x_tau"][i]),
            "overshoot": float(sums["overshoot"][i]),
            "w_tau": [float(v) for v in sums["w_tau"][i]],
        })
    payload = {
        "kind": "walk-sample",
        "model": model.describe(),
        "a": a,
        "seed": args.seed or 0,
        "n_failed": int(np.count_nonzero(sums["failed"])),
        "rows": rows,
    }
    if args.format == "csv":
        m = model.dim_w
        lines = ["tau,x_tau,overshoot," + ",".join(f"w{k+1}" for k in range(m))]
        for r in rows:
            lines.append(",".join(
                [str(r["tau"]), repr(r["x_tau"]), repr(r["overshoot"])]
                + [repr(v) for v in r["w_tau"]]
            ))
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        write_text_atomic(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_coverage(args) -> int:
    config = _config_from_args(args)
    _emit(args, run_coverage(config))
    return 0


def cmd_cdf(args) -> int:
    config = _config_from_args(args)
    _emit(args, run_cdf_compare(config))
    return 0


def cmd_identities(args) -> int:
    config = _config_from_args(args, need_a=False)
    _emit(args, run_identity_checks(config))
    return 0


def cmd_renewal(args) -> int:
    config = _config_from_args(args)
    _emit(args, run_renewal_check(config))
    return 0


def cmd_sign(args) -> int:
    config = _config_from_args(args)
    _emit(args, run_sign_check(config))
    return 0


def cmd_moments(args) -> int:
    model = _load_model_arg(args.model)
    if args.empirical:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((args.seed, 7))))
        ms = sample_moments(model, args.empirical, rng, allow_singular=args.allow_singular)
    else:
        ms = analytic_moments(model, allow_singular=args.allow_singular)
    text = json.dumps(ms.to_dict(), indent=2) + "\n"
    if args.out:
        write_text_atomic(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    nu, sigma, mu3, sigma_xy = args.nu, args.sigma, args.mu3, args.sigma_xy
    if args.moments_json:
        try:
            with open(args.moments_json) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig("moments_json", str(exc)) from exc
        nu = payload["nu"] if nu is None else nu
        sigma = payload["sigma"] if sigma is None else sigma
        mu3 = payload.get("mu3", mu3)
        sigma_xy = payload.get("sigma_xy", sigma_xy)
    if nu is None or sigma is None:
        raise InvalidConfig("eval", "--nu and --sigma are required (or --moments-json)")
    vals = t0_cdf(np.asarray(args.c, dtype=float), args.a, nu, sigma, mu3, sigma_xy)
    for v in np.atleast_1d(vals):
        print(f"{round(float(v), args.digits):.{args.digits}g}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StopwalkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
