"""Command-line interface: simulate, power, fit, qq.

``simulate`` is driven by a JSON config (flag overrides win); the other
subcommands are flag-only.  Outputs are CSV/JSON with LF line endings and
shortest round-trip float formatting.  Exit codes: 0 success, 2 invalid
configuration or input, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, EstimationFailureError, GmmPowerError
from .gmm_estimator import fit_unrestricted
from .inference import ScalarEffect, power_curve
from .moments import build_moment_system
from .panel_model import (
    CovariateType,
    Hypothesis,
    ModelSpec,
    parse_regressor,
    read_panel_csv,
)
from .simulate import SimConfig, qq_points, run_experiment

_SIMULATE_KEYS = {
    "setting": str,
    "n": int,
    "T": int,
    "replications": int,
    "optimizer": str,
    "alpha": (int, float),
    "master_seed": int,
    "dm_weighting": str,
    "convention": str,
    "threads": int,
    "run_null": bool,
}
_OUTPUT_KEYS = {"directory": str}
_TYPE_NAMES = {
    "time-independent": CovariateType.TIME_INDEPENDENT,
    "I": CovariateType.TYPE_I,
    "II": CovariateType.TYPE_II,
    "III": CovariateType.TYPE_III,
}


def _fmt(x: float) -> str:
    return repr(float(x))


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _validate_section(section: dict, schema: dict, path: str) -> None:
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"unknown key {path}.{key}", path=f"{path}.{key}")
        expected = schema[key]
        ok = isinstance(value, expected)
        if isinstance(value, bool) and expected is not bool:
            ok = False  # bool is an int subclass; do not accept it for numbers
        if not ok:
            raise ConfigError(
                f"{path}.{key} has invalid type {type(value).__name__}",
                path=f"{path}.{key}",
            )


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in ("simulate", "output"):
            raise ConfigError(f"unknown key {key}", path=key)
    _validate_section(raw.get("simulate", {}), _SIMULATE_KEYS, "simulate")
    _validate_section(raw.get("output", {}), _OUTPUT_KEYS, "output")
    return raw


def _write_csv(path: Path, header: str, lines: list[str]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        raw = _load_config(args.config)
    except ConfigError as exc:
        return _fail(2, str(exc))
    section = dict(raw.get("simulate", {}))
    run_null = section.pop("run_null", True)
    overrides = {
        "setting": args.setting,
        "n": args.n,
        "replications": args.replications,
        "master_seed": args.seed,
        "optimizer": args.optimizer,
        "threads": args.threads,
        "dm_weighting": args.dm_weighting,
        "alpha": args.alpha,
    }
    for key, value in overrides.items():
        if value is not None:
            section[key] = value
    out_dir = Path(args.out or raw.get("output", {}).get("directory", "."))
    try:
        config = SimConfig(**section, null_variant=False)
    except GmmPowerError as exc:
        # parameter errors name the offending key relative to the config root
        return _fail(2, f"simulate.{exc}")
    except TypeError as exc:
        return _fail(2, f"simulate config: {exc}")

    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        alt = run_experiment(config)
        null = (
            run_experiment(SimConfig(**section, null_variant=True)) if run_null else None
        )
    except EstimationFailureError as exc:
        return _fail(3, str(exc))

    setting = config.setting.value
    row = [
        setting,
        str(config.n),
        _fmt(alt.theoretical_power),
        _fmt(alt.theoretical_size),
        _fmt(alt.wald_rejection),
        _fmt(null.wald_rejection) if null else "",
        _fmt(alt.dm_rejection),
        _fmt(null.dm_rejection) if null else "",
        str(alt.failed_replications + (null.failed_replications if null else 0)),
    ]
    _write_csv(
        out_dir / "sim_report.csv",
        "setting,n,theoretical_power,theoretical_size,wald_rejection,wald_type1,"
        "dm_rejection,dm_type1,failed",
        [",".join(row)],
    )
    stat_lines = []
    for report, variant in ((alt, "alternative"), (null, "null")):
        if report is None:
            continue
        for rec in report.records:
            stat_lines.append(
                f"{setting},{config.n},{variant},{rec.replication},"
                f"{_fmt(rec.wald)},{_fmt(rec.dm)},"
                f"{int(rec.wald_reject)},{int(rec.dm_reject)},{int(rec.converged)}"
            )
    _write_csv(
        out_dir / "statistics.csv",
        "setting,n,variant,replication,wald,dm,wald_reject,dm_reject,converged",
        stat_lines,
    )
    print(f"wrote {out_dir / 'sim_report.csv'} and {out_dir / 'statistics.csv'}")
    return 0


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


def cmd_power(args) -> int:
    try:
        grid = [int(v) for v in args.grid.split(",") if v.strip() != ""]
    except ValueError:
        return _fail(2, f"invalid --grid {args.grid!r}")
    if args.sigma2 is not None and args.sigma2 <= 0:
        return _fail(2, "--sigma2 must be > 0")
    try:
        report = power_curve(
            ScalarEffect(delta=args.effect, sigma2=args.sigma2),
            grid,
            alpha=args.alpha,
            df=args.df,
            convention=args.convention,
        )
    except GmmPowerError as exc:
        return _fail(2, str(exc))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "power.csv")
    print("n,ncp,power,convention")
    for row in report.rows:
        print(f"{row.n},{row.ncp:.4f},{row.power:.4f},{row.convention}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _model_from_json(path: str) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    for key in raw:
        if key not in ("regressors", "types", "hypothesis"):
            raise ConfigError(f"unknown key {key} in model config", path=key)
    regressors = [parse_regressor(text) for text in raw.get("regressors", [])]
    if not regressors:
        raise ConfigError("model config needs a non-empty 'regressors' list")
    types = {}
    for name, label in raw.get("types", {}).items():
        if label not in _TYPE_NAMES:
            raise ConfigError(
                f"types.{name} must be one of {sorted(_TYPE_NAMES)}", path=f"types.{name}"
            )
        types[name] = _TYPE_NAMES[label]
    hypothesis = None
    if "hypothesis" in raw:
        hyp = raw["hypothesis"]
        hypothesis = Hypothesis(H=np.asarray(hyp["H"], dtype=float),
                                h0=np.asarray(hyp["h0"], dtype=float))
    return ModelSpec(regressors=regressors, covariate_types=types, hypothesis=hypothesis)


def cmd_fit(args) -> int:
    try:
        data = read_panel_csv(args.data)
        spec = _model_from_json(args.model)
        spec.validate_against(data)
    except (GmmPowerError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        return _fail(2, str(exc))
    try:
        ms = build_moment_system(data, spec)
        fit = fit_unrestricted(ms, method=args.optimizer)
    except EstimationFailureError as exc:
        return _fail(3, str(exc))
    except GmmPowerError as exc:
        return _fail(2, str(exc))

    labels = [reg.label for reg in spec.regressors]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "coefficients": {lab: float(b) for lab, b in zip(labels, fit.beta_hat)},
        "v_diagonal": {lab: float(v) for lab, v in zip(labels, np.diag(fit.V_hat))},
        "q_value": float(fit.Q_value),
        "n_moments": ms.q,
        "n_parameters": ms.p,
        "n_subjects": ms.n,
        "converged": bool(fit.optimizer.converged),
        "weighting_regularized": bool(fit.s_regularized),
        "optimizer": {
            "method": fit.optimizer.method,
            "iterations": fit.optimizer.iterations,
            "gradient_norm": None
            if np.isnan(fit.optimizer.gradient_norm)
            else float(fit.optimizer.gradient_norm),
        },
    }
    with open(out / "fit.json", "w", newline="\n", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")

    width = max(12, max(len(lab) for lab in labels) + 2)
    print("Parameters  " + "".join(lab.rjust(width) for lab in labels))
    print("Coefficients" + "".join(f"{b:.5f}".rjust(width) for b in fit.beta_hat))
    print(f"(q={ms.q}, p={ms.p}, n={ms.n}, Q={fit.Q_value:.6g})")
    print(f"wrote {out / 'fit.json'}")
    return 0


# ---------------------------------------------------------------------------
# qq
# ---------------------------------------------------------------------------


def _read_statistics(path: str, column: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty statistics file")
    header = [h.strip() for h in lines[0].split(",")]
    try:
        float(header[0])
        # headerless single column
        if len(header) != 1:
            raise ConfigError(f"{path}: headerless input must have a single column")
        return np.array([float(ln.split(",")[0]) for ln in lines])
    except ValueError:
        pass
    if column not in header:
        raise ConfigError(f"{path}: no column named {column!r}")
    idx = header.index(column)
    values = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(header):
            raise ConfigError(f"{path}: line {lineno}: wrong field count")
        try:
            value = float(cells[idx])
        except ValueError:
            raise ConfigError(f"{path}: line {lineno}: bad value for {column!r}")
        if np.isfinite(value):
            values.append(value)
    return np.array(values)


def cmd_qq(args) -> int:
    try:
        stats = _read_statistics(args.stats, args.column)
        if args.ncp < 0:
            return _fail(2, "--ncp must be non-negative")
        points = qq_points(stats, args.df, args.ncp)
    except (GmmPowerError, FileNotFoundError) as exc:
        return _fail(2, str(exc))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    m = points.shape[0]
    probs = (np.arange(1, m + 1) - 0.5) / m
    _write_csv(
        out / "qq.csv",
        "prob,theoretical,empirical",
        [f"{_fmt(p)},{_fmt(t)},{_fmt(e)}" for p, (t, e) in zip(probs, points)],
    )
    print(f"wrote {out / 'qq.csv'} ({m} points)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmmpower",
        description="GMM estimation and power analysis for longitudinal models "
        "with time-dependent covariates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo rejection-rate experiment")
    sim.add_argument("--config", help="JSON config file (simulate/output sections)")
    sim.add_argument("--setting", choices=["type2", "type3"], help="covariate class")
    sim.add_argument("--n", type=int, help="subjects per replication")
    sim.add_argument("--replications", type=int, help="Monte Carlo replications")
    sim.add_argument("--seed", type=int, help="master seed")
    sim.add_argument("--optimizer", choices=["bfgs", "nelder-mead"], help="minimizer")
    sim.add_argument("--threads", type=int, help="worker threads")
    sim.add_argument("--dm-weighting", choices=["shared", "own"], dest="dm_weighting",
                     help="restricted-fit weighting protocol")
    sim.add_argument("--alpha", type=float, help="test level")
    sim.add_argument("--out", help="output directory")
    sim.set_defaults(func=cmd_simulate)

    pw = sub.add_parser("power", help="theoretical power over a sample-size grid")
    pw.add_argument("--df", type=int, default=1, help="degrees of freedom (rank of H)")
    pw.add_argument("--alpha", type=float, default=0.05, help="test level")
    pw.add_argument("--grid", required=True, help="comma-separated sample sizes")
    pw.add_argument("--effect", type=float, required=True, help="coefficient difference")
    pw.add_argument("--sigma2", type=float, required=True,
                    help="asymptotic variance of sqrt(n) beta_j")
    pw.add_argument("--convention", choices=["standard", "half"], default="standard",
                    help="noncentrality convention")
    pw.add_argument("--out", help="output directory")
    pw.set_defaults(func=cmd_power)

    fit = sub.add_parser("fit", help="fit a GMM model to a long-format panel CSV")
    fit.add_argument("--data", required=True, help="panel CSV path")
    fit.add_argument("--model", required=True, help="model config JSON")
    fit.add_argument("--optimizer", choices=["bfgs", "nelder-mead"], default="bfgs")
    fit.add_argument("--out", help="output directory")
    fit.set_defaults(func=cmd_fit)

    qq = sub.add_parser("qq", help="QQ data for test statistics vs chi-square(ncp)")
    qq.add_argument("--stats", required=True, help="statistics CSV")
    qq.add_argument("--column", default="wald", help="column to read (default wald)")
    qq.add_argument("--df", type=int, required=True, help="degrees of freedom")
    qq.add_argument("--ncp", type=float, required=True, help="noncentrality parameter")
    qq.add_argument("--out", help="output directory")
    qq.set_defaults(func=cmd_qq)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GmmPowerError as exc:
        return _fail(2, str(exc))


if __name__ == "__main__":
    sys.exit(main())
