"""Command line: ``mtefree estimate | simulate | diagnose``.

Exit codes: 0 success, 2 configuration or input error, 3 estimation
failure, 4 strict diagnostics run whose nonlinearity checks all failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from mtefree import __version__
from mtefree.config import RunConfig
from mtefree.data import ColumnMap, Sample, load_csv
from mtefree.diagnostics import DEFAULT_TOLERANCE, cell_grid, curve_points, diagnose, find_cell, largest_cell
from mtefree.errors import ConfigError, DataError, EstimationError, MteError
from mtefree.inference import bootstrap
from mtefree.pipeline import estimate
from mtefree.propensity import fit_propensity, trim
from mtefree.report import write_csv, write_diagnostic_outputs, write_estimate_outputs, write_json
from mtefree.simulate import PRESETS, DgpSpec, generate

logger = logging.getLogger("mtefree")

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_DIAGNOSTICS = 0, 2, 3, 4


def canonical_order(s: Sample) -> Sample:
    """Rows sorted by (y, d, x) so every output ignores the input row order."""
    keys = [s.y, s.d] + [s.x_cont[:, j] for j in range(s.x_cont.shape[1])]
    keys += [s.x_disc[:, j] for j in range(s.x_disc.shape[1])]
    return s.take(np.lexsort(keys[::-1]))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_output(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {out} ({exc.strerror})") from None
    return out


def _diagnostic_fit(s, cfg: RunConfig):
    est = cfg.estimation
    fit = fit_propensity(
        s,
        est.propensity_kernel,
        cfg.diagnostics.bandwidth,
        leave_one_out=est.leave_one_out,
        min_cell_size=est.min_cell_size,
    )
    return trim(fit, est.trim_lower, est.trim_upper)


def _curve_design(fit, cfg: RunConfig):
    """Cell and evaluation points of the NL1 score curve, or None without continuous covariates."""
    if fit._x_cont.shape[1] == 0:
        return None
    dc = cfg.diagnostics
    cell = largest_cell(fit) if dc.cell is None else find_cell(fit, dc.cell)
    grid = cell_grid(fit, cell, dc.cont_index, dc.grid_size)
    return cell, curve_points(fit, cell, dc.cont_index, grid)


def _tolerance(cfg: RunConfig, boot):
    if cfg.diagnostics.tolerance is not None:
        return float(cfg.diagnostics.tolerance), "configured"
    if boot is not None and "nl1_curve" in boot.draws:
        return float(2.0 * np.median(boot.se("nl1_curve"))), "2 x bootstrap SE of the score curve"
    return DEFAULT_TOLERANCE, "fixed default"


def _require_input(cfg: RunConfig):
    if not cfg.input:
        raise ConfigError("no input file given", hint="pass --input or set 'input' in the config")
    if cfg.columns is None:
        raise ConfigError("no column mapping given", hint="pass --outcome/--treatment or set 'columns'")


def _metadata(cfg: RunConfig, s: Sample, fit, extra: dict) -> dict:
    return {
        "software": {"name": "mtefree", "version": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "config": cfg.to_dict(),
        "seed": int(cfg.seed),
        "input_sha256": _sha256(cfg.input) if cfg.input and Path(cfg.input).is_file() else None,
        "rows_used": int(s.n),
        "rows_dropped": int(s.info.get("rows_dropped", 0)),
        "trim_counts": {"lower": int(fit.trim_counts[0]), "upper": int(fit.trim_counts[1])},
        "support": [float(fit.support[0]), float(fit.support[1])],
        "dropped_cells": [list(c) for c in fit.dropped_cells],
        **extra,
    }


def run_estimate(cfg: RunConfig) -> int:
    _require_input(cfg)
    out = _prepare_output(cfg.output)
    s = canonical_order(load_csv(cfg.input, cfg.columns))
    est = estimate(s, cfg.estimation)
    dfit = _diagnostic_fit(s, cfg)
    design = _curve_design(dfit, cfg)

    boot = None
    if cfg.bootstrap:
        v = est.v

        def statistic(t):
            vec = estimate(t, cfg.estimation, v_grid=v).vector()
            if design is not None:
                tf = fit_propensity(t, cfg.estimation.propensity_kernel, cfg.diagnostics.bandwidth,
                                    min_cell_size=cfg.estimation.min_cell_size)
                vec["nl1_curve"] = tf.evaluate(*design[1])
            return vec

        boot = bootstrap(s, statistic, int(cfg.bootstrap), int(cfg.seed), threads=cfg.estimation.threads)

    tol, source = _tolerance(cfg, boot)
    dc = cfg.diagnostics
    report = diagnose(
        dfit, s.d,
        cell_key=dc.cell, cont_index=dc.cont_index, nl2_indices=dc.nl2_indices,
        grid_size=dc.grid_size, tolerance=tol, tolerance_source=source, arms=est.arms,
    )
    if not report.identified:
        logger.warning("no nonlinearity condition detected; coefficients may be unidentified")
    est.flags["identification_supported"] = report.identified
    bandwidths = {"propensity": est.propensity.bandwidths.tolist(), "diagnostics": dfit.bandwidths.tolist()}
    if est.arms is not None:
        for a in est.arms:
            bandwidths[f"arm{a.arm}"] = a.bandwidths
    if est.liv is not None:
        bandwidths["liv"] = est.liv.bandwidths
    meta = _metadata(
        cfg, s, est.propensity,
        {
            "bandwidths": bandwidths,
            "flags": {k: v for k, v in est.flags.items()},
            "bootstrap": {"requested": int(cfg.bootstrap), "successful": boot.successful if boot else 0,
                          "failed": list(boot.failed) if boot else []},
            "diagnostics_tolerance": tol,
        },
    )
    write_estimate_outputs(out, est, s, boot, report, meta, cfg.columns.outcome)
    print(f"wrote outputs to {out}")
    return EXIT_OK


def run_diagnose(cfg: RunConfig) -> int:
    _require_input(cfg)
    out = _prepare_output(cfg.output)
    s = canonical_order(load_csv(cfg.input, cfg.columns))
    dfit = _diagnostic_fit(s, cfg)
    boot = None
    design = _curve_design(dfit, cfg)
    if cfg.bootstrap and design is not None and cfg.diagnostics.tolerance is None:
        def statistic(t):
            tf = fit_propensity(t, cfg.estimation.propensity_kernel, cfg.diagnostics.bandwidth,
                                min_cell_size=cfg.estimation.min_cell_size)
            return {"nl1_curve": tf.evaluate(*design[1])}

        boot = bootstrap(s, statistic, int(cfg.bootstrap), int(cfg.seed), threads=cfg.estimation.threads)
    tol, source = _tolerance(cfg, boot)
    dc = cfg.diagnostics
    report = diagnose(
        dfit, s.d,
        cell_key=dc.cell, cont_index=dc.cont_index, nl2_indices=dc.nl2_indices,
        grid_size=dc.grid_size, tolerance=tol, tolerance_source=source,
    )
    meta = _metadata(cfg, s, dfit, {"bandwidths": {"diagnostics": dfit.bandwidths.tolist()}, "diagnostics_tolerance": tol})
    write_diagnostic_outputs(out, report, meta)
    sys.stdout.write(report.to_text())
    if dc.strict and not report.identified:
        print("no nonlinearity condition detected (strict mode)", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    return EXIT_OK


def run_simulate(spec: DgpSpec, output) -> int:
    out = _prepare_output(output)
    s, oracle = generate(spec)
    header = ["y", "d", *s.names]
    x = s.x
    kc = s.x_cont.shape[1]
    rows = []
    for i in range(s.n):
        rows.append([s.y[i], str(int(s.d[i]))] + [x[i, j] if j < kc else str(int(x[i, j])) for j in range(s.k)])
    write_csv(out / "sample.csv", header, rows)
    pi_bar = float(np.mean(spec.propensity(s.x_cont, s.x_disc)))
    preset = PRESETS[spec.preset]
    doc = {
        "spec": spec.to_dict(),
        "columns": ColumnMap("y", "d", preset.cont_names, preset.disc_names).to_dict(),
        "profile_rule": "population covariate means; pi_x is the sample mean of the true score",
        **oracle.to_dict(pi_x=pi_bar),
    }
    write_json(out / "oracle.json", doc)
    print(f"wrote {out / 'sample.csv'} and {out / 'oracle.json'}")
    return EXIT_OK


def _csv_list(raw):
    return [c.strip() for c in raw.split(",") if c.strip()] if raw else []


def _float_pair(raw):
    try:
        a, b = (float(v) for v in raw.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {raw!r}") from None
    return a, b


def _bandwidth(raw):
    try:
        return float(raw)
    except ValueError:
        return raw


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--input", help="input CSV with a header row")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--treatment", help="binary treatment column")
    p.add_argument("--continuous", help="comma-separated continuous covariate columns")
    p.add_argument("--discrete", help="comma-separated discrete covariate columns")
    p.add_argument("--treatment-labels", help="raw untreated,treated labels (default 0,1)")
    p.add_argument("--output", help="output directory")
    p.add_argument("--procedure", choices=["separate", "liv", "both"])
    p.add_argument("--second-step", choices=["semiparametric", "normal", "polynomial"])
    p.add_argument("--order", type=int, help="order J of the parametric second step")
    for step in ("propensity", "pairwise", "local-linear"):
        p.add_argument(f"--{step}-kernel", choices=["gaussian", "epanechnikov"])
        p.add_argument(f"--{step}-bandwidth", type=_bandwidth, help="rule name or a positive number")
    p.add_argument("--trim-lower", type=float)
    p.add_argument("--trim-upper", type=float)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--leave-one-out", action="store_true", default=None)
    p.add_argument("--min-cell-size", type=int)
    p.add_argument("--profile", action="append", metavar="NAME=VALUE", help="evaluation profile entry (repeatable)")
    p.add_argument("--late-window", type=_float_pair, metavar="V1,V2")
    p.add_argument("--bootstrap", type=int, metavar="B", help="bootstrap replications (0 = off)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--diag-cell", help="comma-separated discrete key of the diagnostics cell")
    p.add_argument("--diag-covariate", type=int, help="continuous covariate index for NL1")
    p.add_argument("--tolerance", type=float, help="diagnostics tolerance")
    p.add_argument("--strict", action="store_true", default=None, help="exit 4 when no nonlinearity condition is detected")


def config_from_args(args) -> RunConfig:
    raw = {}
    if args.config:
        raw = RunConfig.load(args.config).to_dict()
    cols = dict(raw.get("columns") or {})
    for flag, key in (("outcome", "outcome"), ("treatment", "treatment")):
        if getattr(args, flag) is not None:
            cols[key] = getattr(args, flag)
    if args.continuous is not None:
        cols["continuous"] = _csv_list(args.continuous)
    if args.discrete is not None:
        cols["discrete"] = _csv_list(args.discrete)
    if args.treatment_labels is not None:
        cols["treatment_labels"] = _csv_list(args.treatment_labels)
    if cols:
        raw["columns"] = cols
    simple = {
        "input": "input", "output": "output", "procedure": "procedure", "second_step": "second_step",
        "order": "order", "trim_lower": "trim_lower", "trim_upper": "trim_upper", "grid_size": "grid_size",
        "leave_one_out": "leave_one_out", "min_cell_size": "min_cell_size", "late_window": "late_window",
        "bootstrap": "bootstrap", "seed": "seed", "threads": "threads",
    }
    for step in ("propensity", "pairwise", "local_linear"):
        simple[f"{step}_kernel"] = f"{step}_kernel"
        simple[f"{step}_bandwidth"] = f"{step}_bandwidth"
    for attr, key in simple.items():
        val = getattr(args, attr)
        if val is not None:
            raw[key] = list(val) if isinstance(val, tuple) else val
    if args.profile:
        prof = dict(raw.get("profile") or {})
        for item in args.profile:
            name, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"profile entries look like NAME=VALUE, got {item!r}")
            try:
                prof[name.strip()] = float(val)
            except ValueError:
                raise ConfigError(f"profile value for {name!r} is not numeric: {val!r}") from None
        raw["profile"] = prof
    diag = dict(raw.get("diagnostics") or {})
    if args.diag_cell is not None:
        diag["cell"] = [int(v) for v in _csv_list(args.diag_cell)]
    if args.diag_covariate is not None:
        diag["cont_index"] = args.diag_covariate
    if args.tolerance is not None:
        diag["tolerance"] = args.tolerance
    if args.strict:
        diag["strict"] = True
    if diag:
        raw["diagnostics"] = diag
    return RunConfig.from_dict(raw)


def spec_from_args(args) -> DgpSpec:
    raw = {}
    if args.spec:
        path = Path(args.spec)
        if not path.is_file():
            raise ConfigError(f"spec file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec file is not valid JSON: {exc}") from None
    for key in ("preset", "n", "seed", "alpha0", "alpha1", "rho0", "rho1", "noise"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    for key in ("beta0", "beta1"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = [float(v) for v in _csv_list(val)]
    return DgpSpec.from_dict(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtefree", description="Marginal treatment effects without an instrument.")
    parser.add_argument("--version", action="version", version=f"mtefree {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("estimate", help="run the estimator and write all outputs"))
    _add_run_flags(sub.add_parser("diagnose", help="check the nonlinearity conditions only"))
    sim = sub.add_parser("simulate", help="draw a sample from a preset design with its oracle")
    sim.add_argument("--spec", help="JSON design file; flags override its values")
    sim.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
    sim.add_argument("--n", type=int)
    sim.add_argument("--seed", type=int)
    for key in ("alpha0", "alpha1", "rho0", "rho1", "noise"):
        sim.add_argument(f"--{key}", type=float)
    sim.add_argument("--beta0", help="comma-separated slopes, untreated")
    sim.add_argument("--beta1", help="comma-separated slopes, treated")
    sim.add_argument("--output", default="simulated", help="output directory")
    return parser


def _report_error(exc: MteError):
    module = getattr(exc, "module", None) or "mtefree"
    msg = f"error [{module}]: {exc}"
    hint = getattr(exc, "hint", None)
    if hint:
        msg += f" (hint: {hint})"
    print(msg, file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return run_simulate(spec_from_args(args), args.output)
        cfg = config_from_args(args)
        if args.command == "estimate":
            return run_estimate(cfg)
        return run_diagnose(cfg)
    except (ConfigError, DataError) as exc:
        _report_error(exc)
        return EXIT_CONFIG
    except EstimationError as exc:
        _report_error(exc)
        return EXIT_ESTIMATION
    except np.linalg.LinAlgError as exc:
        print(f"error [linear algebra]: {exc} (hint: check for collinear covariates)", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
