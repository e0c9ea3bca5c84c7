"""Writers for the estimate run's CSV, JSON and text outputs.

Every file schema is documented in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from mtefree.inference import BootstrapResult
from mtefree.pipeline import Estimates

PARAMS = ("ATE", "TT", "TUT", "LATE")
TABLE_PARAMS = ("ATE", "TT", "TUT")


def _num(v):
    if v is None:
        return ""
    v = float(v)
    return "" if not np.isfinite(v) else repr(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _num(c) for c in row])


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


class _Se:
    """Bootstrap SE and interval lookup that degrades to blanks without draws."""

    def __init__(self, boot: Optional[BootstrapResult]):
        self.boot = boot

    def se(self, name, shape):
        if self.boot is None or name not in self.boot.draws:
            return np.full(shape, np.nan)
        return np.asarray(self.boot.se(name), dtype=float).reshape(shape)

    def ci(self, name, shape):
        if self.boot is None or name not in self.boot.draws:
            nan = np.full(shape, np.nan)
            return nan, nan
        lo, hi = self.boot.ci(name)
        return np.asarray(lo).reshape(shape), np.asarray(hi).reshape(shape)


def table_source(est: Estimates):
    """``(prefix, beta0, beta1, delta, summary)`` used for the coefficient table.

    The separate procedure feeds the table when it ran; otherwise the
    adapted-LIV fit does.
    """
    if est.arms is not None:
        b0, b1 = est.arms[0].beta, est.arms[1].beta
        return "", b0, b1, b1 - b0, est.summary
    lf = est.liv
    return "liv_", lf.beta0, lf.beta0 + lf.delta, lf.delta, est.summary_liv


def coefficient_rows(est: Estimates, names, boot: Optional[BootstrapResult]):
    """Rows of (term, treated, se, untreated, se, difference, se)."""
    se = _Se(boot)
    prefix, b0, b1, delta, summary = table_source(est)
    k = len(names)
    s1, s0, sd = se.se(prefix + "beta1", k), se.se(prefix + "beta0", k), se.se(prefix + "delta", k)
    rows = [(names[i], b1[i], s1[i], b0[i], s0[i], delta[i], sd[i]) for i in range(k)]
    vals = summary.as_dict()
    sp = se.se(prefix + "params", len(PARAMS))
    for i, name in enumerate(PARAMS):
        rows.append((name, None, None, None, None, vals[name], sp[i]))
    return rows


def _stars(est, se):
    if se is None or not np.isfinite(se) or se <= 0:
        return ""
    z = abs(est / se)
    return "***" if z > 2.5758 else "**" if z > 1.9600 else "*" if z > 1.6449 else ""


def coefficient_table(rows, n, outcome, replications) -> str:
    """Plain-text table: one estimate line and one parenthesized SE line per term."""
    rows = [r for r in rows if r[0] not in PARAMS or r[0] in TABLE_PARAMS]
    width = max(12, max(len(r[0]) for r in rows) + 2)
    col = 14

    def cell(v, se, paren=False):
        if v is None:
            return " " * col
        if paren:
            txt = f"({v:.3f})" if v is not None and np.isfinite(v) else "(n/a)"
        else:
            txt = f"{v:.3f}{_stars(v, se)}"
        return txt.rjust(col)

    lines = [f"Outcome equation coefficients ({outcome})"]
    lines.append(" " * width + "".join(h.rjust(col) for h in ("Treated", "Untreated", "Difference")))
    lines.append(" " * width + "".join(h.rjust(col) for h in ("(1)", "(2)", "(3)")))
    rule = "-" * (width + 3 * col)
    lines.append(rule)
    for term, b1, s1, b0, s0, dd, sd in rows:
        lines.append(term.ljust(width) + cell(b1, s1) + cell(b0, s0) + cell(dd, sd))
        lines.append(" " * width + cell(s1, None, True) + cell(s0, None, True) + cell(sd, None, True))
    lines.append(rule)
    lines.append("Sample size".ljust(width) + str(n).rjust(col))
    lines.append(rule)
    if replications:
        lines.append(f"Bootstrapped standard errors from {replications} replications in parentheses.")
    else:
        lines.append("Standard errors not computed (bootstrap off).")
    lines.append("* significant at 10%, ** at 5%, *** at 1% (normal approximation).")
    return "\n".join(lines) + "\n"


def write_estimate_outputs(out: Path, est: Estimates, sample, boot, report, extra_meta: dict, outcome: str):
    """Write every estimate-run file into ``out``; returns the list of paths."""
    out = Path(out)
    written = []

    def path(name):
        p = out / name
        written.append(p)
        return p

    se = _Se(boot)
    v = est.v
    m = v.size
    names = list(sample.names)

    rows = coefficient_rows(est, names, boot)
    write_csv(
        path("coefficients.csv"),
        ["term", "treated", "treated_se", "untreated", "untreated_se", "difference", "difference_se"],
        rows,
    )
    reps = boot.successful if boot is not None else 0
    path("coefficients_table.txt").write_text(coefficient_table(rows, sample.n, outcome, reps))

    curves = []
    if est.mte is not None:
        curves.append(("mte_curve.csv", est.mte, "mte"))
    if est.mte_liv is not None:
        curves.append(("mte_curve_liv.csv" if est.mte is not None else "mte_curve.csv", est.mte_liv, "mte_liv"))
    for fname, curve, key in curves:
        lo, hi = se.ci(key, m)
        write_csv(
            path(fname),
            ["v", "estimate", "ci_lo", "ci_hi", "extrapolated"],
            [(v[i], curve.values[i], lo[i], hi[i], str(int(curve.flagged[i]))) for i in range(m)],
        )
    if est.mte is not None and est.mte_liv is not None:
        write_csv(
            path("mte_comparison.csv"),
            ["v", "separate", "liv", "difference"],
            [(v[i], est.mte.values[i], est.mte_liv.values[i], est.mte.values[i] - est.mte_liv.values[i]) for i in range(m)],
        )

    if est.arms is not None:
        a0, a1 = est.arms
        g0, d0, _ = a0.evaluate(v)
        g1, d1, _ = a1.evaluate(v)
        write_csv(
            path("g_curves.csv"),
            ["p", "g0", "g0_deriv", "g1", "g1_deriv"],
            [(v[i], g0[i], d0[i], g1[i], d1[i]) for i in range(m)],
        )
        s0, s1 = est.structural
        l0, h0 = se.ci("structural0", m)
        l1, h1 = se.ci("structural1", m)
        write_csv(
            path("structural_curves.csv"),
            ["v", "untreated", "untreated_ci_lo", "untreated_ci_hi", "treated", "treated_ci_lo", "treated_ci_hi"],
            [(v[i], s0[i], l0[i], h0[i], s1[i], l1[i], h1[i]) for i in range(m)],
        )
        prob, mean_y = est.response
        lp, hp = se.ci("prob_d", m)
        ly, hy = se.ci("mean_y", m)
        write_csv(
            path("response_curves.csv"),
            ["v", "prob_treated", "prob_ci_lo", "prob_ci_hi", "mean_outcome", "mean_ci_lo", "mean_ci_hi"],
            [(v[i], prob[i], lp[i], hp[i], mean_y[i], ly[i], hy[i]) for i in range(m)],
        )

    if est.liv is not None:
        lf = est.liv
        r, q1, _ = lf.evaluate(v)
        write_csv(path("liv_curves.csv"), ["p", "r", "r_deriv"], [(v[i], r[i], q1[i]) for i in range(m)])
        k = len(names)
        sb, sd = se.se("liv_beta0", k), se.se("liv_delta", k)
        write_csv(
            path("liv_delta.csv"),
            ["term", "beta0", "beta0_se", "delta", "delta_se"],
            [(names[i], lf.beta0[i], sb[i], lf.delta[i], sd[i]) for i in range(k)],
        )

    edges, c1, c0 = est.propensity.histogram(sample.d)
    write_csv(
        path("score_histogram.csv"),
        ["bin", "bin_lo", "bin_hi", "count_treated", "count_untreated"],
        [(str(i), edges[i], edges[i + 1], str(int(c1[i])), str(int(c0[i]))) for i in range(len(c1))],
    )

    summary = {"n": sample.n, "profile": dict(zip(names, map(float, est.profile))), "pi_x": est.pi_x}
    for label, s, prefix in (("separate", est.summary, ""), ("liv", est.summary_liv, "liv_")):
        if s is None:
            continue
        block = s.as_dict()
        ses = se.se(prefix + "params", len(PARAMS))
        lo, hi = se.ci(prefix + "params", len(PARAMS))
        block["se"] = {p: _maybe(ses[i]) for i, p in enumerate(PARAMS)}
        block["ci90"] = {p: [_maybe(lo[i]), _maybe(hi[i])] for i, p in enumerate(PARAMS)}
        summary[label] = block
    summary["bootstrap"] = {
        "requested": boot.replications if boot else 0,
        "successful": boot.successful if boot else 0,
        "failed": list(boot.failed) if boot else [],
    }
    write_json(path("summary.json"), summary)

    if report is not None:
        write_json(path("diagnostics.json"), report.to_dict())
        path("diagnostics.txt").write_text(report.to_text())
        if report.nl1 is not None:
            x, p = report.nl1.curve
            write_csv(path("nl1_curve.csv"), ["x", "score"], list(zip(x, p)))

    write_json(path("metadata.json"), extra_meta)
    return written


def _maybe(v):
    v = float(v)
    return v if np.isfinite(v) else None


def write_diagnostic_outputs(out: Path, report, meta: dict):
    out = Path(out)
    write_json(out / "diagnostics.json", report.to_dict())
    (out / "diagnostics.txt").write_text(report.to_text())
    paths = [out / "diagnostics.json", out / "diagnostics.txt"]
    if report.nl1 is not None:
        x, p = report.nl1.curve
        write_csv(out / "nl1_curve.csv", ["x", "score"], list(zip(x, p)))
        paths.append(out / "nl1_curve.csv")
    write_json(out / "metadata.json", meta)
    paths.append(out / "metadata.json")
    return paths
