"""Empirical checks of the nonlinearity conditions that replace an instrument.

All checks read the fitted score function inside one discrete cell and never
modify the fit. Findings carry witnesses so a user can see *why* a
condition was judged to hold.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from mtefree.data import Cell, Sample, split_cells
from mtefree.errors import EstimationError
from mtefree.propensity import PropensityFit
from mtefree.separate import local_linear
from mtefree.smoothing import Kernel, kernel_eval, rule_of_thumb

DEFAULT_TOLERANCE = 0.02
_MIN_CELL = 10


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def largest_cell(fit: PropensityFit) -> Cell:
    """The discrete cell with the most fitted rows (ties go to the smaller key)."""
    cells = _cells(fit)
    best = max(cells, key=lambda c: (int(np.isfinite(fit.scores[c.rows]).sum()), [-v for v in c.key]))
    return best


def find_cell(fit: PropensityFit, key) -> Cell:
    key = tuple(int(v) for v in key)
    for c in _cells(fit):
        if c.key == key:
            return c
    raise EstimationError(f"insufficient data in cell: no rows with discrete key {key}", module="diagnostics")


def _cells(fit):
    n = fit.scores.shape[0]
    stub = Sample(np.zeros(n), np.zeros(n, dtype=np.int8), fit._x_cont, fit._x_disc)
    return split_cells(stub)


def _cell_rows(fit, cell, min_size=_MIN_CELL):
    rows = cell.rows[np.isfinite(fit.scores[cell.rows])]
    if rows.size < min_size:
        raise EstimationError(
            f"insufficient data in cell {cell.key}: {rows.size} fitted rows",
            module="diagnostics",
            hint="choose a larger cell with the diagnostics 'cell' setting",
        )
    return rows


def curve_points(fit, cell, cont_index, grid):
    """Evaluation points along covariate ``cont_index``, others at cell means.

    Returns ``(x_cont, x_disc)`` ready for ``PropensityFit.evaluate``.
    """
    xc = fit._x_cont[_cell_rows(fit, cell)]
    pts = np.repeat(xc.mean(axis=0)[None, :], grid.size, axis=0)
    pts[:, cont_index] = grid
    key = np.repeat(np.array(cell.key, dtype=np.int64)[None, :], grid.size, axis=0)
    return pts, key.reshape(grid.size, -1)


def _score_curve(fit, cell, cont_index, grid):
    return fit.evaluate(*curve_points(fit, cell, cont_index, grid))


def cell_grid(fit, cell, cont_index, grid_size=200):
    """Grid over the 5-95% range of one covariate inside ``cell``."""
    xc = fit._x_cont[_cell_rows(fit, cell), cont_index]
    lo, hi = np.quantile(xc, [0.05, 0.95])
    if not hi > lo:
        raise EstimationError(
            f"insufficient data in cell {cell.key}: covariate {cont_index} does not vary",
            module="diagnostics",
        )
    return np.linspace(lo, hi, grid_size)


@dataclass
class Nl1Finding:
    """Level-matched pair search along one continuous covariate.

    ``curve`` holds ``(x, score)`` on the grid for plotting.
    """

    detected: bool
    cell: tuple
    cont_index: int
    tolerance: float
    witness: Optional[tuple] = None
    witness_scores: Optional[tuple] = None
    score_gap: Optional[float] = None
    extremum: Optional[float] = None
    triple_product: Optional[float] = None
    annotation: str = ""
    curve: tuple = field(default=None, repr=False)

    def to_dict(self):
        out = asdict(self)
        out.pop("curve")
        return _jsonable(out)


def _turning_point(p):
    """Most negative ``(p[b]-p[a]) (p[c]-p[b])`` over a < b < c.

    Returns ``(product, b, kind)`` where kind is ``"max"`` (rise then fall)
    or ``"min"`` (fall then rise), or ``(0.0, None, None)`` when no triple
    turns.
    """
    m = p.size
    best = (0.0, None, None)
    if m < 3:
        return best
    run_min = np.minimum.accumulate(p)
    run_max = np.maximum.accumulate(p)
    rev_min = np.minimum.accumulate(p[::-1])[::-1]
    rev_max = np.maximum.accumulate(p[::-1])[::-1]
    b = np.arange(1, m - 1)
    rise_fall = (p[b] - run_min[b - 1]) * (rev_min[b + 1] - p[b])
    fall_rise = (p[b] - run_max[b - 1]) * (rev_max[b + 1] - p[b])
    i, j = int(np.argmin(rise_fall)), int(np.argmin(fall_rise))
    if min(rise_fall[i], fall_rise[j]) >= 0:
        return best
    if rise_fall[i] <= fall_rise[j]:
        return float(rise_fall[i]), int(b[i]), "max"
    return float(fall_rise[j]), int(b[j]), "min"


def _level_pair(grid, p, b):
    """Closest-score pair with one point on each side of index ``b``."""
    left, right = p[:b], p[b + 1 :]
    gap = np.abs(left[:, None] - right[None, :])
    i, j = np.unravel_index(int(np.argmin(gap)), gap.shape)
    return i, b + 1 + j, float(gap[i, j])


def check_nl1(
    fit: PropensityFit,
    cell: Optional[Cell] = None,
    cont_index: int = 0,
    grid_size: int = 200,
    tolerance: float = DEFAULT_TOLERANCE,
) -> Nl1Finding:
    """Look for two covariate values with the same score.

    The score function is evaluated on a grid over the 5-95% range of the
    covariate inside ``cell`` (the largest cell by default), other
    continuous covariates held at their cell means. Detection needs a
    rise-then-fall or fall-then-rise pattern larger than ``tolerance`` and a
    witness pair on either side of the turning point whose scores differ by
    at most ``tolerance``.
    """
    cell = largest_cell(fit) if cell is None else cell
    grid = cell_grid(fit, cell, cont_index, grid_size)
    p = _score_curve(fit, cell, cont_index, grid)
    base = dict(cell=cell.key, cont_index=cont_index, tolerance=float(tolerance), curve=(grid, p))
    if p.max() - p.min() <= tolerance:
        return Nl1Finding(
            True,
            witness=(float(grid[0]), float(grid[-1])),
            witness_scores=(float(p[0]), float(p[-1])),
            score_gap=float(abs(p[0] - p[-1])),
            annotation="degenerate: constant score",
            **base,
        )
    prod, b, kind = _turning_point(p)
    if b is None or prod >= -tolerance**2:
        return Nl1Finding(False, triple_product=prod, annotation="monotone on the grid", **base)
    i, j, gap = _level_pair(grid, p, b)
    detected = gap <= tolerance
    return Nl1Finding(
        detected,
        witness=(float(grid[i]), float(grid[j])),
        witness_scores=(float(p[i]), float(p[j])),
        score_gap=gap,
        extremum=float(grid[b]),
        triple_product=prod,
        annotation=f"interior {'maximum' if kind == 'max' else 'minimum'}"
        + ("" if detected else "; no level-matched pair within tolerance"),
        **base,
    )


@dataclass
class StationaryFinding:
    """Zero of the score slope along one continuous covariate."""

    detected: bool
    cell: tuple
    cont_index: int
    tolerance: float
    location: Optional[float] = None
    min_abs_slope: Optional[float] = None
    max_abs_slope: Optional[float] = None
    sign_change: bool = False
    annotation: str = ""
    curve: tuple = field(default=None, repr=False)

    def to_dict(self):
        out = asdict(self)
        out.pop("curve")
        return _jsonable(out)


def _slope_bandwidth(fit, x, index):
    if fit.bandwidths is not None and len(fit.bandwidths) > index:
        return float(fit.bandwidths[index])
    return rule_of_thumb(x)


def check_stationary(
    fit: PropensityFit,
    cell: Optional[Cell] = None,
    cont_index: int = 0,
    grid_size: int = 200,
    tolerance: float = DEFAULT_TOLERANCE,
    h: Optional[float] = None,
) -> StationaryFinding:
    """Search for a point where the score slope in one covariate is zero.

    Slopes come from a univariate local-linear regression of the fitted
    scores on the covariate within the cell. A sign change, or a slope
    within ``tolerance`` of zero, counts as a stationary point.
    """
    cell = largest_cell(fit) if cell is None else cell
    rows = _cell_rows(fit, cell)
    x = fit._x_cont[rows, cont_index]
    grid = cell_grid(fit, cell, cont_index, grid_size)
    h = _slope_bandwidth(fit, x, cont_index) if h is None else float(h)
    _, slope, singular = local_linear(x, fit.scores[rows], grid, Kernel.GAUSSIAN, h)
    ok = ~singular
    g, sl = grid[ok], slope[ok]
    base = dict(cell=cell.key, cont_index=cont_index, tolerance=float(tolerance), curve=(grid, slope))
    if sl.size == 0:
        return StationaryFinding(False, annotation="slope not estimable", **base)
    absl = np.abs(sl)
    stats = dict(min_abs_slope=float(absl.min()), max_abs_slope=float(absl.max()))
    if absl.max() <= tolerance:
        return StationaryFinding(
            True, location=float(g[0]), annotation="degenerate: constant score", **stats, **base
        )
    cross = np.flatnonzero(np.sign(sl[:-1]) * np.sign(sl[1:]) < 0)
    if cross.size:
        k = int(cross[np.argmin(np.minimum(absl[cross], absl[cross + 1]))])
        t = sl[k] / (sl[k] - sl[k + 1])
        loc = float(g[k] + t * (g[k + 1] - g[k]))
        return StationaryFinding(True, location=loc, sign_change=True, annotation="slope changes sign", **stats, **base)
    k = int(np.argmin(absl))
    detected = bool(absl[k] <= tolerance)
    return StationaryFinding(
        detected,
        location=float(g[k]),
        annotation="slope touches zero" if detected else "slope bounded away from zero",
        **stats,
        **base,
    )


@dataclass
class Nl2Finding:
    """Gradient-ratio comparison at two points for a covariate pair (k, j)."""

    detected: bool
    cell: tuple
    indices: tuple
    tolerance: float
    points: tuple = ()
    gradients: tuple = ()
    ratios: tuple = ()
    ratio_difference: Optional[float] = None
    clauses: dict = field(default_factory=dict)
    annotation: str = ""

    def to_dict(self):
        return _jsonable(asdict(self))


def local_gradient(x, y, point, h, kernel=Kernel.GAUSSIAN):
    """Multivariate local-linear gradient of ``y`` on ``x`` at ``point``.

    Product kernel with per-column bandwidths ``h``. Returns NaNs when the
    weighted design is singular.
    """
    x = np.asarray(x, dtype=float)
    u = x - np.asarray(point, dtype=float)[None, :]
    w = np.ones(x.shape[0])
    for l in range(x.shape[1]):
        w *= kernel_eval(kernel, u[:, l] / h[l])
    z = np.hstack([np.ones((x.shape[0], 1)), u])
    zw = z * w[:, None]
    a = zw.T @ z
    ev = np.linalg.eigvalsh(a)
    if ev[-1] <= 0 or ev[0] <= 1e-12 * ev[-1]:
        return np.full(x.shape[1], np.nan)
    return np.linalg.solve(a, zw.T @ np.asarray(y, dtype=float))[1:]


def default_nl2_points(fit, cell, indices):
    """Anti-diagonal quartile points: (q25, q75) and (q75, q25) in (k, j)."""
    k, j = indices
    xc = fit._x_cont[_cell_rows(fit, cell)]
    base = xc.mean(axis=0)
    qk, qj = np.quantile(xc[:, k], [0.25, 0.75]), np.quantile(xc[:, j], [0.25, 0.75])
    a, b = base.copy(), base.copy()
    a[k], a[j] = qk[0], qj[1]
    b[k], b[j] = qk[1], qj[0]
    return a, b


def check_nl2(
    fit: PropensityFit,
    cell: Optional[Cell] = None,
    indices: Sequence[int] = (0, 1),
    points=None,
    h=None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> Nl2Finding:
    """Compare score-gradient ratios d_k/d_j at two points.

    Clauses (i)-(iv) ask each partial derivative to exceed ``tolerance`` in
    absolute value; clause (v) asks the two ratios to differ by more than
    ``tolerance``. Failures are reported, not raised.
    """
    k, j = (int(i) for i in indices)
    if fit._x_cont.shape[1] < 2:
        raise EstimationError("NL2 needs at least two continuous covariates", module="diagnostics")
    if k == j:
        raise EstimationError("NL2 needs two distinct covariate indices", module="diagnostics")
    cell = largest_cell(fit) if cell is None else cell
    rows = _cell_rows(fit, cell)
    xc = fit._x_cont[rows]
    if h is None:
        h = [_slope_bandwidth(fit, xc[:, l], l) for l in range(xc.shape[1])]
    h = np.broadcast_to(np.asarray(h, dtype=float), (xc.shape[1],))
    pts = default_nl2_points(fit, cell, (k, j)) if points is None else [np.asarray(p, dtype=float) for p in points]
    grads = [local_gradient(xc, fit.scores[rows], p, h) for p in pts]
    dk = [float(g[k]) for g in grads]
    dj = [float(g[j]) for g in grads]
    clauses = {
        "i": bool(abs(dk[0]) > tolerance),
        "ii": bool(abs(dj[0]) > tolerance),
        "iii": bool(abs(dk[1]) > tolerance),
        "iv": bool(abs(dj[1]) > tolerance),
    }
    ratios, diff = (None, None), None
    if all(clauses.values()):
        ratios = (dk[0] / dj[0], dk[1] / dj[1])
        diff = float(abs(ratios[0] - ratios[1]))
    clauses["v"] = bool(diff is not None and diff > tolerance)
    failed = [c for c, ok in clauses.items() if not ok]
    return Nl2Finding(
        detected=not failed,
        cell=cell.key,
        indices=(k, j),
        tolerance=float(tolerance),
        points=tuple(tuple(float(v) for v in p) for p in pts),
        gradients=tuple((a, b) for a, b in zip(dk, dj)),
        ratios=ratios,
        ratio_difference=diff,
        clauses=clauses,
        annotation="" if not failed else "failed clauses: " + ", ".join(failed),
    )


def derived_findings(nl1_by_index: dict, stationary_by_index: dict, arms=None, tolerance=DEFAULT_TOLERANCE):
    """Weaker sufficient conditions built from the same witnesses.

    ``stationary_point``: one covariate, a zero score slope somewhere.
    ``single_coordinate_pair``: a level-matched pair differing in one
    coordinate k, plus a nonzero slope in k. ``zero_and_nonzero_slope``: the
    slope in some k vanishes at one point and not at another.
    ``flat_control_function``: both control-function slopes vanish at a
    common score.

    ``nl1_by_index`` and ``stationary_by_index`` map a continuous-covariate
    index to its finding. ``arms`` optionally holds the two fitted
    control-function arms for the g-derivative variant.
    """
    dims = len(nl1_by_index)
    out = {}
    if dims == 1:
        st = stationary_by_index[0]
        out["stationary_point"] = {"holds": bool(st.detected), "why": f"score slope zero near x={st.location}" if st.detected else st.annotation}
    pairs = [
        k for k, f in nl1_by_index.items()
        if f.detected and "degenerate" not in f.annotation
        and stationary_by_index[k].max_abs_slope is not None
        and stationary_by_index[k].max_abs_slope > tolerance
    ]
    if dims >= 2:
        out["single_coordinate_pair"] = {
            "holds": bool(pairs),
            "why": f"level-matched pair along covariate {pairs[0]} with a nonzero slope in it" if pairs else "no level-matched pair along a single covariate",
        }
        a3 = [
            k for k, st in stationary_by_index.items()
            if st.detected and st.max_abs_slope is not None and st.max_abs_slope > tolerance
        ]
        out["zero_and_nonzero_slope"] = {
            "holds": bool(a3),
            "why": f"slope in covariate {a3[0]} is zero at one point and nonzero at another" if a3 else "no zero-and-nonzero slope pair",
        }
    if arms is None:
        out["flat_control_function"] = {"holds": None, "why": "needs the control-function fits"}
    else:
        a0, a1 = arms
        lo = max(a0.p_grid[0], a1.p_grid[0])
        hi = min(a0.p_grid[-1], a1.p_grid[-1])
        p = np.linspace(lo, hi, 201) if hi > lo else np.array([])
        hit = None
        if p.size:
            _, d0, _ = a0.evaluate(p)
            _, d1, _ = a1.evaluate(p)
            both = np.flatnonzero((np.abs(d0) <= tolerance) & (np.abs(d1) <= tolerance))
            hit = float(p[both[0]]) if both.size else None
        out["flat_control_function"] = {
            "holds": hit is not None,
            "why": f"both control-function slopes vanish at p={hit:.4f}" if hit is not None else "no common zero of the control-function slopes",
        }
    return out


def support_report(fit: PropensityFit, d) -> dict:
    d = np.asarray(d)
    kept = fit.kept
    arms = {}
    for arm in (0, 1):
        p = fit.scores[kept & (d == arm)]
        arms[str(arm)] = [float(p.min()), float(p.max())] if p.size else None
    lo = max(arms["0"][0], arms["1"][0]) if arms["0"] and arms["1"] else None
    hi = min(arms["0"][1], arms["1"][1]) if arms["0"] and arms["1"] else None
    return {
        "support": [float(fit.support[0]), float(fit.support[1])],
        "arm_ranges": arms,
        "common_support": [lo, hi] if lo is not None and hi > lo else None,
        "rows_fitted": int(fit.fitted.sum()),
        "rows_kept": int(kept.sum()),
        "trimmed_lower": int(fit.trim_counts[0]),
        "trimmed_upper": int(fit.trim_counts[1]),
        "dropped_cells": [list(c) for c in fit.dropped_cells],
    }


@dataclass
class DiagnosticReport:
    nl1: Optional[Nl1Finding]
    nl2: Optional[Nl2Finding]
    stationary: Optional[StationaryFinding]
    derived: dict
    support: dict
    tolerance: float
    tolerance_source: str = "fixed"

    @property
    def identified(self) -> bool:
        """Whether any of the checked nonlinearity conditions holds."""
        primary = self.nl2 if self.nl2 is not None else self.nl1
        if primary is not None and primary.detected:
            return True
        return any(v.get("holds") for v in self.derived.values())

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "tolerance": self.tolerance,
                "tolerance_source": self.tolerance_source,
                "nl1": self.nl1.to_dict() if self.nl1 else None,
                "nl2": self.nl2.to_dict() if self.nl2 else None,
                "stationary_point": self.stationary.to_dict() if self.stationary else None,
                "derived": self.derived,
                "support": self.support,
                "identification_supported": self.identified,
            }
        )

    def to_text(self) -> str:
        def yn(flag):
            return "detected" if flag else "not detected"

        lines = [f"Identification diagnostics (tolerance {self.tolerance:.4g}, {self.tolerance_source})"]
        if self.nl1 is not None:
            f = self.nl1
            lines.append(f"NL1 along covariate {f.cont_index} in cell {f.cell}: {yn(f.detected)}")
            if f.witness is not None:
                lines.append(
                    f"  witness x={f.witness[0]:.4f}, x~={f.witness[1]:.4f}, score gap {f.score_gap:.4g}"
                )
            if f.annotation:
                lines.append(f"  {f.annotation}")
        if self.nl2 is not None:
            f = self.nl2
            lines.append(f"NL2 for covariates {f.indices} in cell {f.cell}: {yn(f.detected)}")
            if f.ratio_difference is not None:
                lines.append(f"  gradient ratios {f.ratios[0]:.4f} vs {f.ratios[1]:.4f}")
            if f.annotation:
                lines.append(f"  {f.annotation}")
        if self.stationary is not None:
            f = self.stationary
            where = f" near x={f.location:.4f}" if f.detected and f.location is not None else ""
            lines.append(f"Stationary point along covariate {f.cont_index}: {yn(f.detected)}{where}")
        for name, v in self.derived.items():
            state = {True: "holds", False: "does not hold", None: "not evaluated"}[v["holds"]]
            lines.append(f"Condition {name}: {state} ({v['why']})")
        sp = self.support
        lines.append(
            f"Support [{sp['support'][0]:.4f}, {sp['support'][1]:.4f}], kept {sp['rows_kept']} of "
            f"{sp['rows_fitted']} fitted rows (trimmed {sp['trimmed_lower']} low, {sp['trimmed_upper']} high)"
        )
        lines.append("Identification supported: " + ("yes" if self.identified else "no"))
        return "\n".join(lines) + "\n"


def diagnose(
    fit: PropensityFit,
    d,
    *,
    cell_key=None,
    cont_index: int = 0,
    nl2_indices=(0, 1),
    nl2_points=None,
    grid_size: int = 200,
    tolerance: float = DEFAULT_TOLERANCE,
    tolerance_source: str = "fixed",
    arms=None,
) -> DiagnosticReport:
    """Run every applicable check on one cell and collect a report."""
    cell = largest_cell(fit) if cell_key is None else find_cell(fit, cell_key)
    dims = fit._x_cont.shape[1]
    if dims == 0:
        derived = derived_findings({}, {}, arms, tolerance)
        return DiagnosticReport(None, None, None, derived, support_report(fit, d), tolerance, tolerance_source)
    nl1 = {k: check_nl1(fit, cell, k, grid_size, tolerance) for k in range(dims)}
    st = {k: check_stationary(fit, cell, k, grid_size, tolerance) for k in range(dims)}
    nl2 = None
    if dims >= 2:
        nl2 = check_nl2(fit, cell, nl2_indices, nl2_points, tolerance=tolerance)
    return DiagnosticReport(
        nl1=nl1[cont_index],
        nl2=nl2,
        stationary=st[cont_index],
        derived=derived_findings(nl1, st, arms, tolerance),
        support=support_report(fit, d),
        tolerance=float(tolerance),
        tolerance_source=tolerance_source,
    )
