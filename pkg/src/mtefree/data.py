"""Observations, covariate cells and CSV ingestion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from mtefree.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Sample:
    """A random sample of (Y, D, X) with X split into continuous and discrete parts.

    Parameters
    ----------
    y : (n,) array
        Outcome.
    d : (n,) array of {0, 1}
        Treatment indicator.
    x_cont : (n, kc) array
        Continuous covariates. ``kc`` may be zero.
    x_disc : (n, kd) integer array
        Discrete covariates, used both as regressors and to define cells.
    names : tuple of str
        Labels for the ``kc + kd`` covariates, continuous first.
    info : dict
        Free-form provenance (source file, rows dropped at load).
    """

    y: np.ndarray
    d: np.ndarray
    x_cont: np.ndarray
    x_disc: np.ndarray
    names: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        d = np.asarray(self.d)
        n = y.shape[0]
        x_cont = np.asarray(self.x_cont, dtype=float)
        if x_cont.ndim == 1:
            x_cont = x_cont.reshape(n, -1) if x_cont.size else np.empty((n, 0))
        x_disc = np.asarray(self.x_disc)
        if x_disc.ndim == 1:
            x_disc = x_disc.reshape(n, -1) if x_disc.size else np.empty((n, 0), dtype=np.int64)
        if n < 1:
            raise DataError("sample is empty")
        if d.shape[0] != n or x_cont.shape[0] != n or x_disc.shape[0] != n:
            raise DataError(
                f"row counts differ: y={n}, d={d.shape[0]}, "
                f"x_cont={x_cont.shape[0]}, x_disc={x_disc.shape[0]}"
            )
        if not np.all(np.isin(d, (0, 1))):
            raise DataError("non-binary treatment")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x_cont))):
            raise DataError("non-finite values in outcome or continuous covariates")
        if x_disc.size and not np.all(np.equal(np.mod(x_disc, 1), 0)):
            raise DataError("discrete covariates must be integer coded")
        names = tuple(self.names)
        k = x_cont.shape[1] + x_disc.shape[1]
        if not names:
            names = tuple(f"xc{i}" for i in range(x_cont.shape[1])) + tuple(
                f"xd{i}" for i in range(x_disc.shape[1])
            )
        if len(names) != k:
            raise DataError(f"{len(names)} names given for {k} covariates")
        for attr, val in (
            ("y", y),
            ("d", d.astype(np.int8)),
            ("x_cont", x_cont),
            ("x_disc", x_disc.astype(np.int64)),
            ("names", names),
        ):
            val = val.copy() if isinstance(val, np.ndarray) else val
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, attr, val)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x_cont.shape[1] + self.x_disc.shape[1]

    @property
    def x(self) -> np.ndarray:
        """All covariates as a float matrix, continuous columns first."""
        return np.hstack([self.x_cont, self.x_disc.astype(float)])

    def take(self, rows) -> "Sample":
        rows = np.asarray(rows)
        return Sample(
            self.y[rows],
            self.d[rows],
            self.x_cont[rows],
            self.x_disc[rows],
            self.names,
            dict(self.info),
        )

    def require_both_arms(self, mask=None):
        d = self.d if mask is None else self.d[mask]
        n1 = int(d.sum())
        if n1 == 0 or n1 == d.shape[0]:
            raise DataError("both treatment arms must be nonempty")


@dataclass(frozen=True)
class Cell:
    """Rows sharing one value of the discrete covariates."""

    key: tuple
    rows: np.ndarray

    @property
    def size(self) -> int:
        return len(self.rows)


def split_cells(s: Sample) -> list[Cell]:
    """Partition the rows by distinct discrete-covariate value, sorted by key."""
    if s.x_disc.shape[1] == 0:
        return [Cell((), np.arange(s.n))]
    keys, inverse = np.unique(s.x_disc, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    return [
        Cell(tuple(int(v) for v in keys[c]), order[bounds[c] : bounds[c + 1]])
        for c in range(len(keys))
    ]


@dataclass
class ColumnMap:
    """Which CSV columns play which role.

    ``treatment_labels`` gives the raw values read as untreated and treated.
    """

    outcome: str
    treatment: str
    continuous: Sequence[str] = ()
    discrete: Sequence[str] = ()
    treatment_labels: Sequence = (0, 1)

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnMap":
        unknown = set(d) - {"outcome", "treatment", "continuous", "discrete", "treatment_labels"}
        if unknown:
            raise ConfigError(f"unknown column-map keys: {sorted(unknown)}")
        try:
            return cls(
                outcome=d["outcome"],
                treatment=d["treatment"],
                continuous=tuple(d.get("continuous", ())),
                discrete=tuple(d.get("discrete", ())),
                treatment_labels=tuple(d.get("treatment_labels", (0, 1))),
            )
        except KeyError as exc:
            raise ConfigError(f"column map missing key {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "treatment": self.treatment,
            "continuous": list(self.continuous),
            "discrete": list(self.discrete),
            "treatment_labels": list(self.treatment_labels),
        }


def _discrete_codes(col: pd.Series) -> np.ndarray:
    # integer-valued columns keep their values; anything else gets dense codes
    num = pd.to_numeric(col, errors="coerce")
    if num.notna().all() and np.all(np.mod(num.to_numpy(), 1) == 0):
        return num.to_numpy().astype(np.int64)
    codes, _ = pd.factorize(col.astype(str), sort=True)
    return codes.astype(np.int64)


def load_csv(path, columns: ColumnMap) -> Sample:
    """Read a CSV with a header row into a validated :class:`Sample`.

    Rows with a missing value in any mapped column are dropped (listwise);
    the count is logged and stored in ``sample.info["rows_dropped"]``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=True)
    wanted = [columns.outcome, columns.treatment, *columns.continuous, *columns.discrete]
    for name in wanted:
        if name not in df.columns:
            raise DataError(f"column not found: {name}", hint="check the column mapping")
    df = df[wanted].replace(r"^\s*$", np.nan, regex=True)
    before = len(df)
    df = df.dropna(axis=0, how="any")
    dropped = before - len(df)
    if dropped:
        logger.warning("%d row%s dropped (missing values)", dropped, "" if dropped == 1 else "s")
    if len(df) == 0:
        raise DataError("no rows left after dropping missing values")

    untreated, treated = (str(v) for v in columns.treatment_labels)
    raw_d = df[columns.treatment].str.strip()
    num_d = pd.to_numeric(raw_d, errors="coerce")
    d = np.full(len(df), -1, dtype=np.int64)
    for label, code in ((untreated, 0), (treated, 1)):
        hit = raw_d == label
        try:
            hit |= num_d == float(label)
        except ValueError:
            pass
        d[hit.to_numpy()] = code
    if np.any(d < 0):
        raise DataError("non-binary treatment")

    def numeric(name):
        vals = pd.to_numeric(df[name], errors="coerce")
        if vals.isna().any():
            raise DataError(f"non-numeric values in column {name}")
        return vals.to_numpy(dtype=float)

    y = numeric(columns.outcome)
    x_cont = (
        np.column_stack([numeric(c) for c in columns.continuous])
        if columns.continuous
        else np.empty((len(df), 0))
    )
    x_disc = (
        np.column_stack([_discrete_codes(df[c]) for c in columns.discrete])
        if columns.discrete
        else np.empty((len(df), 0), dtype=np.int64)
    )
    return Sample(
        y,
        d,
        x_cont,
        x_disc,
        tuple(columns.continuous) + tuple(columns.discrete),
        {"source": str(path), "rows_dropped": dropped},
    )
