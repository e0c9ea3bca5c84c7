"""Run configuration shared by the command line and the experiment scripts.

A run config is a flat JSON object. Estimation keys match the fields of
:class:`~mtefree.pipeline.EstimationConfig`; ``columns`` and
``diagnostics`` are nested objects. See ``docs/formats.md``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from mtefree.data import ColumnMap
from mtefree.errors import ConfigError
from mtefree.pipeline import EstimationConfig
from mtefree.smoothing import BandwidthSpec

_EST_FIELDS = {f.name for f in dataclasses.fields(EstimationConfig)}


@dataclass
class DiagnosticsConfig:
    """Where and how strictly to check the nonlinearity conditions.

    ``cell`` is a discrete-covariate key (default: the largest cell).
    ``tolerance`` of ``None`` means twice the bootstrap standard error of the
    score curve when bootstrapping, else 0.02. ``bandwidth`` is the
    first-step rule used for the diagnostic score fit.
    """

    cell: Optional[tuple] = None
    cont_index: int = 0
    nl2_indices: tuple = (0, 1)
    tolerance: Optional[float] = None
    strict: bool = False
    bandwidth: object = "rule_of_thumb"
    grid_size: int = 200

    def __post_init__(self):
        if self.cell is not None:
            self.cell = tuple(int(v) for v in self.cell)
        self.nl2_indices = tuple(int(v) for v in self.nl2_indices)
        if len(self.nl2_indices) != 2:
            raise ConfigError("diagnostics.nl2_indices needs exactly two entries")
        if self.tolerance is not None and not float(self.tolerance) > 0:
            raise ConfigError("diagnostics.tolerance must be positive")
        if int(self.grid_size) < 3:
            raise ConfigError("diagnostics.grid_size must be >= 3")
        BandwidthSpec.parse(self.bandwidth)

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsConfig":
        _reject_unknown(d, {f.name for f in dataclasses.fields(cls)}, "diagnostics")
        return cls(**d)


@dataclass
class RunConfig:
    input: Optional[str] = None
    columns: Optional[ColumnMap] = None
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    bootstrap: int = 0
    seed: int = 0
    output: str = "mte_output"
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)

    def __post_init__(self):
        if int(self.bootstrap) < 0 or int(self.bootstrap) == 1:
            raise ConfigError("bootstrap must be 0 (off) or at least 2")
        if int(self.seed) < 0:
            raise ConfigError("seed must be a nonnegative integer")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        top = {"input", "columns", "bootstrap", "seed", "output", "diagnostics"}
        _reject_unknown(d, top | _EST_FIELDS, "config")
        est = {k: v for k, v in d.items() if k in _EST_FIELDS}
        if "late_window" in est:
            est["late_window"] = tuple(est["late_window"])
        cols = d.get("columns")
        return cls(
            input=d.get("input"),
            columns=ColumnMap.from_dict(cols) if cols is not None else None,
            estimation=EstimationConfig(**est),
            bootstrap=int(d.get("bootstrap", 0)),
            seed=int(d.get("seed", 0)),
            output=d.get("output", "mte_output"),
            diagnostics=DiagnosticsConfig.from_dict(d.get("diagnostics") or {}),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        est = dataclasses.asdict(self.estimation)
        for k in ("propensity_bandwidth", "pairwise_bandwidth", "local_linear_bandwidth"):
            est[k] = BandwidthSpec.parse(est[k]).to_json()
        est["late_window"] = list(est["late_window"])
        diag = dataclasses.asdict(self.diagnostics)
        diag["cell"] = list(diag["cell"]) if diag["cell"] is not None else None
        diag["nl2_indices"] = list(diag["nl2_indices"])
        diag["bandwidth"] = BandwidthSpec.parse(diag["bandwidth"]).to_json()
        return {
            "input": self.input,
            "columns": self.columns.to_dict() if self.columns else None,
            **est,
            "bootstrap": int(self.bootstrap),
            "seed": int(self.seed),
            "output": self.output,
            "diagnostics": diag,
        }


def _reject_unknown(d, known, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")
