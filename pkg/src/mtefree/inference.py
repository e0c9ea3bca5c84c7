"""Nonparametric bootstrap over whole-pipeline statistics."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mtefree.data import Sample
from mtefree.errors import DataError, EstimationError

logger = logging.getLogger(__name__)

# failures that a resample may legitimately hit (empty arm, singular design)
RECOVERABLE = (EstimationError, DataError, np.linalg.LinAlgError)


def replication_rng(seed: int, b: int) -> np.random.Generator:
    """Generator for replication ``b``; depends only on (seed, b)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(b,)))


@dataclass(eq=False)
class BootstrapResult:
    """Per-target bootstrap draws with standard errors and percentile intervals.

    ``draws[name]`` has one row per successful replication, in replication
    order; ``failed`` lists the replication indices that raised.
    """

    replications: int
    draws: dict
    failed: list = field(default_factory=list)
    level: float = 0.9

    @property
    def successful(self) -> int:
        return self.replications - len(self.failed)

    def se(self, name):
        return np.std(self.draws[name], axis=0, ddof=1)

    def ci(self, name, level=None):
        level = self.level if level is None else level
        a = (1.0 - level) / 2.0
        lo, hi = np.quantile(self.draws[name], [a, 1.0 - a], axis=0)
        return lo, hi


def bootstrap(
    s: Sample,
    statistic: Callable[[Sample], dict],
    B: int,
    seed: int = 0,
    *,
    level: float = 0.9,
    threads: int = 1,
    max_fail: float = 0.2,
) -> BootstrapResult:
    """Resample rows with replacement ``B`` times and collect ``statistic``.

    ``statistic`` maps a Sample to a dict of arrays with fixed shapes. A
    replication that raises a recoverable estimation error is logged and
    skipped; more than ``max_fail`` of B failing is an error.
    """
    if B < 2:
        raise EstimationError("bootstrap needs B >= 2", module="inference")

    def one(b):
        rows = replication_rng(seed, b).integers(0, s.n, size=s.n)
        try:
            out = statistic(s.take(rows))
        except RECOVERABLE as exc:
            logger.info("replication %d failed: %s", b, exc)
            return None
        return {k: np.asarray(v, dtype=float) for k, v in out.items()}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]

    failed = [b for b, r in enumerate(results) if r is None]
    if len(failed) > max_fail * B:
        raise EstimationError(
            f"{len(failed)} of {B} bootstrap replications failed", module="inference",
            hint="check for sparse cells or thin score support",
        )
    if failed:
        logger.warning("%d of %d bootstrap replications failed and were skipped", len(failed), B)
    ok = [r for r in results if r is not None]
    draws = {k: np.stack([r[k] for r in ok]) for k in ok[0]}
    return BootstrapResult(B, draws, failed, level)
