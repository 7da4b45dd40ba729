"""Desk-scale diagnostics: history-best distance tables, GDCR/correctness correlation, progress curves."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gdcr.advantage import OutcomeReward
from gdcr.graph import UNREACHABLE
from gdcr.reward import StepRewardSeries, history_best_distance

Scored = Sequence[tuple[StepRewardSeries, OutcomeReward]]


class DegenerateVariance(ValueError):
    pass


@dataclass(frozen=True)
class DistanceRow:
    step: int
    correct: float | None
    incorrect: float | None
    diff: float | None
    n_correct: int
    n_incorrect: int
    unreachable_correct: int
    unreachable_incorrect: int


@dataclass(frozen=True)
class DistanceTable:
    rows: tuple[DistanceRow, ...]

    def populated(self) -> list[DistanceRow]:
        return [r for r in self.rows if r.diff is not None]


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    p_note: str


def distance_table(scored: Scored, max_step: int = 8) -> DistanceTable:
    """Mean history-best distance per (non-final) step, split by correctness.

    A trajectory contributes to step t only if it has at least t non-final
    steps. Unreachable values are counted but kept out of the means.
    """
    sums = defaultdict(lambda: [0.0, 0, 0])  # (step, correct) -> [sum, n, n_unreachable]
    for series, outcome in scored:
        best = history_best_distance(series, include_final=False)
        key_c = bool(outcome.scalar)
        for t, d in enumerate(best[:max_step], start=1):
            cell = sums[(t, key_c)]
            if d == UNREACHABLE:
                cell[2] += 1
            else:
                cell[0] += d
                cell[1] += 1
    rows = []
    for t in range(1, max_step + 1):
        c, i = sums.get((t, True), [0.0, 0, 0]), sums.get((t, False), [0.0, 0, 0])
        mc = c[0] / c[1] if c[1] else None
        mi = i[0] / i[1] if i[1] else None
        diff = mc - mi if mc is not None and mi is not None else None
        rows.append(DistanceRow(t, mc, mi, diff, c[1], i[1], c[2], i[2]))
    return DistanceTable(tuple(rows))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise DegenerateVariance("need at least two paired samples")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVariance("zero variance")
    return float(np.clip((xc @ yc) / math.sqrt(sxx * syy), -1.0, 1.0))


def gdcr_correctness_correlation(scored: Scored) -> CorrelationResult:
    """Point-biserial r between per-trajectory mean GDCR and correctness."""
    x = [float(np.mean(s.r_g)) if len(s) else 0.0 for s, _ in scored]
    y = [o.scalar for _, o in scored]
    r = pearson(x, y)
    n = len(x)
    if abs(r) < 1.0 and n > 2:
        t = r * math.sqrt((n - 2) / (1 - r * r))
        note = f"n={n}, t={t:.3f} on {n - 2} df (descriptive only)"
    else:
        note = f"n={n}, perfect correlation"
    return CorrelationResult(r, n, note)


def cited_fraction_by_distance(scored: Scored) -> list[tuple[float, float, int]]:
    """(distance, fraction of retrieved nodes at that distance ever cited, retrieved count)."""
    retrieved = defaultdict(int)
    cited = defaultdict(int)
    for series, _ in scored:
        if not series.steps:
            continue
        last = series.steps[-1]
        for v in last.retrieved_cumulative:
            d = series.node_distances[v]
            retrieved[d] += 1
            if v in last.cited_cumulative:
                cited[d] += 1
    return [(d, cited[d] / retrieved[d], retrieved[d]) for d in sorted(retrieved)]


def progress_curve(scored: Scored, bins: int = 10) -> list[tuple[float, float, float | None, int]]:
    """(bin_lo, bin_hi, mean d_t, count) over normalized progress t/T of non-final steps."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    sums = [0.0] * bins
    counts = [0] * bins
    for series, _ in scored:
        steps = [s for s in series.steps if not s.is_final]
        T = len(steps)
        for t, s in enumerate(steps, start=1):
            if s.d_t is None or s.d_t == UNREACHABLE:
                continue
            b = min(bins - 1, max(0, math.ceil(t / T * bins) - 1))
            sums[b] += s.d_t
            counts[b] += 1
    return [
        (b / bins, (b + 1) / bins, sums[b] / counts[b] if counts[b] else None, counts[b]) for b in range(bins)
    ]
