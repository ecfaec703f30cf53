"""Nonparametric comparison of metric distributions between models.

Mann-Whitney rank-sum tests (exact enumeration for small samples, normal
approximation with tie and continuity corrections otherwise),
Vargha-Delaney A probability-of-superiority effect sizes, Bonferroni
thresholds, and grouped pairwise comparison tables.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

# Largest per-side sample size handled by exact enumeration.
EXACT_LIMIT = 8

# Effect magnitude boundaries on max(A, 1-A), strictly exceeded.
MAGNITUDE_LEVELS = ((0.75, "large"), (0.67, "medium"), (0.526, "small"))


@dataclass(frozen=True)
class StatResult:
    u_statistic: float
    p_value: float
    a_measure: float
    significant: bool
    magnitude: str
    method: str  # "exact" or "normal"


def _midranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks, ties get the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks2: np.ndarray, n1: int, n2: int, u1_doubled: int) -> float:
    """Permutation p-value by exhausting all C(n1+n2, n1) group assignments.

    `ranks2` are doubled midranks of the pooled sample (integers), which
    keeps every comparison exact.
    """
    d_obs = abs(u1_doubled - n1 * n2)
    total = 0
    hits = 0
    base = n1 * (n1 + 1)
    for subset in combinations(range(n1 + n2), n1):
        u_doubled = sum(int(ranks2[i]) for i in subset) - base
        total += 1
        if abs(u_doubled - n1 * n2) >= d_obs:
            hits += 1
    return hits / total


def mann_whitney(a, b, exact_limit: int = EXACT_LIMIT):
    """Two-sided Mann-Whitney rank-sum test; returns (U, p).

    U counts pairs where the first sample wins (ties half).  Samples with
    both sizes <= `exact_limit` get the exact permutation p; larger ones the
    normal approximation with tie correction and continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("mann_whitney requires non-empty samples")
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    # Doubled midranks are integers, so U comes out exact and the p-value
    # is bitwise identical under swapping the samples.
    ranks2 = np.rint(2.0 * ranks).astype(np.int64)
    u1_doubled = int(ranks2[:n1].sum()) - n1 * (n1 + 1)
    u1 = u1_doubled / 2.0

    if n1 <= exact_limit and n2 <= exact_limit:
        return u1, _exact_two_sided_p(ranks2, n1, n2, u1_doubled)

    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = (counts.astype(np.float64) ** 3 - counts).sum()
    correction = 1.0 - tie_term / (n ** 3 - n)
    if correction <= 0.0:
        return u1, 1.0  # every value identical
    sd = math.sqrt(correction * (n1 * n2 * (n + 1) / 12.0))
    u_big = max(u1_doubled, 2 * n1 * n2 - u1_doubled) / 2.0
    z = (u_big - n1 * n2 / 2.0 - 0.5) / sd
    p = math.erfc(max(z, 0.0) / math.sqrt(2.0))
    return u1, min(p, 1.0)


def vargha_delaney_a(a, b) -> float:
    """P(first sample value > second) + half ties, via the rank-sum identity."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        raise ValueError("vargha_delaney_a requires non-empty samples")
    ranks = _midranks(np.concatenate([a, b]))
    r1 = ranks[:m].sum()
    return (r1 / m - (m + 1) / 2.0) / n


def a_magnitude(a_value: float) -> str:
    """Magnitude label from distance of A to 0.5, direction-independent."""
    strength = max(a_value, 1.0 - a_value)
    for level, label in MAGNITUDE_LEVELS:
        if strength > level:
            return label
    return "negligible"


def bonferroni_threshold(alpha: float, m: int) -> float:
    """Per-comparison significance level for a family of m comparisons."""
    if m < 1:
        raise ValueError("number of comparisons must be >= 1")
    return alpha / m


def error_range(values) -> float:
    """Spread of a distribution: max minus min."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("error_range requires a non-empty sample")
    return float(values.max() - values.min())


def compare(a, b, threshold: float, exact_limit: int = EXACT_LIMIT) -> StatResult:
    """One pairwise comparison at a pre-corrected significance threshold."""
    u, p = mann_whitney(a, b, exact_limit)
    a_val = vargha_delaney_a(a, b)
    n1, n2 = len(a), len(b)
    method = "exact" if (n1 <= exact_limit and n2 <= exact_limit) else "normal"
    return StatResult(
        u_statistic=float(u),
        p_value=float(p),
        a_measure=float(a_val),
        significant=bool(p < threshold),
        magnitude=a_magnitude(a_val),
        method=method,
    )


@dataclass(frozen=True)
class ComparisonRow:
    group: float
    pair: str  # e.g. "A/B"
    n_first: int
    n_second: int
    result: StatResult


def grouped_comparisons(rows, group_key: str, compare_key: str,
                        variant_key: str = "variant",
                        variants=("A", "B", "C"),
                        alpha: float = 0.05) -> list[ComparisonRow]:
    """All pairwise model comparisons inside each group of records.

    `rows` is an iterable of mappings (e.g. parsed result-CSV rows).  Per
    group the Bonferroni family is the set of pairwise comparisons, so the
    per-test threshold is alpha / C(len(variants), 2).
    """
    pairs = list(combinations(variants, 2))
    threshold = bonferroni_threshold(alpha, len(pairs))
    by_group: dict = {}
    for row in rows:
        group = float(row[group_key])
        variant = row[variant_key]
        by_group.setdefault(group, {}).setdefault(variant, []).append(
            float(row[compare_key]))

    out = []
    for group in sorted(by_group):
        samples = by_group[group]
        for first, second in pairs:
            if first not in samples or second not in samples:
                warnings.warn(
                    f"group {group}: missing model "
                    f"{first if first not in samples else second}, skipping")
                continue
            result = compare(samples[first], samples[second], threshold)
            out.append(ComparisonRow(group, f"{first}/{second}",
                                     len(samples[first]), len(samples[second]),
                                     result))
    return out


def write_report_csv(rows: list[ComparisonRow], path) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "pair", "n_first", "n_second", "u", "p",
                         "a_measure", "significant", "magnitude", "method"])
        for row in rows:
            r = row.result
            writer.writerow([row.group, row.pair, row.n_first, row.n_second,
                             repr(r.u_statistic), repr(r.p_value),
                             repr(r.a_measure), int(r.significant),
                             r.magnitude, r.method])


def format_report(rows: list[ComparisonRow]) -> str:
    """Aligned text table: one block row per group, one column per pair."""
    pairs = sorted({row.pair for row in rows})
    groups = sorted({row.group for row in rows})
    cell = {(row.group, row.pair): row.result for row in rows}
    width = 24

    def fmt_group(g):
        return f"{g:g}"

    lines = []
    header = "group".ljust(8) + "".join(p.ljust(width) for p in pairs)
    lines.append(header)
    lines.append("-" * len(header))
    for g in groups:
        top, bottom = fmt_group(g).ljust(8), " " * 8
        for p in pairs:
            r = cell.get((g, p))
            if r is None:
                top += "-".ljust(width)
                bottom += "".ljust(width)
                continue
            sig = f"p={r.p_value:.3g}" + ("*" if r.significant else "")
            eff = f"A={r.a_measure:.2f} ({r.magnitude})"
            top += sig.ljust(width)
            bottom += eff.ljust(width)
        lines.append(top)
        lines.append(bottom)
    lines.append("* significant after Bonferroni correction")
    return "\n".join(lines)
