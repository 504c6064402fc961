"""Supporting statistics: log-log regression with permutation p-values,
hexagonal binning for plot emission, group proportion tables, mean/CI
summaries, and keyword cross-validation."""

from __future__ import annotations

import csv
import logging
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DataError, DegenerateInputError

logger = logging.getLogger(__name__)


def _iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    # counter-based child seed: reproducible independently of evaluation order
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(iteration,)))


def _log10_clamped(values: Sequence[float]) -> tuple[np.ndarray, int]:
    """log10(max(v, 1)) plus how many points were clamped up to 1."""
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0):
        raise ValueError("counts must be nonnegative")
    clamped = int(np.count_nonzero(arr < 1))
    return np.log10(np.maximum(arr, 1.0)), clamped


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    p_value: float
    n: int
    n_clamped: int = 0  # points with a coordinate below 1 mapped to log10(1)


def loglog_regression(
    pairs: Sequence[tuple[float, float]],
    permutations: int = 10000,
    seed: int = 0,
) -> RegressionResult:
    """OLS on log10-transformed pairs with a seeded permutation p-value.

    Counts below 1 map to log10(1) = 0 rather than being dropped, and the
    number of affected points is reported.  The p-value is the add-one
    permutation estimate for the squared correlation under shuffles of y.
    """
    if len(pairs) < 2:
        raise DegenerateInputError(f"need at least 2 pairs, got {len(pairs)}")
    xs_raw = [p[0] for p in pairs]
    ys_raw = [p[1] for p in pairs]
    x, clamped_x = _log10_clamped(xs_raw)
    y, clamped_y = _log10_clamped(ys_raw)
    n_clamped = int(
        np.count_nonzero(
            (np.asarray(xs_raw, dtype=float) < 1) | (np.asarray(ys_raw, dtype=float) < 1)
        )
    )

    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateInputError("zero variance in x after log transform")
    syy = float(dy @ dy)
    sxy = float(dx @ dy)
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())

    if syy == 0.0:
        # constant y: no variance to explain
        return RegressionResult(slope, intercept, 0.0, 1.0, len(pairs), n_clamped)

    residuals = y - (slope * x + intercept)
    ss_res = float(residuals @ residuals)
    r_squared = 1.0 - ss_res / syy
    r_squared = min(1.0, max(0.0, r_squared))

    observed = sxy * sxy / (sxx * syy)  # squared correlation
    hits = 0
    for i in range(permutations):
        perm = _iteration_rng(seed, i).permutation(dy)
        stat = float(dx @ perm) ** 2 / (sxx * syy)
        if stat >= observed:
            hits += 1
    p_value = (1 + hits) / (1 + permutations)
    return RegressionResult(slope, intercept, r_squared, p_value, len(pairs), n_clamped)


@dataclass(frozen=True)
class HexBin:
    center_x: float
    center_y: float
    count: int


def hexbin(pairs: Sequence[tuple[float, float]], bin_width: float) -> list[HexBin]:
    """Assign log10-transformed points to a pointy-top hexagonal lattice.

    ``bin_width`` is the horizontal center spacing; rows sit bin_width *
    sqrt(3)/2 apart with alternate rows offset half a cell.  Every point
    lands in exactly one bin, so bin counts always sum to len(pairs).
    """
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width!r}")
    if not pairs:
        return []
    x, _ = _log10_clamped([p[0] for p in pairs])
    y, _ = _log10_clamped([p[1] for p in pairs])
    w = bin_width
    h = bin_width * math.sqrt(3.0) / 2.0

    # The lattice is two interleaved rectangular grids: A at (i*w, 2j*h),
    # B offset by (w/2, h).  Integer keys avoid float-keyed dict drift.
    counts: dict[tuple[int, int], int] = {}
    for px, py in zip(x, y):
        ia = round(px / w)
        ja = round(py / (2 * h))
        ax, ay = ia * w, ja * 2 * h
        ib = round((px - w / 2) / w)
        jb = round((py - h) / (2 * h))
        bx, by = ib * w + w / 2, jb * 2 * h + h
        da = (px - ax) ** 2 + (py - ay) ** 2
        db = (px - bx) ** 2 + (py - by) ** 2
        if da <= db:
            key = (2 * ia, 2 * ja)
        else:
            key = (2 * ib + 1, 2 * jb + 1)
        counts[key] = counts.get(key, 0) + 1
    return [
        HexBin(kx * w / 2.0, ky * h, counts[(kx, ky)])
        for kx, ky in sorted(counts)
    ]


@dataclass(frozen=True)
class GroupComparison:
    """Per-group category proportions with the raw counts behind them."""

    proportions: dict[str, dict[str, float]]
    counts: dict[str, dict[str, int]]


def group_proportions(
    labels: Mapping[str, str], membership: Mapping[str, str]
) -> GroupComparison:
    """Category proportions within each membership group.

    Every labeled entity must have a group; groups present in the
    membership map but receiving no labeled entities are excluded with a
    warning.
    """
    offenders = sorted(e for e in labels if e not in membership)
    if offenders:
        shown = ", ".join(offenders[:10])
        more = f" (+{len(offenders) - 10} more)" if len(offenders) > 10 else ""
        raise DataError(f"labeled entities without a group: {shown}{more}")
    counts: dict[str, dict[str, int]] = {}
    for entity, category in labels.items():
        group = membership[entity]
        counts.setdefault(group, {})
        counts[group][category] = counts[group].get(category, 0) + 1
    for group in set(membership.values()) - set(counts):
        logger.warning("group %r has no labeled entities; excluded", group)
    proportions: dict[str, dict[str, float]] = {}
    for group, group_counts in sorted(counts.items()):
        total = sum(group_counts.values())
        proportions[group] = {
            category: count / total for category, count in sorted(group_counts.items())
        }
    return GroupComparison(
        proportions, {g: dict(sorted(c.items())) for g, c in sorted(counts.items())}
    )


@dataclass(frozen=True)
class CiStat:
    mean: float
    half_width: float
    level: float
    n: int


def mean_ci(scores: Sequence[float], level: float = 0.95) -> CiStat:
    """Mean with a normal-approximation confidence half-width.

    half_width = z(level) * sd / sqrt(n) with the sample (n-1) standard
    deviation; degenerate inputs (n == 1 or zero variance) give width 0.
    """
    if len(scores) == 0:
        raise ValueError("scores must be nonempty")
    if any(s < 0 or s > 1 for s in scores):
        raise ValueError("scores must lie in [0, 1]")
    if not 0 < level < 1:
        raise ValueError(f"confidence level must be in (0, 1), got {level!r}")
    n = len(scores)
    mean = math.fsum(scores) / n
    if n == 1:
        return CiStat(mean, 0.0, level, n)
    sd = statistics.stdev(scores)
    z = statistics.NormalDist().inv_cdf((1 + level) / 2)
    return CiStat(mean, z * sd / math.sqrt(n), level, n)


@dataclass(frozen=True)
class CrossvalResult:
    fold_values: tuple[float, ...]
    minimum: float
    maximum: float
    mean: float
    stdev: float
    fold_size: int


def keyword_crossval(
    keywords: Sequence[str],
    folds: int = 5,
    fraction: float = 0.8,
    seed: int = 0,
    evaluator: Callable[[list[str]], float] = None,
) -> CrossvalResult:
    """Evaluate a divergence metric over seeded keyword subsets.

    When folds * (1 - fraction) tiles the keyword list exactly (the classic
    k-fold case), each fold leaves out one disjoint block of a single
    shuffle; otherwise folds are independent seeded draws without
    replacement.  Subsets keep the original keyword order.
    """
    if evaluator is None:
        raise ValueError("an evaluator callable is required")
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds!r}")
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction!r}")
    keywords = list(keywords)
    n = len(keywords)
    size = int(fraction * n)
    if size == 0:
        raise ValueError(f"fraction {fraction} of {n} keywords gives an empty subset")

    left_out = n - size
    subsets: list[list[str]] = []
    if left_out * folds == n:
        order = np.random.default_rng(seed).permutation(n)
        for i in range(folds):
            excluded = set(order[i * left_out : (i + 1) * left_out].tolist())
            subsets.append([kw for j, kw in enumerate(keywords) if j not in excluded])
    else:
        for i in range(folds):
            idx = _iteration_rng(seed, i).choice(n, size=size, replace=False)
            chosen = set(idx.tolist())
            subsets.append([kw for j, kw in enumerate(keywords) if j in chosen])

    values = [float(evaluator(subset)) for subset in subsets]
    return CrossvalResult(
        tuple(values),
        min(values),
        max(values),
        math.fsum(values) / len(values),
        statistics.stdev(values) if len(values) > 1 else 0.0,
        size,
    )


# -- external label / score files ---------------------------------------------


def read_labels(path: str | Path) -> dict[str, str]:
    """CSV ``entity,category`` -> mapping; a header row is recognized and skipped."""
    labels: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 'entity,category'")
            if lineno == 1 and row == ["entity", "category"]:
                continue
            labels[row[0].strip().lower()] = row[1].strip()
    return labels

SCORE_COLUMNS = ("toxic", "obscene", "insult")


def read_scores(path: str | Path) -> dict[str, dict[str, list[float]]]:
    """CSV ``post_id,group,toxic,obscene,insult`` -> group -> label -> scores."""
    out: dict[str, dict[str, list[float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["post_id", "group", *SCORE_COLUMNS]
        if header != expected:
            raise DataError(f"{path}: expected header {expected}, got {header!r}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 columns")
            group = row[1].strip()
            bucket = out.setdefault(group, {label: [] for label in SCORE_COLUMNS})
            for label, text in zip(SCORE_COLUMNS, row[2:]):
                value = float(text)
                if not 0 <= value <= 1:
                    raise DataError(f"{path}:{lineno}: {label} score {value} outside [0, 1]")
                bucket[label].append(value)
    return out
