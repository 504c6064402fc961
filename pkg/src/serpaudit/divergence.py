"""Rank turbulence divergence between two activity-ranked entity lists.

Entities are ranked from most to least active with fractional tied ranks.
For an entity with rank r1 in one system and r2 in the other, the
element-wise divergence is

    |r1**(-alpha) - r2**(-alpha)| ** (1 / (alpha + 1))

and the total divergence sums these terms over the union of both domains,
scaled by (alpha + 1) / alpha and divided by a normalization computed from
the hypothetical arrangement in which the two systems share no entities.
That normalization makes fully disjoint systems score 1 and identical
rankings score 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

from .errors import DataError
from .ingest import TokenCounts

DEFAULT_ALPHA = 1.0 / 3.0

CountsLike = Union[TokenCounts, Mapping[str, int]]


@dataclass(frozen=True)
class RankedEntry:
    entity: str
    count: int
    rank: float


@dataclass(frozen=True)
class RankedDistribution:
    """Entities ordered by activity, carrying fractional tied ranks."""

    entries: tuple[RankedEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def domain(self) -> frozenset[str]:
        return frozenset(e.entity for e in self.entries)

    def ranks(self) -> dict[str, float]:
        return {e.entity: e.rank for e in self.entries}


@dataclass(frozen=True)
class EntityDivergence:
    entity: str
    rank_1: float
    rank_2: float
    contribution: float
    sign: int  # +1: more prominent in system 1, -1: in system 2, 0: equal rank
    exclusive_to: int | None  # 1 or 2 when the entity appears in only one system


@dataclass(frozen=True)
class DivergenceReport:
    """Total divergence plus signed per-entity contributions."""

    alpha: float
    total_rtd: float
    per_entity: tuple[EntityDivergence, ...]
    normalization: float

    def contributions_by_entity(self) -> dict[str, EntityDivergence]:
        return {e.entity: e for e in self.per_entity}


def _as_count_map(counts: CountsLike) -> Mapping[str, int]:
    if isinstance(counts, TokenCounts):
        return counts.counts
    return counts


def rank(counts: CountsLike) -> RankedDistribution:
    """Rank entities most-active first, assigning tied entities the mean of
    the integer positions they jointly occupy."""
    items = _as_count_map(counts)
    if not items:
        raise ValueError("cannot rank an empty count table")
    ordered = sorted(items.items(), key=lambda kv: (-kv[1], kv[0]))
    entries: list[RankedEntry] = []
    pos = 0
    i = 0
    n = len(ordered)
    while i < n:
        j = i
        while j < n and ordered[j][1] == ordered[i][1]:
            j += 1
        # positions pos+1 .. pos+(j-i) share the mean rank
        tied_rank = (pos + 1 + pos + (j - i)) / 2.0
        for entity, count in ordered[i:j]:
            entries.append(RankedEntry(entity, count, tied_rank))
        pos += j - i
        i = j
    entries.sort(key=lambda e: (e.rank, e.entity))
    return RankedDistribution(tuple(entries))


def element_divergence(r1: float, r2: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Element-wise divergence |r1**-a - r2**-a| ** (1/(a+1)) for ranks >= 1."""
    if r1 < 1 or r2 < 1:
        raise ValueError(f"ranks must be >= 1, got {r1!r}, {r2!r}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    return abs(r1 ** -alpha - r2 ** -alpha) ** (1.0 / (alpha + 1.0))


def absent_rank(system_size: int, absent_count: int) -> float:
    """Tied rank shared by all entities missing from a system of the given size."""
    return system_size + (absent_count + 1) / 2.0


def rtd(
    r1: RankedDistribution,
    r2: RankedDistribution,
    alpha: float = DEFAULT_ALPHA,
) -> DivergenceReport:
    """Compare two ranked distributions over their union domain.

    Entities absent from one system all share that system's absent rank
    (one past its bottom, tied across the missing block).  The total is the
    prefactor (alpha+1)/alpha times the sum of element divergences, divided
    by the same quantity evaluated on the fully-disjoint arrangement of the
    same two systems, so the result lands in [0, 1].
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if not r1.entries or not r2.entries:
        raise ValueError("both distributions must be nonempty")

    ranks1 = r1.ranks()
    ranks2 = r2.ranks()
    union = sorted(set(ranks1) | set(ranks2))
    n1, n2 = len(ranks1), len(ranks2)
    absent_from_1 = sum(1 for e in union if e not in ranks1)
    absent_from_2 = sum(1 for e in union if e not in ranks2)
    miss1 = absent_rank(n1, absent_from_1)
    miss2 = absent_rank(n2, absent_from_2)

    prefactor = (alpha + 1.0) / alpha

    # Normalization: same two rank profiles, but every entity exclusive to
    # its own system.  Then each system-1 entity sits at system 2's absent
    # rank and vice versa.
    disjoint_miss1 = absent_rank(n1, n2)
    disjoint_miss2 = absent_rank(n2, n1)
    norm_terms = [element_divergence(rk, disjoint_miss2, alpha) for rk in ranks1.values()]
    norm_terms += [element_divergence(disjoint_miss1, rk, alpha) for rk in ranks2.values()]
    normalization = prefactor * math.fsum(norm_terms)

    per_entity: list[EntityDivergence] = []
    for entity in union:
        in1 = entity in ranks1
        in2 = entity in ranks2
        rank_1 = ranks1[entity] if in1 else miss1
        rank_2 = ranks2[entity] if in2 else miss2
        term = element_divergence(rank_1, rank_2, alpha)
        contribution = prefactor * term / normalization
        if rank_1 < rank_2:
            sign = 1
        elif rank_1 > rank_2:
            sign = -1
        else:
            sign = 0
        exclusive = None if in1 and in2 else (1 if in1 else 2)
        per_entity.append(
            EntityDivergence(entity, rank_1, rank_2, contribution, sign, exclusive)
        )

    total = math.fsum(e.contribution for e in per_entity)
    return DivergenceReport(alpha, total, tuple(per_entity), normalization)


def rtd_from_counts(
    counts1: CountsLike, counts2: CountsLike, alpha: float = DEFAULT_ALPHA
) -> DivergenceReport:
    return rtd(rank(counts1), rank(counts2), alpha)


PROMOTED_IN_1 = "promoted_in_1"
PROMOTED_IN_2 = "promoted_in_2"


def signed_contributions(
    report: DivergenceReport, k: int, direction: str
) -> list[EntityDivergence]:
    """Top-k entities by contribution among those favoring one system.

    ``promoted_in_1`` selects entities ranked more prominently in system 1
    (sign +1); ``promoted_in_2`` the opposite.  Ties break by entity name.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k!r}")
    if direction == PROMOTED_IN_1:
        wanted = 1
    elif direction == PROMOTED_IN_2:
        wanted = -1
    else:
        raise ValueError(f"unknown direction {direction!r}")
    picked = [e for e in report.per_entity if e.sign == wanted]
    picked.sort(key=lambda e: (-e.contribution, e.entity))
    return picked[:k]


def mean_keyword_rtd(
    per_keyword_counts: Mapping[str, CountsLike],
    reference: CountsLike,
    alpha: float = DEFAULT_ALPHA,
) -> tuple[float, dict[str, float]]:
    """Mean of per-keyword divergences against one reference ranking.

    Keywords whose count table is empty are skipped.  Returns (mean, map of
    keyword -> total divergence); mean is NaN when nothing was comparable.
    """
    reference_ranked = rank(reference)
    per_keyword: dict[str, float] = {}
    for keyword in sorted(per_keyword_counts):
        counts = _as_count_map(per_keyword_counts[keyword])
        if not counts:
            continue
        per_keyword[keyword] = rtd(rank(counts), reference_ranked, alpha).total_rtd
    if not per_keyword:
        return float("nan"), per_keyword
    return math.fsum(per_keyword.values()) / len(per_keyword), per_keyword


# -- serialization ----------------------------------------------------------

CSV_HEADER = ["entity", "rank_serp", "rank_corpus", "contribution", "sign", "exclusive"]


def write_divergence_csv(report: DivergenceReport, path) -> None:
    """Write per-entity rows; system 1 is the SERP side, system 2 the corpus."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for e in report.per_entity:
            writer.writerow(
                [
                    e.entity,
                    format(e.rank_1, ".1f"),
                    format(e.rank_2, ".1f"),
                    format(e.contribution, ".12g"),
                    e.sign,
                    "" if e.exclusive_to is None else e.exclusive_to,
                ]
            )


def divergence_header(report: DivergenceReport, **extra) -> dict:
    header = {
        "alpha": report.alpha,
        "normalization": report.normalization,
        "total_rtd": report.total_rtd,
        "entities": len(report.per_entity),
    }
    header.update(extra)
    return header


def write_divergence_header(report: DivergenceReport, path, **extra) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(divergence_header(report, **extra), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_divergence_csv(path) -> list[EntityDivergence]:
    out: list[EntityDivergence] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DataError(f"unexpected divergence CSV header: {header!r}")
        for row in reader:
            entity, rank_1, rank_2, contribution, sign, exclusive = row
            out.append(
                EntityDivergence(
                    entity,
                    float(rank_1),
                    float(rank_2),
                    float(contribution),
                    int(sign),
                    int(exclusive) if exclusive else None,
                )
            )
    return out
