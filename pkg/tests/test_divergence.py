"""Core divergence tests, checked against a straight-line oracle."""

import math

import numpy as np
import pytest

from serpaudit.divergence import (
    DEFAULT_ALPHA,
    PROMOTED_IN_1,
    PROMOTED_IN_2,
    element_divergence,
    mean_keyword_rtd,
    rank,
    read_divergence_csv,
    rtd,
    rtd_from_counts,
    signed_contributions,
    write_divergence_csv,
    write_divergence_header,
)
from serpaudit.ingest import TokenCounts


# -- independent oracle: no shared code with the production path -------------

def oracle_fractional_ranks(counts):
    items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ranks = {}
    i = 0
    while i < len(items):
        j = i
        while j < len(items) and items[j][1] == items[i][1]:
            j += 1
        shared = sum(range(i + 1, j + 1)) / (j - i)
        for k in range(i, j):
            ranks[items[k][0]] = shared
        i = j
    return ranks


def oracle_rtd(counts1, counts2, alpha):
    r1 = oracle_fractional_ranks(counts1)
    r2 = oracle_fractional_ranks(counts2)
    union = set(r1) | set(r2)
    n1, n2 = len(r1), len(r2)
    a1 = len([e for e in union if e not in r1])
    a2 = len([e for e in union if e not in r2])
    m1 = n1 + (a1 + 1) / 2
    m2 = n2 + (a2 + 1) / 2

    def phi(x, y):
        return abs(x ** -alpha - y ** -alpha) ** (1 / (alpha + 1))

    pref = (alpha + 1) / alpha
    numerator = pref * sum(phi(r1.get(e, m1), r2.get(e, m2)) for e in union)
    dm1 = n1 + (n2 + 1) / 2
    dm2 = n2 + (n1 + 1) / 2
    denominator = pref * (
        sum(phi(v, dm2) for v in r1.values()) + sum(phi(dm1, v) for v in r2.values())
    )
    return numerator / denominator


def random_count_table(rng, max_entities=50, pool_size=80, max_count=40):
    size = int(rng.integers(1, max_entities + 1))
    names = rng.choice(pool_size, size=size, replace=False)
    # small count range forces plenty of ties
    return {f"e{int(n)}": int(rng.integers(1, max_count)) for n in names}


# -- rank -----------------------------------------------------------------

def test_rank_tied_entities_share_mean_position():
    ranked = rank({"a": 10, "b": 5, "c": 5})
    assert ranked.ranks() == {"a": 1.0, "b": 2.5, "c": 2.5}


def test_rank_single_entity():
    assert rank({"x": 7}).ranks() == {"x": 1.0}


def test_rank_strictly_decreasing_counts():
    assert rank({"a": 3, "b": 2, "c": 1}).ranks() == {"a": 1.0, "b": 2.0, "c": 3.0}


def test_rank_accepts_token_counts():
    tc = TokenCounts({"a": 2, "b": 1}, 3)
    assert rank(tc).ranks() == {"a": 1.0, "b": 2.0}


def test_rank_empty_rejected():
    with pytest.raises(ValueError):
        rank({})


def test_rank_entry_order_is_rank_then_entity():
    ranked = rank({"b": 5, "a": 5, "c": 9})
    assert [e.entity for e in ranked.entries] == ["c", "a", "b"]


def test_rank_group_sizes_cover_domain():
    rng = np.random.default_rng(7)
    for _ in range(50):
        table = random_count_table(rng)
        ranked = rank(table)
        assert len(ranked.entries) == len(table)
        # higher count => strictly smaller rank
        by_count = sorted(ranked.entries, key=lambda e: -e.count)
        for first, second in zip(by_count, by_count[1:]):
            if first.count > second.count:
                assert first.rank < second.rank
            else:
                assert first.rank == second.rank


# -- element divergence ------------------------------------------------------

def test_element_divergence_identical_ranks_is_zero():
    for r in (1, 2, 17.5):
        assert element_divergence(r, r, 0.25) == 0.0


def test_element_divergence_scalar_value():
    # |1 - 2**(-1/3)| ** (3/4), frozen from direct evaluation
    expected = abs(1.0 - 2.0 ** (-1.0 / 3.0)) ** 0.75
    assert expected == pytest.approx(0.30610723220108654, abs=1e-15)
    assert element_divergence(1, 2, 1 / 3) == pytest.approx(expected, abs=1e-12)


def test_element_divergence_symmetric():
    assert element_divergence(2, 1, 1 / 3) == element_divergence(1, 2, 1 / 3)


def test_element_divergence_rejects_bad_ranks_and_alpha():
    with pytest.raises(ValueError):
        element_divergence(0, 1, 1 / 3)
    with pytest.raises(ValueError):
        element_divergence(1, 0.5, 1 / 3)
    with pytest.raises(ValueError):
        element_divergence(1, 2, 0)


# -- rtd ----------------------------------------------------------------------

def test_rtd_identical_distributions_is_zero():
    ranked = rank({"a": 5, "b": 3, "c": 1})
    report = rtd(ranked, ranked)
    assert report.total_rtd == 0.0
    assert all(e.sign == 0 for e in report.per_entity)


def test_rtd_disjoint_distributions_is_one():
    rng = np.random.default_rng(3)
    r1 = rank({f"left{i}": int(rng.integers(1, 30)) for i in range(10)})
    r2 = rank({f"right{i}": int(rng.integers(1, 30)) for i in range(10)})
    report = rtd(r1, r2)
    assert report.total_rtd == pytest.approx(1.0, abs=1e-9)
    assert all(e.exclusive_to in (1, 2) for e in report.per_entity)


def test_rtd_matches_oracle_on_random_instances():
    rng = np.random.default_rng(12345)
    for _ in range(300):
        c1 = random_count_table(rng, max_entities=30)
        c2 = random_count_table(rng, max_entities=30)
        report = rtd_from_counts(c1, c2, DEFAULT_ALPHA)
        assert report.total_rtd == pytest.approx(
            oracle_rtd(c1, c2, DEFAULT_ALPHA), abs=1e-12
        )


def test_rtd_total_equals_sum_of_contributions():
    rng = np.random.default_rng(99)
    for _ in range(50):
        c1 = random_count_table(rng)
        c2 = random_count_table(rng)
        report = rtd_from_counts(c1, c2)
        assert report.total_rtd == pytest.approx(
            math.fsum(e.contribution for e in report.per_entity), abs=1e-12
        )


def test_rtd_symmetry_of_total():
    rng = np.random.default_rng(4242)
    for _ in range(100):
        c1 = random_count_table(rng)
        c2 = random_count_table(rng)
        forward = rtd_from_counts(c1, c2).total_rtd
        backward = rtd_from_counts(c2, c1).total_rtd
        assert abs(forward - backward) <= 1e-12


def test_rtd_scale_invariance_of_counts():
    rng = np.random.default_rng(31)
    c1 = random_count_table(rng)
    c2 = random_count_table(rng)
    base = rtd_from_counts(c1, c2).total_rtd
    scaled = rtd_from_counts(
        {k: v * 7 for k, v in c1.items()}, {k: v * 7 for k, v in c2.items()}
    ).total_rtd
    assert scaled == base


def test_rtd_bounds_hold():
    rng = np.random.default_rng(777)
    for _ in range(200):
        c1 = random_count_table(rng)
        c2 = random_count_table(rng)
        total = rtd_from_counts(c1, c2).total_rtd
        assert 0.0 <= total <= 1.0 + 1e-9


def test_rtd_nested_subset_strictly_between_zero_and_one():
    full = {f"e{i}": 100 - i for i in range(30)}
    subset = {k: v for k, v in list(full.items())[:10]}
    total = rtd_from_counts(subset, full).total_rtd
    assert 0.0 < total < 1.0


def test_rtd_signs_follow_rank_order():
    report = rtd_from_counts({"a": 10, "b": 1}, {"a": 1, "b": 10})
    by_entity = report.contributions_by_entity()
    assert by_entity["a"].sign == 1  # rank 1 in system 1, rank 2 in system 2
    assert by_entity["b"].sign == -1


def test_rtd_exclusive_entities_marked():
    report = rtd_from_counts({"a": 3, "b": 2}, {"b": 5, "c": 4})
    by_entity = report.contributions_by_entity()
    assert by_entity["a"].exclusive_to == 1
    assert by_entity["c"].exclusive_to == 2
    assert by_entity["b"].exclusive_to is None


def test_rtd_single_entity_systems():
    report = rtd_from_counts({"a": 1}, {"a": 9})
    assert report.total_rtd == 0.0  # both rank 1
    report = rtd_from_counts({"a": 1}, {"b": 1})
    assert report.total_rtd == pytest.approx(1.0, abs=1e-9)


def test_rtd_rejects_bad_alpha():
    ranked = rank({"a": 1})
    with pytest.raises(ValueError):
        rtd(ranked, ranked, alpha=0)
    with pytest.raises(ValueError):
        rtd(ranked, ranked, alpha=-1)


# -- signed contributions ------------------------------------------------------

def test_signed_contributions_directions():
    report = rtd_from_counts({"gaming": 50, "nft": 1}, {"gaming": 1, "nft": 50})
    promoted = signed_contributions(report, 5, PROMOTED_IN_1)
    suppressed = signed_contributions(report, 5, PROMOTED_IN_2)
    assert [e.entity for e in promoted] == ["gaming"]
    assert [e.entity for e in suppressed] == ["nft"]


def test_signed_contributions_k_larger_than_population():
    report = rtd_from_counts({"a": 2, "b": 1}, {"a": 1, "b": 2})
    assert len(signed_contributions(report, 100, PROMOTED_IN_1)) == 1


def test_signed_contributions_all_equal_rankings_empty():
    report = rtd_from_counts({"a": 2, "b": 1}, {"a": 2, "b": 1})
    assert signed_contributions(report, 3, PROMOTED_IN_1) == []
    assert signed_contributions(report, 3, PROMOTED_IN_2) == []


def test_signed_contributions_tiebreak_by_entity():
    # fully disjoint pair: every system-1 entity has identical contribution
    report = rtd_from_counts({"b": 1, "a": 1, "c": 1}, {"z": 1})
    top = signed_contributions(report, 3, PROMOTED_IN_1)
    assert [e.entity for e in top] == ["a", "b", "c"]


def test_signed_contributions_rejects_bad_k():
    report = rtd_from_counts({"a": 1}, {"a": 1})
    with pytest.raises(ValueError):
        signed_contributions(report, 0, PROMOTED_IN_1)
    with pytest.raises(ValueError):
        signed_contributions(report, 1, "sideways")


# -- per-keyword averaging -------------------------------------------------------

def test_mean_keyword_rtd_averages_and_skips_empty():
    corpus = {"a": 10, "b": 5, "c": 1}
    per_kw = {
        "k1": {"a": 3, "b": 1},
        "k2": {"c": 2},
        "k3": {},
    }
    mean, per_keyword = mean_keyword_rtd(per_kw, corpus)
    assert set(per_keyword) == {"k1", "k2"}
    assert mean == pytest.approx(sum(per_keyword.values()) / 2, abs=1e-15)


# -- serialization ----------------------------------------------------------------

def test_divergence_csv_roundtrip(tmp_path):
    report = rtd_from_counts({"a": 5, "b": 2}, {"b": 9, "c": 1})
    csv_path = tmp_path / "report.csv"
    write_divergence_csv(report, csv_path)
    write_divergence_header(report, tmp_path / "report.meta.json")
    rows = read_divergence_csv(csv_path)
    assert [r.entity for r in rows] == [e.entity for e in report.per_entity]
    for row, entry in zip(rows, report.per_entity):
        assert row.rank_1 == entry.rank_1
        assert row.rank_2 == entry.rank_2
        assert row.sign == entry.sign
        assert row.exclusive_to == entry.exclusive_to
        assert row.contribution == pytest.approx(entry.contribution, rel=1e-10)
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert header == "entity,rank_serp,rank_corpus,contribution,sign,exclusive"
