"""Streaming ingestion: formats, malformed lines, counting, merging, TSV."""

import gzip
import json
import tracemalloc

import numpy as np
import pytest

from serpaudit.errors import ConfigurationError, DataError
from serpaudit.ingest import (
    TokenCounts,
    count_entities,
    extract_field,
    merge_counts,
    open_stream,
    read_counts_tsv,
    sorted_items,
    write_counts_tsv,
)


def write_ndjson(path, records, malformed_at=()):
    lines = [json.dumps(r) for r in records]
    for idx in sorted(malformed_at, reverse=True):
        lines.insert(idx, '{"broken": ')
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def subreddit_of(record):
    value = record.get("subreddit")
    return [value] if value else []


# -- open_stream ---------------------------------------------------------------

def test_empty_file_yields_nothing(tmp_path):
    path = tmp_path / "empty.ndjson"
    path.write_text("")
    stream = open_stream(path)
    assert list(stream) == []
    assert stream.corrupt_lines == 0
    assert stream.parsed_records == 0


def test_three_valid_lines(tmp_path):
    path = write_ndjson(tmp_path / "ok.ndjson", [{"a": 1}, {"a": 2}, {"a": 3}])
    stream = open_stream(path)
    assert len(list(stream)) == 3
    assert stream.corrupt_lines == 0


def test_malformed_line_counted_and_skipped(tmp_path):
    path = write_ndjson(tmp_path / "bad.ndjson", [{"a": 1}, {"a": 2}], malformed_at=[1])
    stream = open_stream(path)
    records = list(stream)
    assert len(records) == 2
    assert stream.corrupt_lines == 1


def test_corrupt_plus_parsed_equals_physical_lines(tmp_path):
    path = tmp_path / "mixed.ndjson"
    path.write_text('{"a": 1}\n\nnot json\n{"b": 2}\n[1,2]\n', encoding="utf-8")
    stream = open_stream(path)
    records = list(stream)
    assert len(records) == 2
    assert stream.corrupt_lines == 3  # blank, bad JSON, non-object
    assert stream.corrupt_lines + stream.parsed_records == 5


def test_gzip_format(tmp_path):
    path = tmp_path / "dump.ndjson.gz"
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        fh.write('{"subreddit": "ffxiv"}\n{"subreddit": "cooking"}\n')
    stream = open_stream(path, format="ndjson_gzip")
    assert [r["subreddit"] for r in stream] == ["ffxiv", "cooking"]


def test_zstd_without_library_is_config_error(tmp_path):
    try:
        import zstandard  # noqa: F401

        pytest.skip("zstandard installed; error path not reachable")
    except ImportError:
        pass
    path = tmp_path / "dump.ndjson.zst"
    path.write_bytes(b"\x28\xb5\x2f\xfd")
    stream = open_stream(path, format="ndjson_zstd")
    with pytest.raises(ConfigurationError, match="zstandard"):
        list(stream)


def test_unknown_format_rejected(tmp_path):
    path = write_ndjson(tmp_path / "x.ndjson", [{"a": 1}])
    with pytest.raises(ConfigurationError):
        open_stream(path, format="parquet")


def test_unknown_schema_rejected(tmp_path):
    path = write_ndjson(tmp_path / "x.ndjson", [{"a": 1}])
    with pytest.raises(ConfigurationError):
        open_stream(path, schema="mastodon")


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        open_stream(tmp_path / "nope.ndjson")


def test_records_arrive_in_file_order(tmp_path):
    records = [{"i": i} for i in range(20)]
    path = write_ndjson(tmp_path / "ordered.ndjson", records)
    assert [r["i"] for r in open_stream(path)] == list(range(20))


# -- extract_field ----------------------------------------------------------------

def test_extract_field_top_level():
    assert extract_field({"subreddit": "AskReddit"}, "subreddit") == "AskReddit"


def test_extract_field_nested():
    assert extract_field({"a": {"b": 1}}, "a.b") == 1


def test_extract_field_missing_segment_is_absent():
    assert extract_field({"a": {}}, "a.b") is None
    assert extract_field({}, "a.b") is None
    assert extract_field({"a": 3}, "a.b") is None  # non-mapping midway


# -- count_entities ------------------------------------------------------------------

def test_count_entities_single_subreddit(tmp_path):
    path = write_ndjson(tmp_path / "r.ndjson", [{"subreddit": "ffxiv"}] * 3)
    counts = count_entities(open_stream(path, schema="reddit_post"), subreddit_of)
    assert counts.counts == {"ffxiv": 3}
    assert counts.total == 3


def test_count_entities_hashtags_per_occurrence(tmp_path):
    path = write_ndjson(
        tmp_path / "t.ndjson", [{"text": "#nft #nft"}, {"text": "#eth"}]
    )

    def tags(record):
        return [t.lstrip("#") for t in record.get("text", "").split() if t.startswith("#")]

    counts = count_entities(open_stream(path, schema="tweet"), tags)
    assert counts.counts == {"nft": 2, "eth": 1}
    assert counts.total == 3


def test_count_entities_empty_stream(tmp_path):
    path = tmp_path / "e.ndjson"
    path.write_text("")
    counts = count_entities(open_stream(path), subreddit_of)
    assert counts.counts == {}
    assert counts.total == 0


def test_count_entities_normalizes_and_reports_corrupt(tmp_path):
    path = write_ndjson(
        tmp_path / "n.ndjson",
        [{"subreddit": "  FFXIV "}, {"subreddit": "ffxiv"}],
        malformed_at=[1],
    )
    counts = count_entities(open_stream(path), subreddit_of, source_tag="reddit-2023-01")
    assert counts.counts == {"ffxiv": 2}
    assert counts.corrupt_lines == 1
    assert counts.source_tag == "reddit-2023-01"


# -- TokenCounts / merge_counts --------------------------------------------------------

def test_token_counts_total_validated():
    with pytest.raises(DataError):
        TokenCounts({"a": 1}, 2)
    with pytest.raises(DataError):
        TokenCounts({"a": -1}, -1)


def test_merge_counts_pointwise_sum():
    a = TokenCounts({"x": 1}, 1)
    b = TokenCounts({"x": 2, "y": 1}, 3)
    merged = merge_counts(a, b)
    assert merged.counts == {"x": 3, "y": 1}
    assert merged.total == 4


def test_merge_counts_identity():
    a = TokenCounts({"x": 1, "y": 2}, 3, source_tag="a")
    empty = TokenCounts({}, 0)
    merged = merge_counts(a, empty)
    assert merged.counts == a.counts
    assert merged.total == a.total
    assert merged.source_tag == "a"


def test_merge_counts_commutative_associative():
    a = TokenCounts({"x": 1, "y": 2}, 3)
    b = TokenCounts({"y": 5}, 5)
    c = TokenCounts({"z": 1, "x": 4}, 5)
    left = merge_counts(merge_counts(a, b), c)
    right = merge_counts(a, merge_counts(b, c))
    assert left.counts == right.counts == {"x": 5, "y": 7, "z": 1}
    assert merge_counts(a, b).counts == merge_counts(b, a).counts


def test_sharded_count_equals_unsharded(tmp_path):
    rng = np.random.default_rng(5)
    records = [{"subreddit": f"sub{int(rng.integers(0, 12))}"} for _ in range(400)]
    whole = write_ndjson(tmp_path / "whole.ndjson", records)
    expected = count_entities(open_stream(whole), subreddit_of)

    for attempt in range(5):
        k = int(rng.integers(2, 7))
        cuts = sorted(rng.choice(len(records), size=k - 1, replace=False).tolist())
        bounds = [0, *cuts, len(records)]
        merged = TokenCounts({}, 0)
        for s, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
            shard = write_ndjson(tmp_path / f"shard{attempt}_{s}.ndjson", records[lo:hi])
            merged = merge_counts(merged, count_entities(open_stream(shard), subreddit_of))
        assert merged.counts == expected.counts
        assert merged.total == expected.total


def test_merge_order_permuted_over_shards(tmp_path):
    rng = np.random.default_rng(11)
    shards = []
    for s in range(3):
        records = [{"subreddit": f"sub{int(rng.integers(0, 5))}"} for _ in range(50)]
        path = write_ndjson(tmp_path / f"perm{s}.ndjson", records)
        shards.append(count_entities(open_stream(path), subreddit_of))
    sequential = merge_counts(merge_counts(shards[0], shards[1]), shards[2])
    permuted = merge_counts(merge_counts(shards[2], shards[0]), shards[1])
    assert sequential.counts == permuted.counts
    assert sequential.total == permuted.total


# -- TSV serialization -------------------------------------------------------------------

def test_tsv_ordering_and_roundtrip(tmp_path):
    counts = TokenCounts({"beta": 5, "alpha": 5, "gamma": 9, "delta": 1}, 20)
    path = tmp_path / "counts.tsv"
    write_counts_tsv(counts, path)
    assert path.read_text(encoding="utf-8") == "gamma\t9\nalpha\t5\nbeta\t5\ndelta\t1\n"
    back = read_counts_tsv(path)
    assert back.counts == counts.counts
    assert back.total == counts.total


def test_tsv_rejects_malformed(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("a\t1\nb\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_counts_tsv(path)


def test_sorted_items_bit_exact_order():
    counts = TokenCounts({"b": 2, "a": 2, "c": 3}, 7)
    assert sorted_items(counts) == [("c", 3), ("a", 2), ("b", 2)]


# -- streaming memory bound ----------------------------------------------------------------

def test_soak_memory_bounded_on_large_file(tmp_path):
    """1M-line file: peak traced allocation stays far below file size."""
    path = tmp_path / "soak.ndjson"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(1_000_000):
            fh.write('{"subreddit": "sub%d"}\n' % (i % 500))
    file_size = path.stat().st_size
    assert file_size > 20_000_000

    stream = open_stream(path, schema="reddit_post")
    tracemalloc.start()
    counts = count_entities(stream, subreddit_of)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()

    assert counts.total == 1_000_000
    assert len(counts) == 500
    assert stream.corrupt_lines == 0
    # bounded by distinct entities, not record count
    assert peak < file_size / 4
