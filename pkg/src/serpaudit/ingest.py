"""Streaming ingestion of line-delimited social-media dumps.

Dumps are NDJSON (one JSON object per line), optionally gzip- or
zstd-compressed.  Files are never loaded whole: iteration is line by line,
so memory stays bounded by the number of distinct entities, not records.
Malformed lines are counted and skipped, never silently dropped.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

from .errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

FORMATS = ("ndjson", "ndjson_gzip", "ndjson_zstd")
SCHEMAS = ("reddit_post", "reddit_comment", "tweet", "generic")

#: Default field carrying the community/topic entity, per record schema.
ENTITY_FIELDS = {"reddit_post": "subreddit", "reddit_comment": "subreddit"}
#: Default field carrying free text, per record schema.
TEXT_FIELDS = {"reddit_post": "title", "reddit_comment": "body", "tweet": "text"}


def _open_raw(path: Path, format: str) -> io.BufferedIOBase:
    if format == "ndjson":
        return open(path, "rb")
    if format == "ndjson_gzip":
        return gzip.open(path, "rb")
    if format == "ndjson_zstd":
        try:
            import zstandard
        except ImportError as exc:  # no wheel on some mirrors; see extras
            raise ConfigurationError(
                "ndjson_zstd requires the 'zstandard' package "
                "(install serpaudit[zstd])"
            ) from exc
        fh = open(path, "rb")
        return io.BufferedReader(zstandard.ZstdDecompressor().stream_reader(fh))
    raise ConfigurationError(f"unknown dump format {format!r} (expected one of {FORMATS})")


@dataclass
class RecordStream:
    """Single-consumer iterator over parsed records of one dump file.

    ``corrupt_lines`` and ``parsed_records`` are updated while iterating;
    re-iterating reopens the file and resets both counters.
    """

    source_path: Path
    format: str = "ndjson"
    record_schema: str = "generic"
    corrupt_lines: int = 0
    parsed_records: int = 0

    def __iter__(self) -> Iterator[dict]:
        self.corrupt_lines = 0
        self.parsed_records = 0
        with _open_raw(self.source_path, self.format) as fh:
            for line in fh:
                if not line.strip():
                    # physically present but empty; counts toward the corrupt
                    # tally so corrupt + parsed == total physical lines
                    self.corrupt_lines += 1
                    continue
                try:
                    record = json.loads(line)
                except (ValueError, UnicodeDecodeError):
                    self.corrupt_lines += 1
                    continue
                if not isinstance(record, dict):
                    self.corrupt_lines += 1
                    continue
                self.parsed_records += 1
                yield record
        if self.corrupt_lines:
            logger.warning(
                "%s: skipped %d malformed line(s)", self.source_path, self.corrupt_lines
            )


def open_stream(
    path: str | Path, format: str = "ndjson", schema: str = "generic"
) -> RecordStream:
    """Open a dump for streaming; validates path, format, and schema up front."""
    path = Path(path)
    if format not in FORMATS:
        raise ConfigurationError(
            f"unknown dump format {format!r} (expected one of {FORMATS})"
        )
    if schema not in SCHEMAS:
        raise ConfigurationError(
            f"unknown record schema {schema!r} (expected one of {SCHEMAS})"
        )
    if not path.is_file():
        raise FileNotFoundError(f"dump file not found: {path}")
    return RecordStream(source_path=path, format=format, record_schema=schema)


def extract_field(record: Mapping, field_path: str):
    """Value at a dotted path, or None when any segment is missing."""
    value = record
    for segment in field_path.split("."):
        if not isinstance(value, Mapping) or segment not in value:
            return None
        value = value[segment]
    return value


def normalize_entity(entity: str) -> str:
    return entity.strip().lower()


@dataclass(frozen=True)
class TokenCounts:
    """Immutable entity -> count table with its total and provenance tag."""

    counts: Mapping[str, int]
    total: int
    source_tag: str = ""
    corrupt_lines: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", dict(self.counts))
        if any(v < 0 for v in self.counts.values()):
            raise DataError("entity counts must be nonnegative")
        if self.total != sum(self.counts.values()):
            raise DataError(
                f"total {self.total} does not match sum of counts "
                f"{sum(self.counts.values())}"
            )

    @classmethod
    def from_counter(
        cls, counter: Mapping[str, int], source_tag: str = "", corrupt_lines: int = 0
    ) -> "TokenCounts":
        """Build from any mapping, normalizing keys and merging collisions."""
        normalized: Counter = Counter()
        for key, value in counter.items():
            key = normalize_entity(key)
            if key:
                normalized[key] += value
        return cls(dict(normalized), sum(normalized.values()), source_tag, corrupt_lines)

    def __len__(self) -> int:
        return len(self.counts)

    def with_tag(self, source_tag: str) -> "TokenCounts":
        return replace(self, source_tag=source_tag)


def count_entities(
    stream: RecordStream | Iterable[Mapping],
    extractor: Callable[[Mapping], Iterable[str]],
    source_tag: str | None = None,
) -> TokenCounts:
    """Tally every (record, occurrence) pair the extractor yields.

    The stream's corrupt-line count is carried into the result so callers
    can report it alongside the totals.
    """
    counter: Counter = Counter()
    for record in stream:
        for entity in extractor(record):
            entity = normalize_entity(entity)
            if entity:
                counter[entity] += 1
    corrupt = stream.corrupt_lines if isinstance(stream, RecordStream) else 0
    if source_tag is None:
        source_tag = (
            stream.source_path.stem if isinstance(stream, RecordStream) else ""
        )
    return TokenCounts(dict(counter), sum(counter.values()), source_tag, corrupt)


def merge_counts(a: TokenCounts, b: TokenCounts) -> TokenCounts:
    """Pointwise sum of two count tables; commutative and associative."""
    merged = dict(a.counts)
    for key, value in b.counts.items():
        merged[key] = merged.get(key, 0) + value
    if not a.source_tag or a.source_tag == b.source_tag:
        tag = b.source_tag or a.source_tag
    elif not b.source_tag:
        tag = a.source_tag
    else:
        tag = f"{a.source_tag}+{b.source_tag}"
    return TokenCounts(merged, a.total + b.total, tag, a.corrupt_lines + b.corrupt_lines)


def sorted_items(counts: TokenCounts) -> list[tuple[str, int]]:
    """Count-descending, entity-ascending order used by every serialization."""
    return sorted(counts.counts.items(), key=lambda kv: (-kv[1], kv[0]))


def write_counts_tsv(counts: TokenCounts, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for entity, count in sorted_items(counts):
            fh.write(f"{entity}\t{count}\n")


def read_counts_tsv(path: str | Path, source_tag: str | None = None) -> TokenCounts:
    path = Path(path)
    counter: dict[str, int] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'entity<TAB>count'")
            entity, count_text = parts
            try:
                count = int(count_text)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad count {count_text!r}") from exc
            counter[entity] = counter.get(entity, 0) + count
    return TokenCounts.from_counter(
        counter, source_tag if source_tag is not None else path.stem
    )
