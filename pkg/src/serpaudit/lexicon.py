"""Vocabulary construction and frequency-stratified keyword sampling.

Keywords drive the search-engine collection: the corpus text is tokenized,
filtered down to a vocabulary of plain alphabetic terms, then sampled at a
fixed stride through the frequency-sorted term list so common, medium, and
rare terms are all represented.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .ingest import TokenCounts, extract_field

# Classic analyzer stop set used for English text (the Lucene default list).
DEFAULT_STOPWORDS = frozenset(
    """a an and are as at be but by for if in into is it no not of on or such
    that the their then there these they this to was will with""".split()
)
DEFAULT_STOPWORD_LIST_ID = "lucene-english-33"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS) -> list[str]:
    """Split on whitespace/punctuation, lowercase, drop stopwords, keep order."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in stopwords]


def token_extractor(
    field_path: str,
    stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
    unique_per_record: bool = True,
) -> Callable[[Mapping], list[str]]:
    """Record -> tokens of one text field.

    With ``unique_per_record`` each token counts once per record, so the
    resulting table is a document-frequency table; otherwise it counts raw
    occurrences.  Both are useful; sampling defaults to document frequency.
    """

    def extract(record: Mapping) -> list[str]:
        text = extract_field(record, field_path)
        if not isinstance(text, str):
            return []
        tokens = tokenize(text, stopwords)
        if unique_per_record:
            tokens = sorted(set(tokens))
        return tokens

    return extract


@dataclass(frozen=True)
class VocabularyFilters:
    min_len: int
    min_freq: int
    alphabetic_only: bool
    stopword_list_id: str


@dataclass(frozen=True)
class Vocabulary:
    """Filtered term -> frequency table plus a record of the filters used."""

    terms: Mapping[str, int]
    filters_applied: VocabularyFilters

    def __post_init__(self):
        object.__setattr__(self, "terms", dict(self.terms))

    def __len__(self) -> int:
        return len(self.terms)


def _is_plain_alphabetic(term: str) -> bool:
    return term.isascii() and term.isalpha()


def build_vocabulary(
    counts: TokenCounts,
    min_len: int = 3,
    min_freq: int = 100,
    alphabetic_only: bool = True,
    stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
    stopword_list_id: str = DEFAULT_STOPWORD_LIST_ID,
) -> Vocabulary:
    """Keep terms that are long enough, frequent enough, plain alphabetic,
    and not stopwords; frequencies pass through unchanged."""
    kept = {
        term: freq
        for term, freq in counts.counts.items()
        if len(term) >= min_len
        and freq >= min_freq
        and term not in stopwords
        and (not alphabetic_only or _is_plain_alphabetic(term))
    }
    return Vocabulary(
        kept, VocabularyFilters(min_len, min_freq, alphabetic_only, stopword_list_id)
    )


def sorted_terms(vocab: Vocabulary) -> list[tuple[str, int]]:
    """Frequency-descending order; ties break lexicographically."""
    return sorted(vocab.terms.items(), key=lambda kv: (-kv[1], kv[0]))


def vocabulary_hash(vocab: Vocabulary) -> str:
    digest = hashlib.sha256()
    for term, freq in sorted(vocab.terms.items()):
        digest.update(f"{term}\t{freq}\n".encode("utf-8"))
    return digest.hexdigest()


@dataclass(frozen=True)
class KeywordSample:
    """Keywords drawn every ``stride`` positions through the sorted vocabulary."""

    keywords: tuple[str, ...]
    sample_size: int  # requested k; len(keywords) == min(k, vocabulary_size)
    stride: int
    vocabulary_size: int
    seed: int


def stratified_sample(vocab: Vocabulary, k: int = 1000, seed: int = 0) -> KeywordSample:
    """Select every stride-th term of the frequency-sorted vocabulary.

    stride = max(1, floor(|vocab| / k)); the starting offset is seed mod
    stride, so reruns with one seed are identical and different seeds walk
    different strata representatives.
    """
    if k <= 0:
        raise ValueError(f"sample size must be positive, got {k!r}")
    if not vocab.terms:
        raise ValueError("cannot sample from an empty vocabulary")
    ordered = [term for term, _ in sorted_terms(vocab)]
    n = len(ordered)
    stride = max(1, n // k)
    offset = seed % stride
    picked = ordered[offset::stride][:k]
    return KeywordSample(tuple(picked), k, stride, n, seed)


def write_keyword_sample(
    sample: KeywordSample, path: str | Path, vocab: Vocabulary | None = None
) -> None:
    """One keyword per line plus a ``<path>.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for keyword in sample.keywords:
            fh.write(keyword + "\n")
    meta = {
        "k": sample.sample_size,
        "stride": sample.stride,
        "seed": sample.seed,
        "vocabulary_size": sample.vocabulary_size,
        "keywords": len(sample.keywords),
        "vocabulary_hash": vocabulary_hash(vocab) if vocab is not None else None,
    }
    with open(sidecar_path(path), "w", encoding="utf-8", newline="") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def load_keywords(path: str | Path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def load_sample_meta(path: str | Path) -> dict | None:
    sidecar = sidecar_path(path)
    if not sidecar.is_file():
        return None
    with open(sidecar, "r", encoding="utf-8") as fh:
        return json.load(fh)
