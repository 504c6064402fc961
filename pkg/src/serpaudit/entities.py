"""Subreddit and hashtag extraction from records and search results."""

from __future__ import annotations

import re
from typing import Callable, Iterable, Mapping
from urllib.parse import urlparse

from .errors import ConfigurationError
from .ingest import ENTITY_FIELDS, TEXT_FIELDS, TokenCounts, extract_field

SUBREDDIT = "subreddit"
HASHTAG = "hashtag"
ENTITY_KINDS = (SUBREDDIT, HASHTAG)

_HASHTAG_RE = re.compile(r"#(\w+)", re.UNICODE)
_ASCII_WORD_RE = re.compile(r"[A-Za-z0-9_]+")


def _host_matches(host: str | None, site: str) -> bool:
    if not host:
        return False
    host = host.lower()
    site = site.lower()
    return host == site or host.endswith("." + site)


def subreddit_from_url(url: str) -> str | None:
    """Lowercased community name for reddit.com ``/r/<name>`` URLs, else None."""
    try:
        parsed = urlparse(url)
    except ValueError:
        return None
    if not _host_matches(parsed.hostname, "reddit.com"):
        return None
    segments = [s for s in parsed.path.split("/") if s]
    if len(segments) >= 2 and segments[0].lower() == "r" and segments[1]:
        return segments[1].lower()
    return None


def hashtags_from_text(text: str) -> list[str]:
    """All ``#word`` tags, lowercased and stripped of '#', duplicates kept."""
    return [tag.lower() for tag in _HASHTAG_RE.findall(text)]


def is_english_like(hashtag: str) -> bool:
    """True iff every character is ASCII alphanumeric or underscore."""
    return bool(_ASCII_WORD_RE.fullmatch(hashtag))


def entity_extractor_for_schema(
    schema: str,
    kind: str | None = None,
    field_path: str | None = None,
    english_only: bool = True,
) -> Callable[[Mapping], list[str]]:
    """Default record -> entities function for a dump schema.

    Reddit schemas read the community name field; tweets mine hashtags out
    of the text field.  ``field_path`` overrides the per-schema default;
    generic schemas require both ``kind`` and ``field_path``.
    """
    if kind is None:
        if schema in ENTITY_FIELDS:
            kind = SUBREDDIT
        elif schema == "tweet":
            kind = HASHTAG
        else:
            raise ConfigurationError(
                f"schema {schema!r} has no default entity kind; pass kind explicitly"
            )
    if kind not in ENTITY_KINDS:
        raise ConfigurationError(f"unknown entity kind {kind!r}")

    if kind == SUBREDDIT:
        path = field_path or ENTITY_FIELDS.get(schema)
        if not path:
            raise ConfigurationError(
                f"schema {schema!r} needs an explicit field path for subreddits"
            )

        def extract(record: Mapping) -> list[str]:
            value = extract_field(record, path)
            if not isinstance(value, str) or not value.strip():
                return []
            return [value.strip().lower().removeprefix("/r/").removeprefix("r/")]

        return extract

    path = field_path or TEXT_FIELDS.get(schema)
    if not path:
        raise ConfigurationError(
            f"schema {schema!r} needs an explicit field path for hashtags"
        )

    def extract_tags(record: Mapping) -> list[str]:
        value = extract_field(record, path)
        if not isinstance(value, str):
            return []
        tags = hashtags_from_text(value)
        if english_only:
            tags = [t for t in tags if is_english_like(t)]
        return tags

    return extract_tags


def extract_from_serp(results, kind: str, english_only: bool = True) -> TokenCounts:
    """Entity counts over one result set's unique URLs.

    Subreddits come from each unique URL; hashtags are mined from the title
    and snippet of each unique item (result pages do not expose full post
    text, so snippets stand in for it).
    """
    if kind not in ENTITY_KINDS:
        raise ConfigurationError(f"unknown entity kind {kind!r}")
    counter: dict[str, int] = {}
    tag = f"serp:{results.spec.rendered_query}"
    for item in results.unique_items():
        if kind == SUBREDDIT:
            name = subreddit_from_url(item.url)
            if name:
                counter[name] = counter.get(name, 0) + 1
        else:
            for text in (item.title, item.snippet):
                for hashtag in hashtags_from_text(text or ""):
                    if english_only and not is_english_like(hashtag):
                        continue
                    counter[hashtag] = counter.get(hashtag, 0) + 1
    return TokenCounts.from_counter(counter, source_tag=tag)
