"""Site-restricted, date-bounded search collection with caching.

Queries render as ``site:{domain} {keyword}`` and run several times each,
because engines answer the same query differently across repetitions; the
result set is the union over repetitions.  Every raw response is cached on
disk keyed by (engine, query, window, repetition, page) so a finished run
replays bit-identically without network access.

Transports are pluggable: ``HttpTransport`` talks to a live endpoint,
``FixtureTransport`` synthesizes deterministic responses from an entity
profile and is what tests and ``--offline`` runs use.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .errors import ConfigurationError, FetchError, RateLimitedError, TransportError

logger = logging.getLogger(__name__)

ENGINES = ("google", "fixture")
DEFAULT_RESULTS_PER_PAGE = 10


@dataclass(frozen=True)
class SerpQuerySpec:
    """One keyword's query: site restriction, date window, and repetitions."""

    keyword: str
    site_filter: str
    date_from: date
    date_to: date
    engine: str = "fixture"
    repetitions: int = 3
    pages: int = 1

    @property
    def rendered_query(self) -> str:
        return f"site:{self.site_filter} {self.keyword}"


def build_query(
    keyword: str,
    site: str,
    date_from: date,
    date_to: date,
    engine: str = "fixture",
    repetitions: int = 3,
    pages: int = 1,
) -> SerpQuerySpec:
    keyword = keyword.strip()
    if not keyword:
        raise ValueError("keyword is empty after trimming")
    if not site.strip():
        raise ValueError("site filter is empty")
    if date_from > date_to:
        raise ValueError(f"date_from {date_from} is after date_to {date_to}")
    if engine not in ENGINES:
        raise ConfigurationError(f"unknown engine {engine!r} (expected one of {ENGINES})")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions!r}")
    if pages < 1:
        raise ValueError(f"pages must be >= 1, got {pages!r}")
    return SerpQuerySpec(keyword, site.strip(), date_from, date_to, engine, repetitions, pages)


@dataclass(frozen=True)
class SerpItem:
    url: str
    title: str
    snippet: str
    position: int
    repetition_index: int


@dataclass
class SerpResultSet:
    """Union of result items across the repetitions of one query.

    ``items`` keeps one entry per (URL, repetition) pair so per-repetition
    provenance survives; URL-level uniqueness is what entity counting uses.
    """

    spec: SerpQuerySpec
    items: list[SerpItem] = field(default_factory=list)
    fetched_at: list[str | None] = field(default_factory=list)
    failed_repetitions: list[int] = field(default_factory=list)
    dropped_offsite: int = 0
    cache_hits: int = 0
    cache_misses: int = 0

    def unique_items(self) -> list[SerpItem]:
        """First-seen item per URL, ordered by (repetition, position)."""
        seen: dict[str, SerpItem] = {}
        for item in sorted(self.items, key=lambda i: (i.repetition_index, i.position)):
            seen.setdefault(item.url, item)
        return list(seen.values())

    def unique_urls(self) -> list[str]:
        return [item.url for item in self.unique_items()]


# -- cache -------------------------------------------------------------------


@dataclass(frozen=True)
class CacheKey:
    engine: str
    query: str
    date_from: date
    date_to: date
    repetition: int
    page: int = 1

    def canonical(self) -> str:
        return "|".join(
            [
                self.engine,
                self.query,
                self.date_from.isoformat(),
                self.date_to.isoformat(),
                str(self.repetition),
                str(self.page),
            ]
        )

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


class CacheStore:
    """Raw responses under ``{root}/{engine}/{sha256}.json``.

    Writes are atomic (temp file + rename) so concurrent writers of distinct
    keys never observe partial files.  Misses are values (None), not errors.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, key: CacheKey) -> Path:
        return self.root / key.engine / f"{key.digest()}.json"

    def get(self, key: CacheKey) -> bytes | None:
        path = self._path(key)
        if not path.is_file():
            return None
        return path.read_bytes()

    def put(self, key: CacheKey, data: bytes) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_bytes(data)
        os.replace(tmp, path)


# -- rate limiting -----------------------------------------------------------


class RateLimiter:
    """Serializes callers so the request rate never exceeds ``rps``.

    Clock and sleep are injectable for testing with fake time.
    """

    def __init__(self, rps: float, clock=time.monotonic, sleep=time.sleep):
        if rps <= 0:
            raise ValueError(f"rps must be positive, got {rps!r}")
        self._interval = 1.0 / rps
        self._clock = clock
        self._sleep = sleep
        self._next_allowed = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next_allowed is not None and now < self._next_allowed:
                self._sleep(self._next_allowed - now)
                now = self._next_allowed
            self._next_allowed = now + self._interval


# -- transports --------------------------------------------------------------


class Transport(Protocol):
    def request(self, spec: SerpQuerySpec, repetition: int, page: int) -> bytes:
        """Return raw response bytes for one (query, repetition, page)."""
        ...


class HttpTransport:
    """Live adapter for a JSON SERP endpoint (google-style responses).

    The date window serializes to the engine's custom-date-range parameter;
    proxies, when given, rotate per request.  Raises ``RateLimitedError`` on
    throttling statuses so the fetch loop can back off and retry.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        proxies: Iterable[str] = (),
        timeout: float = 30.0,
        results_per_page: int = DEFAULT_RESULTS_PER_PAGE,
        session=None,
    ):
        if not endpoint:
            raise ConfigurationError("engine.endpoint is required for live fetching")
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.api_key = api_key
        self.proxies = list(proxies)
        self.timeout = timeout
        self.results_per_page = results_per_page
        self.session = session
        self._request_count = 0

    def params_for(self, spec: SerpQuerySpec, page: int) -> dict:
        cd_min = spec.date_from.strftime("%m/%d/%Y")
        cd_max = spec.date_to.strftime("%m/%d/%Y")
        params = {
            "q": spec.rendered_query,
            "tbs": f"cdr:1,cd_min:{cd_min},cd_max:{cd_max}",
            "page": page,
            "num": self.results_per_page,
        }
        if self.api_key:
            params["api_key"] = self.api_key
        return params

    def request(self, spec: SerpQuerySpec, repetition: int, page: int) -> bytes:
        kwargs = {"params": self.params_for(spec, page), "timeout": self.timeout}
        if self.proxies:
            proxy = self.proxies[self._request_count % len(self.proxies)]
            kwargs["proxies"] = {"http": proxy, "https": proxy}
        self._request_count += 1
        response = self.session.get(self.endpoint, **kwargs)
        if response.status_code in (429, 503):
            raise RateLimitedError(f"HTTP {response.status_code} from {self.endpoint}")
        if response.status_code >= 400:
            raise TransportError(f"HTTP {response.status_code} from {self.endpoint}")
        return response.content


class FixtureTransport:
    """Deterministic offline adapter driven by a site profile.

    The profile maps each site filter to an entity pool with sampling
    weights, a withhold list (never returned), and boost multipliers.  The
    response for a given (query, window, repetition, page) is a pure
    function of those inputs, so runs replay bit-identically.

    Profile shape::

        {"sites": {"reddit.com": {"kind": "subreddit",
                                  "weights": {"cooking": 40, ...},
                                  "withhold": ["gonewild", ...],
                                  "boost": {"ffxiv": 6.0, ...},
                                  "results_per_page": 10}}}
    """

    def __init__(self, profile: dict):
        if "sites" not in profile or not isinstance(profile["sites"], dict):
            raise ConfigurationError("fixture profile must contain a 'sites' table")
        self.profile = profile

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureTransport":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def _site_profile(self, site: str) -> dict:
        try:
            return self.profile["sites"][site]
        except KeyError:
            raise ConfigurationError(f"fixture profile has no site {site!r}") from None

    def request(self, spec: SerpQuerySpec, repetition: int, page: int) -> bytes:
        site = self._site_profile(spec.site_filter)
        withheld = set(site.get("withhold", ()))
        boost = site.get("boost", {})
        pool = [
            (entity, weight * float(boost.get(entity, 1.0)))
            for entity, weight in sorted(site.get("weights", {}).items())
            if entity not in withheld and weight > 0
        ]
        if not pool:
            raise ConfigurationError(f"fixture profile for {spec.site_filter!r} is empty")
        per_page = int(site.get("results_per_page", DEFAULT_RESULTS_PER_PAGE))
        seed_material = CacheKey(
            "fixture", spec.rendered_query, spec.date_from, spec.date_to, repetition, page
        ).canonical()
        seed = int.from_bytes(
            hashlib.sha256(seed_material.encode("utf-8")).digest()[:8], "big"
        )
        rng = np.random.default_rng(seed)
        names = [entity for entity, _ in pool]
        weights = np.array([w for _, w in pool], dtype=float)
        size = min(per_page, len(names))
        chosen = rng.choice(len(names), size=size, replace=False, p=weights / weights.sum())

        kind = site.get("kind", "subreddit")
        results = []
        for slot, idx in enumerate(chosen):
            entity = names[int(idx)]
            position = (page - 1) * per_page + slot + 1
            token = hashlib.sha256(
                f"{seed_material}|{slot}|{entity}".encode("utf-8")
            ).hexdigest()
            if kind == "subreddit":
                url = (
                    f"https://www.reddit.com/r/{entity.capitalize()}/comments/"
                    f"{token[:8]}/{spec.keyword}/"
                )
                title = f"{spec.keyword} discussion in r/{entity.capitalize()}"
                snippet = f"posts about {spec.keyword} from the {entity} community"
            else:
                url = f"https://twitter.com/u{token[:6]}/status/{int(token[:12], 16)}"
                extra_pool = [n for n in names if n != entity]
                n_extra = int(rng.integers(0, 3)) if extra_pool else 0
                extras = [
                    extra_pool[int(i)]
                    for i in rng.choice(len(extra_pool), size=min(n_extra, len(extra_pool)), replace=False)
                ] if n_extra else []
                title = f"{spec.keyword} #{entity}"
                snippet = " ".join([f"talking about {spec.keyword}"] + [f"#{t}" for t in extras])
            results.append(
                {"url": url, "title": title, "snippet": snippet, "position": position}
            )
        payload = {"query": spec.rendered_query, "page": page, "results": results}
        return json.dumps(payload, sort_keys=True).encode("utf-8")


def parse_response(engine: str, raw: bytes) -> list[tuple[str, str, str, int]]:
    """(url, title, snippet, position) tuples from one raw response."""
    try:
        payload = json.loads(raw)
    except ValueError as exc:
        raise TransportError(f"unparseable response: {exc}") from exc
    if engine == "google":
        rows = payload.get("organic_results", [])
        url_key = "link"
    else:
        rows = payload.get("results", [])
        url_key = "url"
    out = []
    for i, row in enumerate(rows):
        url = row.get(url_key)
        if not url:
            continue
        out.append(
            (
                url,
                row.get("title", ""),
                row.get("snippet", ""),
                int(row.get("position", i + 1)),
            )
        )
    return out


# -- fetch -------------------------------------------------------------------


def _utcnow_iso(clock=None) -> str:
    if clock is not None:
        return datetime.fromtimestamp(clock(), tz=timezone.utc).isoformat()
    return datetime.now(tz=timezone.utc).isoformat()


def fetch(
    spec: SerpQuerySpec,
    transport: Transport,
    cache: CacheStore | None = None,
    rate_limiter: RateLimiter | None = None,
    retry_max: int = 3,
    retry_base_delay: float = 0.5,
    sleep=time.sleep,
    clock=None,
) -> SerpResultSet:
    """Run every repetition of a query and return the union result set.

    Each (repetition, page) is served from cache when present, otherwise
    requested through the transport (rate-limited, with exponential backoff
    on throttling).  A failed repetition is recorded and the rest proceed;
    only all repetitions failing raises ``FetchError``.
    """
    result = SerpResultSet(spec=spec)
    for repetition in range(spec.repetitions):
        try:
            rows: list[tuple[str, str, str, int]] = []
            fetched_live = False
            for page in range(1, spec.pages + 1):
                key = CacheKey(
                    spec.engine, spec.rendered_query, spec.date_from, spec.date_to,
                    repetition, page,
                )
                raw = cache.get(key) if cache is not None else None
                if raw is not None:
                    result.cache_hits += 1
                else:
                    raw = _request_with_retry(
                        transport, spec, repetition, page,
                        rate_limiter, retry_max, retry_base_delay, sleep,
                    )
                    fetched_live = True
                    result.cache_misses += 1
                    if cache is not None:
                        cache.put(key, raw)
                rows.extend(parse_response(spec.engine, raw))
        except TransportError as exc:
            logger.warning("repetition %d of %r failed: %s", repetition, spec.rendered_query, exc)
            result.failed_repetitions.append(repetition)
            result.fetched_at.append(None)
            continue

        seen_urls: set[str] = set()
        for url, title, snippet, position in sorted(rows, key=lambda r: r[3]):
            if url in seen_urls:
                continue  # within-repetition duplicate
            seen_urls.add(url)
            if not _url_on_site(url, spec.site_filter):
                result.dropped_offsite += 1
                continue
            result.items.append(SerpItem(url, title, snippet, position, repetition))
        result.fetched_at.append(_utcnow_iso(clock) if fetched_live else None)

    if len(result.failed_repetitions) == spec.repetitions:
        raise FetchError(
            f"all {spec.repetitions} repetitions failed for {spec.rendered_query!r}"
        )
    return result


def _url_on_site(url: str, site: str) -> bool:
    try:
        from urllib.parse import urlparse

        host = urlparse(url).hostname
    except ValueError:
        return False
    if not host:
        return False
    host = host.lower()
    site = site.lower()
    return host == site or host.endswith("." + site)


def _request_with_retry(
    transport: Transport,
    spec: SerpQuerySpec,
    repetition: int,
    page: int,
    rate_limiter: RateLimiter | None,
    retry_max: int,
    retry_base_delay: float,
    sleep,
) -> bytes:
    attempt = 0
    while True:
        if rate_limiter is not None:
            rate_limiter.acquire()
        try:
            return transport.request(spec, repetition, page)
        except RateLimitedError:
            if attempt >= retry_max:
                raise TransportError(
                    f"rate-limited {attempt + 1} times; giving up on "
                    f"{spec.rendered_query!r} repetition {repetition}"
                ) from None
            sleep(retry_base_delay * (2 ** attempt))
            attempt += 1


# -- result set serialization -------------------------------------------------


def result_set_to_dict(result: SerpResultSet) -> dict:
    return {
        "keyword": result.spec.keyword,
        "site": result.spec.site_filter,
        "query": result.spec.rendered_query,
        "date_from": result.spec.date_from.isoformat(),
        "date_to": result.spec.date_to.isoformat(),
        "engine": result.spec.engine,
        "repetitions": result.spec.repetitions,
        "pages": result.spec.pages,
        "failed_repetitions": result.failed_repetitions,
        "dropped_offsite": result.dropped_offsite,
        "items": [
            {
                "url": i.url,
                "title": i.title,
                "snippet": i.snippet,
                "position": i.position,
                "repetition_index": i.repetition_index,
            }
            for i in result.items
        ],
    }


def result_set_from_dict(payload: dict) -> SerpResultSet:
    spec = SerpQuerySpec(
        keyword=payload["keyword"],
        site_filter=payload["site"],
        date_from=date.fromisoformat(payload["date_from"]),
        date_to=date.fromisoformat(payload["date_to"]),
        engine=payload.get("engine", "fixture"),
        repetitions=payload.get("repetitions", 3),
        pages=payload.get("pages", 1),
    )
    result = SerpResultSet(
        spec=spec,
        failed_repetitions=list(payload.get("failed_repetitions", [])),
        dropped_offsite=payload.get("dropped_offsite", 0),
    )
    for row in payload.get("items", []):
        result.items.append(
            SerpItem(
                row["url"],
                row.get("title", ""),
                row.get("snippet", ""),
                int(row.get("position", 0)),
                int(row.get("repetition_index", 0)),
            )
        )
    return result
