"""Run configuration: a single TOML file fully determines a pipeline run.

All scientific parameters (alpha, keyword count, repetitions, date windows,
filters) live here; the only environment influence is ``${VAR}`` indirection
for secrets such as API keys.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError
from .ingest import FORMATS, SCHEMAS
from .entities import ENTITY_KINDS, HASHTAG, SUBREDDIT

_ENV_RE = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")


def _interpolate(value):
    if isinstance(value, str):
        match = _ENV_RE.match(value)
        if match:
            return os.environ.get(match.group(1))
        return value
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _require(table: dict, key: str, context: str):
    if key not in table:
        raise ConfigurationError(f"missing config key: {context}.{key}")
    return table[key]


def _as_date(value, context: str) -> date:
    if isinstance(value, date):
        return value
    if isinstance(value, str):
        try:
            return date.fromisoformat(value)
        except ValueError:
            pass
    raise ConfigurationError(f"{context}: expected a calendar date, got {value!r}")


@dataclass(frozen=True)
class CorpusTarget:
    name: str
    dump: Path
    format: str
    schema: str
    site: str
    date_from: date
    date_to: date
    entity_kind: str
    entity_field: str | None = None
    text_field: str | None = None
    labels: Path | None = None
    scores: Path | None = None


@dataclass(frozen=True)
class EngineConfig:
    name: str = "fixture"
    endpoint: str = ""
    api_key: str | None = None
    fixture_profile: Path | None = None


@dataclass(frozen=True)
class SerpSettings:
    repetitions: int = 3
    pages: int = 1
    proxies: tuple[str, ...] = ()
    rps: float = 10.0
    cache_dir: Path | None = None
    retry_max: int = 3
    retry_base_delay: float = 0.5


@dataclass(frozen=True)
class LexiconSettings:
    min_len: int = 3
    min_freq: int = 100
    alphabetic_only: bool = True
    k: int = 1000
    source: str | None = None  # corpus target whose text builds the vocabulary


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    alpha: float = 1.0 / 3.0
    out_dir: Path | None = None
    top_k: int = 25
    hexbin_width: float = 0.3
    permutations: int = 10000
    english_hashtags_only: bool = True


@dataclass(frozen=True)
class Config:
    path: Path
    content_hash: str
    run: RunSettings
    corpora: tuple[CorpusTarget, ...]
    engine: EngineConfig
    serp: SerpSettings
    lexicon: LexiconSettings
    raw: dict = field(repr=False, default_factory=dict)

    def corpus(self, name: str) -> CorpusTarget:
        for target in self.corpora:
            if target.name == name:
                return target
        raise ConfigurationError(f"no corpus target named {name!r}")


def _default_entity_kind(schema: str) -> str:
    return SUBREDDIT if schema.startswith("reddit") else HASHTAG


def load_config(path: str | Path) -> Config:
    """Parse, interpolate, and validate a TOML run configuration.

    Validation errors always name the offending dotted key.  Paths are
    resolved relative to the config file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    raw_bytes = path.read_bytes()
    content_hash = hashlib.sha256(raw_bytes).hexdigest()
    try:
        parsed = tomllib.loads(raw_bytes.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    parsed = _interpolate(parsed)
    base = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    run_table = parsed.get("run", {})
    run = RunSettings(
        seed=int(run_table.get("seed", 0)),
        alpha=float(run_table.get("alpha", 1.0 / 3.0)),
        out_dir=resolve(run_table["out_dir"]) if "out_dir" in run_table else None,
        top_k=int(run_table.get("top_k", 25)),
        hexbin_width=float(run_table.get("hexbin_width", 0.3)),
        permutations=int(run_table.get("permutations", 10000)),
        english_hashtags_only=bool(run_table.get("english_hashtags_only", True)),
    )
    if run.alpha <= 0:
        raise ConfigurationError("run.alpha must be positive")

    corpora = []
    corpus_tables = parsed.get("corpus", {})
    if not isinstance(corpus_tables, dict) or not corpus_tables:
        raise ConfigurationError("missing config key: corpus (need at least one [corpus.<name>])")
    for name, table in corpus_tables.items():
        context = f"corpus.{name}"
        if not isinstance(table, dict):
            raise ConfigurationError(f"{context} must be a table")
        format_ = table.get("format", "ndjson")
        if format_ not in FORMATS:
            raise ConfigurationError(f"{context}.format: unknown format {format_!r}")
        schema = table.get("schema", "generic")
        if schema not in SCHEMAS:
            raise ConfigurationError(f"{context}.schema: unknown schema {schema!r}")
        entity_kind = table.get("entity_kind", _default_entity_kind(schema))
        if entity_kind not in ENTITY_KINDS:
            raise ConfigurationError(f"{context}.entity_kind: unknown kind {entity_kind!r}")
        corpora.append(
            CorpusTarget(
                name=name,
                dump=resolve(_require(table, "dump", context)),
                format=format_,
                schema=schema,
                site=_require(table, "site", context),
                date_from=_as_date(_require(table, "date_from", context), f"{context}.date_from"),
                date_to=_as_date(_require(table, "date_to", context), f"{context}.date_to"),
                entity_kind=entity_kind,
                entity_field=table.get("entity_field"),
                text_field=table.get("text_field"),
                labels=resolve(table["labels"]) if "labels" in table else None,
                scores=resolve(table["scores"]) if "scores" in table else None,
            )
        )
        if corpora[-1].date_from > corpora[-1].date_to:
            raise ConfigurationError(f"{context}.date_from is after {context}.date_to")

    engine_table = parsed.get("engine", {})
    engine = EngineConfig(
        name=engine_table.get("name", "fixture"),
        endpoint=engine_table.get("endpoint", ""),
        api_key=engine_table.get("api_key"),
        fixture_profile=(
            resolve(engine_table["fixture_profile"])
            if "fixture_profile" in engine_table
            else None
        ),
    )
    if engine.name not in ("google", "fixture"):
        raise ConfigurationError(f"engine.name: unknown engine {engine.name!r}")

    rate_table = parsed.get("rate_limit", {})
    serp = SerpSettings(
        repetitions=int(parsed.get("repetitions", 3)),
        pages=int(parsed.get("pages", 1)),
        proxies=tuple(parsed.get("proxies", [])),
        rps=float(rate_table.get("rps", 10.0)),
        cache_dir=resolve(parsed["cache_dir"]) if "cache_dir" in parsed else None,
        retry_max=int(parsed.get("retry_max", 3)),
        retry_base_delay=float(parsed.get("retry_base_delay", 0.5)),
    )
    if serp.repetitions < 1:
        raise ConfigurationError("repetitions must be >= 1")
    if serp.pages < 1:
        raise ConfigurationError("pages must be >= 1")
    if serp.rps <= 0:
        raise ConfigurationError("rate_limit.rps must be positive")

    lex_table = parsed.get("lexicon", {})
    lexicon = LexiconSettings(
        min_len=int(lex_table.get("min_len", 3)),
        min_freq=int(lex_table.get("min_freq", 100)),
        alphabetic_only=bool(lex_table.get("alphabetic_only", True)),
        k=int(lex_table.get("k", 1000)),
        source=lex_table.get("source"),
    )
    if lexicon.k < 1:
        raise ConfigurationError("lexicon.k must be >= 1")
    if lexicon.source is not None and lexicon.source not in corpus_tables:
        raise ConfigurationError(f"lexicon.source: no corpus target named {lexicon.source!r}")

    return Config(
        path=path,
        content_hash=content_hash,
        run=run,
        corpora=tuple(corpora),
        engine=engine,
        serp=serp,
        lexicon=lexicon,
        raw=parsed,
    )


def validate_inputs(config: Config, offline: bool = False) -> None:
    """Check referenced files exist before any stage runs; errors name keys."""
    for target in config.corpora:
        if not target.dump.is_file():
            raise ConfigurationError(
                f"corpus.{target.name}.dump: file not found: {target.dump}"
            )
        for attr in ("labels", "scores"):
            value = getattr(target, attr)
            if value is not None and not value.is_file():
                raise ConfigurationError(
                    f"corpus.{target.name}.{attr}: file not found: {value}"
                )
    engine_name = "fixture" if offline else config.engine.name
    if engine_name == "fixture":
        if config.engine.fixture_profile is None:
            raise ConfigurationError(
                "engine.fixture_profile: required for fixture/offline runs"
            )
        if not config.engine.fixture_profile.is_file():
            raise ConfigurationError(
                f"engine.fixture_profile: file not found: {config.engine.fixture_profile}"
            )
    else:
        if not config.engine.endpoint:
            raise ConfigurationError("engine.endpoint: required for live runs")
