"""End-to-end audit pipeline: ingest, vocabulary, keyword sample, SERP
collection, entity extraction, rank divergence, and supporting statistics,
emitted as a reproducible report bundle with a content-hashed manifest.

A run is fully determined by its config file (plus the cache); timestamps
honor ``SOURCE_DATE_EPOCH`` so archived runs can be byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ._version import __version__
from . import divergence, entities, lexicon, serp, stats
from .config import Config, CorpusTarget, load_config, validate_inputs
from .errors import ConfigurationError, StageError, VerificationError
from .ingest import TokenCounts, count_entities, open_stream, sorted_items

logger = logging.getLogger(__name__)

BUNDLE_DIR = "report"
WORK_DIR = "work"


def _now_iso() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = float(epoch) if epoch else time.time()
    return datetime.fromtimestamp(when, tz=timezone.utc).isoformat()


def _round_floats(obj):
    if isinstance(obj, float):
        return float(format(obj, ".12g"))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _json_bytes(obj) -> bytes:
    return (
        json.dumps(_round_floats(obj), indent=2, sort_keys=True, ensure_ascii=True)
        + "\n"
    ).encode("utf-8")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    """Everything needed to audit or replay a finished run."""

    config_hash: str
    tool_version: str = __version__
    keyword_sample_hash: str | None = None
    cache_state: dict = field(default_factory=lambda: {"hits": 0, "misses": 0})
    timestamps: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    status: str = "running"
    seed: int = 0
    alpha: float = 0.0

    def record_stage(self, name: str, records: int, **detail) -> None:
        entry = {"name": name, "records": records}
        entry.update(detail)
        self.stages.append(entry)

    @property
    def completed_stages(self) -> list[str]:
        return [s["name"] for s in self.stages]

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "keyword_sample_hash": self.keyword_sample_hash,
            "cache_state": self.cache_state,
            "timestamps": self.timestamps,
            "stages": self.stages,
            "completed_stages": self.completed_stages,
            "files": self.files,
            "status": self.status,
            "seed": self.seed,
            "alpha": self.alpha,
        }


def build_transport(config: Config, offline: bool = False) -> serp.Transport:
    engine = "fixture" if offline else config.engine.name
    if engine == "fixture":
        if config.engine.fixture_profile is None:
            raise ConfigurationError(
                "engine.fixture_profile: required for fixture/offline runs"
            )
        return serp.FixtureTransport.from_file(config.engine.fixture_profile)
    return serp.HttpTransport(
        endpoint=config.engine.endpoint,
        api_key=config.engine.api_key,
        proxies=config.serp.proxies,
    )


def _control_half(seed: int, index: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") & 1


@dataclass
class _IngestResult:
    entity_counts: TokenCounts
    half_a: TokenCounts
    half_b: TokenCounts
    token_df: TokenCounts | None
    records: int
    corrupt_lines: int


def _ingest_target(
    target: CorpusTarget, seed: int, build_tokens: bool, english_only: bool
) -> _IngestResult:
    """Single streaming pass: entity counts, a seeded random-split control
    pair, and (optionally) document-frequency token counts."""
    stream = open_stream(target.dump, target.format, target.schema)
    extractor = entities.entity_extractor_for_schema(
        target.schema,
        kind=target.entity_kind,
        field_path=target.entity_field,
        english_only=english_only,
    )
    token_extract = None
    if build_tokens:
        text_field = target.text_field or {
            "reddit_post": "title",
            "reddit_comment": "body",
            "tweet": "text",
        }.get(target.schema)
        if not text_field:
            raise ConfigurationError(
                f"corpus.{target.name}.text_field: required for vocabulary building"
            )
        token_extract = lexicon.token_extractor(text_field)

    entity_counter: Counter = Counter()
    half_counters = (Counter(), Counter())
    token_counter: Counter = Counter()
    records = 0
    for record in stream:
        names = [
            e for e in (entities.normalize_entity(x) for x in extractor(record)) if e
        ]
        half = half_counters[_control_half(seed, records)]
        for name in names:
            entity_counter[name] += 1
            half[name] += 1
        if token_extract is not None:
            for token in token_extract(record):
                token_counter[token] += 1
        records += 1

    tag = f"{target.name}-corpus"
    return _IngestResult(
        entity_counts=TokenCounts(
            dict(entity_counter), sum(entity_counter.values()), tag, stream.corrupt_lines
        ),
        half_a=TokenCounts(dict(half_counters[0]), sum(half_counters[0].values()), tag + "-a"),
        half_b=TokenCounts(dict(half_counters[1]), sum(half_counters[1].values()), tag + "-b"),
        token_df=(
            TokenCounts(dict(token_counter), sum(token_counter.values()), tag + "-tokens")
            if build_tokens
            else None
        ),
        records=records,
        corrupt_lines=stream.corrupt_lines,
    )


def _counts_tsv_bytes(counts: TokenCounts) -> bytes:
    out = io.StringIO()
    for entity, count in sorted_items(counts):
        out.write(f"{entity}\t{count}\n")
    return out.getvalue().encode("utf-8")


def _csv_bytes(header: list[str], rows: list[list]) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue().encode("utf-8")


def _fmt(value: float) -> str:
    return format(value, ".12g")


def run_pipeline(
    config: Config | str | Path,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    alpha: float | None = None,
    offline: bool = False,
) -> Path:
    """Execute every stage and write the report bundle; returns its path.

    On stage failure the partial outputs land under ``report/partial/`` and
    the manifest records which stages completed before the error.
    """
    if not isinstance(config, Config):
        config = load_config(config)
    seed = config.run.seed if seed is None else seed
    alpha = config.run.alpha if alpha is None else alpha
    if out_dir is None:
        out_dir = config.run.out_dir
    if out_dir is None:
        raise ConfigurationError("run.out_dir: not in config and no --out-dir given")
    out_dir = Path(out_dir)

    manifest = RunManifest(config_hash=config.content_hash, seed=seed, alpha=alpha)
    manifest.timestamps["started"] = _now_iso()
    report_files: dict[str, bytes] = {}
    work_files: dict[str, bytes] = {}
    stage = "validate"

    try:
        validate_inputs(config, offline=offline)
        manifest.record_stage("validate", len(config.corpora))

        # -- ingest ----------------------------------------------------------
        lex_source = config.lexicon.source or config.corpora[0].name
        ingested: dict[str, _IngestResult] = {}
        for target in config.corpora:
            stage = f"ingest:{target.name}"
            result = _ingest_target(
                target,
                seed,
                build_tokens=(target.name == lex_source),
                english_only=config.run.english_hashtags_only,
            )
            ingested[target.name] = result
            work_files[f"corpus_{target.name}.tsv"] = _counts_tsv_bytes(result.entity_counts)
            manifest.record_stage(
                stage,
                result.records,
                corrupt_lines=result.corrupt_lines,
                entities=len(result.entity_counts),
            )

        # -- vocabulary ------------------------------------------------------
        stage = "vocabulary"
        token_df = ingested[lex_source].token_df
        vocab = lexicon.build_vocabulary(
            token_df,
            min_len=config.lexicon.min_len,
            min_freq=config.lexicon.min_freq,
            alphabetic_only=config.lexicon.alphabetic_only,
        )
        if not vocab.terms:
            raise ConfigurationError(
                "vocabulary is empty after filtering; lower lexicon.min_freq"
            )
        manifest.record_stage(stage, len(vocab), source=lex_source)

        # -- keyword sample ----------------------------------------------------
        stage = "sample"
        sample = lexicon.stratified_sample(vocab, k=config.lexicon.k, seed=seed)
        keywords_bytes = ("".join(kw + "\n" for kw in sample.keywords)).encode("utf-8")
        work_files["keywords.txt"] = keywords_bytes
        work_files["keywords.txt.meta.json"] = _json_bytes(
            {
                "k": sample.sample_size,
                "stride": sample.stride,
                "seed": sample.seed,
                "vocabulary_size": sample.vocabulary_size,
                "keywords": len(sample.keywords),
                "vocabulary_hash": lexicon.vocabulary_hash(vocab),
            }
        )
        manifest.keyword_sample_hash = _sha256(keywords_bytes)
        manifest.record_stage(stage, len(sample.keywords), stride=sample.stride)

        # -- fetch + extract ---------------------------------------------------
        transport = build_transport(config, offline=offline)
        engine = "fixture" if offline else config.engine.name
        cache = serp.CacheStore(config.serp.cache_dir or out_dir / "cache")
        limiter = serp.RateLimiter(config.serp.rps)
        serp_pooled: dict[str, TokenCounts] = {}
        serp_per_keyword: dict[str, dict[str, TokenCounts]] = {}

        for target in config.corpora:
            stage = f"fetch:{target.name}"
            result_sets = []
            for keyword in sample.keywords:
                spec = serp.build_query(
                    keyword,
                    target.site,
                    target.date_from,
                    target.date_to,
                    engine=engine,
                    repetitions=config.serp.repetitions,
                    pages=config.serp.pages,
                )
                result = serp.fetch(
                    spec,
                    transport,
                    cache,
                    rate_limiter=limiter,
                    retry_max=config.serp.retry_max,
                    retry_base_delay=config.serp.retry_base_delay,
                )
                manifest.cache_state["hits"] += result.cache_hits
                manifest.cache_state["misses"] += result.cache_misses
                result_sets.append(result)
            work_files[f"serp_{target.name}_results.ndjson"] = (
                "".join(
                    json.dumps(serp.result_set_to_dict(r), sort_keys=True) + "\n"
                    for r in result_sets
                )
            ).encode("utf-8")
            manifest.record_stage(
                stage,
                len(result_sets),
                items=sum(len(r.items) for r in result_sets),
                failed_repetitions=sum(len(r.failed_repetitions) for r in result_sets),
            )

            stage = f"extract:{target.name}"
            per_keyword: dict[str, TokenCounts] = {}
            pooled = TokenCounts({}, 0, f"{target.name}-serp")
            for result in result_sets:
                counts = entities.extract_from_serp(
                    result, target.entity_kind, english_only=config.run.english_hashtags_only
                )
                per_keyword[result.spec.keyword] = counts
                pooled = TokenCounts(
                    dict(Counter(pooled.counts) + Counter(counts.counts)),
                    pooled.total + counts.total,
                    pooled.source_tag,
                )
            serp_pooled[target.name] = pooled
            serp_per_keyword[target.name] = per_keyword
            work_files[f"serp_{target.name}.tsv"] = _counts_tsv_bytes(pooled)
            work_files[f"serp_{target.name}_per_keyword.json"] = _json_bytes(
                {kw: dict(sorted(c.counts.items())) for kw, c in sorted(per_keyword.items())}
            )
            manifest.record_stage(stage, len(pooled), occurrences=pooled.total)

        # -- rank + divergence -------------------------------------------------
        reports: dict[str, divergence.DivergenceReport] = {}
        for target in config.corpora:
            name = target.name
            stage = f"rtd:{name}"
            corpus_counts = ingested[name].entity_counts
            pooled = serp_pooled[name]
            if not pooled.counts:
                raise ConfigurationError(
                    f"no entities extracted from SERP results for corpus.{name}"
                )
            report = divergence.rtd_from_counts(pooled, corpus_counts, alpha)
            reports[name] = report
            mean_rtd, per_kw_rtd = divergence.mean_keyword_rtd(
                serp_per_keyword[name], corpus_counts, alpha
            )
            control = divergence.rtd_from_counts(
                ingested[name].half_a, ingested[name].half_b, alpha
            )

            csv_buf = io.StringIO()
            writer = csv.writer(csv_buf, lineterminator="\n")
            writer.writerow(divergence.CSV_HEADER)
            for e in report.per_entity:
                writer.writerow(
                    [
                        e.entity,
                        format(e.rank_1, ".1f"),
                        format(e.rank_2, ".1f"),
                        _fmt(e.contribution),
                        e.sign,
                        "" if e.exclusive_to is None else e.exclusive_to,
                    ]
                )
            report_files[f"rtd_{name}.csv"] = csv_buf.getvalue().encode("utf-8")
            report_files[f"rtd_{name}.meta.json"] = _json_bytes(
                divergence.divergence_header(
                    report,
                    site=target.site,
                    system1="serp",
                    system2="corpus",
                    pooled_rtd=report.total_rtd,
                    mean_keyword_rtd=mean_rtd,
                    keyword_rtds=per_kw_rtd,
                    control_rtd=control.total_rtd,
                )
            )
            manifest.record_stage(
                stage,
                len(report.per_entity),
                pooled_rtd=float(_fmt(report.total_rtd)),
                mean_keyword_rtd=float(_fmt(mean_rtd)),
                control_rtd=float(_fmt(control.total_rtd)),
            )

        stage = "toplists"
        promoted_rows, suppressed_rows = [], []
        for target in config.corpora:
            report = reports[target.name]
            for direction, rows in (
                (divergence.PROMOTED_IN_1, promoted_rows),
                (divergence.PROMOTED_IN_2, suppressed_rows),
            ):
                for e in divergence.signed_contributions(report, config.run.top_k, direction):
                    rows.append(
                        [
                            target.name,
                            e.entity,
                            format(e.rank_1, ".1f"),
                            format(e.rank_2, ".1f"),
                            _fmt(e.contribution),
                            "" if e.exclusive_to is None else e.exclusive_to,
                        ]
                    )
        top_header = ["site", "entity", "rank_serp", "rank_corpus", "contribution", "exclusive"]
        report_files["promoted.csv"] = _csv_bytes(top_header, promoted_rows)
        report_files["suppressed.csv"] = _csv_bytes(top_header, suppressed_rows)
        manifest.record_stage(stage, len(promoted_rows) + len(suppressed_rows))

        # -- supporting statistics ---------------------------------------------
        stage = "analytics"
        regression_payload = {}
        hexbin_rows = []
        proportion_rows = []
        toxicity_rows = []
        for target in config.corpora:
            name = target.name
            corpus_counts = ingested[name].entity_counts.counts
            pooled = serp_pooled[name].counts
            pairs = [
                (float(corpus_counts.get(entity, 0)), float(count))
                for entity, count in sorted(pooled.items())
            ]
            if len(pairs) >= 2:
                reg = stats.loglog_regression(
                    pairs, permutations=config.run.permutations, seed=seed
                )
                regression_payload[name] = {
                    "slope": reg.slope,
                    "intercept": reg.intercept,
                    "r_squared": reg.r_squared,
                    "p_value": reg.p_value,
                    "n": reg.n,
                    "n_clamped": reg.n_clamped,
                }
                for hb in stats.hexbin(pairs, config.run.hexbin_width):
                    hexbin_rows.append(
                        [name, _fmt(hb.center_x), _fmt(hb.center_y), hb.count]
                    )

            if target.labels is not None:
                labels = stats.read_labels(target.labels)
                membership = {
                    entity: ("in_serp" if entity in pooled else "not_in_serp")
                    for entity in labels
                }
                comparison = stats.group_proportions(labels, membership)
                for group, categories in comparison.proportions.items():
                    for category, proportion in categories.items():
                        proportion_rows.append(
                            [
                                name,
                                group,
                                category,
                                comparison.counts[group][category],
                                _fmt(proportion),
                            ]
                        )

            if target.scores is not None:
                for group, by_label in sorted(stats.read_scores(target.scores).items()):
                    for label in stats.SCORE_COLUMNS:
                        scores = by_label[label]
                        if not scores:
                            continue
                        ci = stats.mean_ci(scores)
                        toxicity_rows.append(
                            [name, group, label, _fmt(ci.mean), _fmt(ci.half_width),
                             _fmt(ci.level), ci.n]
                        )

        report_files["regression.json"] = _json_bytes(regression_payload)
        report_files["hexbin.csv"] = _csv_bytes(
            ["site", "hex_x", "hex_y", "count"], hexbin_rows
        )
        report_files["proportions.csv"] = _csv_bytes(
            ["site", "group", "category", "count", "proportion"], proportion_rows
        )
        report_files["toxicity_ci.csv"] = _csv_bytes(
            ["site", "group", "label", "mean", "ci_half_width", "level", "n"],
            toxicity_rows,
        )
        manifest.record_stage(stage, len(regression_payload))

    except Exception as exc:
        manifest.status = f"failed:{stage}"
        manifest.timestamps["finished"] = _now_iso()
        _write_bundle(out_dir, manifest, report_files, work_files, partial=True)
        raise StageError(stage, exc) from exc

    manifest.status = "complete"
    manifest.timestamps["finished"] = _now_iso()
    bundle = _write_bundle(out_dir, manifest, report_files, work_files, partial=False)
    logger.info("report bundle written to %s", bundle)
    return bundle


def _write_bundle(
    out_dir: Path,
    manifest: RunManifest,
    report_files: dict[str, bytes],
    work_files: dict[str, bytes],
    partial: bool,
) -> Path:
    bundle = out_dir / BUNDLE_DIR
    work = out_dir / WORK_DIR
    bundle.mkdir(parents=True, exist_ok=True)
    work.mkdir(parents=True, exist_ok=True)
    for rel, data in work_files.items():
        path = work / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        manifest.files[f"{WORK_DIR}/{rel}"] = _sha256(data)
    prefix = "partial/" if partial else ""
    for rel, data in report_files.items():
        path = bundle / (prefix + rel)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        manifest.files[prefix + rel] = _sha256(data)
    (bundle / "manifest.json").write_bytes(_json_bytes(manifest.to_dict()))
    return bundle


def verify_bundle(bundle_dir: str | Path) -> dict:
    """Recompute every content hash in a bundle's manifest; raise on mismatch."""
    bundle_dir = Path(bundle_dir)
    manifest_path = bundle_dir / "manifest.json"
    if not manifest_path.is_file():
        raise VerificationError(f"no manifest.json under {bundle_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    mismatches = []
    for rel, expected in sorted(manifest.get("files", {}).items()):
        if rel.startswith(f"{WORK_DIR}/"):
            path = bundle_dir.parent / rel
        else:
            path = bundle_dir / rel
        if not path.is_file():
            mismatches.append(f"{rel}: missing")
            continue
        actual = _sha256(path.read_bytes())
        if actual != expected:
            mismatches.append(f"{rel}: hash mismatch")
    if mismatches:
        raise VerificationError("; ".join(mismatches))
    return manifest
