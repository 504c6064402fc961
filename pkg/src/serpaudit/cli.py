"""Command-line surface: one subcommand per pipeline stage plus ``report``
for full runs and bundle verification.

Exit codes: 0 success, 1 stage/data failure, 2 usage error.
"""

from __future__ import annotations

import json
import logging
import sys
from datetime import date
from pathlib import Path

import click

from ._version import __version__
from . import divergence, entities, lexicon, serp, stats
from .config import load_config
from .errors import AuditError
from .ingest import (
    count_entities,
    merge_counts,
    open_stream,
    read_counts_tsv,
    write_counts_tsv,
    TokenCounts,
)
from .pipeline import build_transport, run_pipeline, verify_bundle

logger = logging.getLogger(__name__)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


@click.group()
@click.version_option(version=__version__)
def main():
    """Audit how search-engine results represent communities and topics."""


@main.command()
@click.option("--dump", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--format", "format_", default="ndjson", show_default=True,
              type=click.Choice(["ndjson", "ndjson_gzip", "ndjson_zstd"]))
@click.option("--schema", default="generic", show_default=True,
              type=click.Choice(["reddit_post", "reddit_comment", "tweet", "generic"]))
@click.option("--entity", "entity_mode", default=None,
              type=click.Choice(["subreddit", "hashtag", "tokens"]),
              help="What to count; defaults to the schema's natural entity.")
@click.option("--field", "field_path", default=None,
              help="Dotted field path override for the entity or text source.")
@click.option("--count-mode", default="df", show_default=True,
              type=click.Choice(["df", "occurrences"]),
              help="Token counting: per-record document frequency or raw occurrences.")
@click.option("--tag", default=None, help="source_tag recorded in the output.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--verbose", is_flag=True)
def ingest(dump, format_, schema, entity_mode, field_path, count_mode, tag, out, verbose):
    """Stream a dump file and write an entity<TAB>count table."""
    _setup_logging(verbose)
    try:
        stream = open_stream(dump, format_, schema)
        if entity_mode == "tokens":
            extractor = lexicon.token_extractor(
                field_path or {"reddit_post": "title", "reddit_comment": "body",
                               "tweet": "text"}.get(schema, "text"),
                unique_per_record=(count_mode == "df"),
            )
        else:
            extractor = entities.entity_extractor_for_schema(
                schema, kind=entity_mode, field_path=field_path
            )
        counts = count_entities(stream, extractor, source_tag=tag)
        write_counts_tsv(counts, out)
    except (AuditError, OSError) as exc:
        raise _fail(exc)
    click.echo(
        f"{counts.total} occurrences of {len(counts)} entities "
        f"({counts.corrupt_lines} malformed lines skipped) -> {out}"
    )


@main.command("sample-keywords")
@click.option("--counts", "counts_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Token count TSV produced by `ingest --entity tokens`.")
@click.option("--k", default=1000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--min-len", default=3, show_default=True, type=int)
@click.option("--min-freq", default=100, show_default=True, type=int)
@click.option("--keep-nonalphabetic", is_flag=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--verbose", is_flag=True)
def sample_keywords(counts_path, k, seed, min_len, min_freq, keep_nonalphabetic, out, verbose):
    """Build the filtered vocabulary and draw the stratified keyword sample."""
    _setup_logging(verbose)
    try:
        counts = read_counts_tsv(counts_path)
        vocab = lexicon.build_vocabulary(
            counts, min_len=min_len, min_freq=min_freq,
            alphabetic_only=not keep_nonalphabetic,
        )
        sample = lexicon.stratified_sample(vocab, k=k, seed=seed)
        lexicon.write_keyword_sample(sample, out, vocab=vocab)
    except (AuditError, ValueError, OSError) as exc:
        raise _fail(exc)
    click.echo(
        f"{len(sample.keywords)} keywords (stride {sample.stride} over "
        f"{sample.vocabulary_size} terms) -> {out}"
    )


@main.command("fetch-serp")
@click.option("--keywords", "keywords_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--site", required=True)
@click.option("--date-from", required=True, type=click.DateTime(["%Y-%m-%d"]))
@click.option("--date-to", required=True, type=click.DateTime(["%Y-%m-%d"]))
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="Config supplying engine/cache/rate-limit settings.")
@click.option("--offline", is_flag=True, help="Force the fixture transport.")
@click.option("--cache-dir", default=None, type=click.Path(path_type=Path))
@click.option("--repetitions", default=None, type=int)
@click.option("--pages", default=None, type=int)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--verbose", is_flag=True)
def fetch_serp(keywords_path, site, date_from, date_to, config_path, offline,
               cache_dir, repetitions, pages, out, verbose):
    """Run site-restricted queries for every keyword; write result sets as NDJSON."""
    _setup_logging(verbose)
    try:
        if config_path is None:
            raise click.UsageError("--config is required (engine settings live there)")
        config = load_config(config_path)
        transport = build_transport(config, offline=offline)
        engine = "fixture" if offline else config.engine.name
        cache = serp.CacheStore(cache_dir or config.serp.cache_dir or out.parent / "cache")
        limiter = serp.RateLimiter(config.serp.rps)
        keywords = lexicon.load_keywords(keywords_path)
        with open(out, "w", encoding="utf-8", newline="") as fh:
            for keyword in keywords:
                spec = serp.build_query(
                    keyword, site, date_from.date(), date_to.date(), engine=engine,
                    repetitions=repetitions or config.serp.repetitions,
                    pages=pages or config.serp.pages,
                )
                result = serp.fetch(
                    spec, transport, cache, rate_limiter=limiter,
                    retry_max=config.serp.retry_max,
                    retry_base_delay=config.serp.retry_base_delay,
                )
                fh.write(json.dumps(serp.result_set_to_dict(result), sort_keys=True) + "\n")
    except (AuditError, ValueError, OSError) as exc:
        raise _fail(exc)
    click.echo(f"{len(keywords)} queries fetched -> {out}")


@main.command()
@click.option("--serp", "serp_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Result-set NDJSON produced by fetch-serp.")
@click.option("--kind", required=True, type=click.Choice(["subreddit", "hashtag"]))
@click.option("--all-hashtags", is_flag=True, help="Keep non-English-like hashtags.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--per-keyword-out", default=None, type=click.Path(path_type=Path))
@click.option("--verbose", is_flag=True)
def extract(serp_path, kind, all_hashtags, out, per_keyword_out, verbose):
    """Derive entity counts from fetched result sets."""
    _setup_logging(verbose)
    try:
        pooled = TokenCounts({}, 0, "serp")
        per_keyword = {}
        with open(serp_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                result = serp.result_set_from_dict(json.loads(line))
                counts = entities.extract_from_serp(
                    result, kind, english_only=not all_hashtags
                )
                per_keyword[result.spec.keyword] = counts
                pooled = merge_counts(pooled, counts.with_tag(pooled.source_tag))
        write_counts_tsv(pooled, out)
        if per_keyword_out:
            payload = {
                kw: dict(sorted(c.counts.items())) for kw, c in sorted(per_keyword.items())
            }
            Path(per_keyword_out).write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
    except (AuditError, ValueError, OSError) as exc:
        raise _fail(exc)
    click.echo(f"{pooled.total} occurrences of {len(pooled)} entities -> {out}")


@main.command()
@click.option("--left", required=True, type=click.Path(exists=True, path_type=Path),
              help="Corpus-side (reference) entity counts TSV.")
@click.option("--right", required=True, type=click.Path(exists=True, path_type=Path),
              help="SERP-side (sample) entity counts TSV.")
@click.option("--alpha", default=divergence.DEFAULT_ALPHA, show_default=True, type=float)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--top-k", default=0, type=int,
              help="Also print the k most promoted/suppressed entities.")
@click.option("--verbose", is_flag=True)
def diverge(left, right, alpha, out, top_k, verbose):
    """Rank both count tables and report their divergence (system 1 = right/SERP)."""
    _setup_logging(verbose)
    try:
        corpus = read_counts_tsv(left)
        sample = read_counts_tsv(right)
        report = divergence.rtd_from_counts(sample, corpus, alpha)
        divergence.write_divergence_csv(report, out)
        divergence.write_divergence_header(
            report, Path(out).with_suffix(".meta.json"),
            system1=str(right), system2=str(left),
        )
    except (AuditError, ValueError, OSError) as exc:
        raise _fail(exc)
    click.echo(f"total divergence {report.total_rtd:.6f} over "
               f"{len(report.per_entity)} entities -> {out}")
    if top_k:
        for direction, label in (
            (divergence.PROMOTED_IN_1, "promoted in SERP"),
            (divergence.PROMOTED_IN_2, "suppressed in SERP"),
        ):
            names = [e.entity for e in divergence.signed_contributions(report, top_k, direction)]
            click.echo(f"{label}: {', '.join(names) if names else '(none)'}")


@main.command("stats")
@click.option("--regression", "regression_path", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="CSV of x,y count pairs (header optional).")
@click.option("--permutations", default=10000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--hexbin", "hexbin_path", default=None,
              type=click.Path(exists=True, path_type=Path))
@click.option("--bin-width", default=0.3, show_default=True, type=float)
@click.option("--mean-ci", "scores_path", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="Score CSV: post_id,group,toxic,obscene,insult.")
@click.option("--proportions", "labels_path", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="Label CSV: entity,category (needs --membership).")
@click.option("--membership", "membership_path", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="Membership CSV: entity,group.")
@click.option("--out", default=None, type=click.Path(path_type=Path),
              help="Output path (JSON or CSV depending on the operation).")
@click.option("--verbose", is_flag=True)
def stats_cmd(regression_path, permutations, seed, hexbin_path, bin_width,
              scores_path, labels_path, membership_path, out, verbose):
    """Supporting statistics over externally supplied tables."""
    _setup_logging(verbose)
    ops = [p for p in (regression_path, hexbin_path, scores_path, labels_path) if p]
    if not ops:
        raise click.UsageError(
            "pick one of --regression / --hexbin / --mean-ci / --proportions"
        )
    if len(ops) > 1:
        raise click.UsageError("pick exactly one statistics operation per invocation")
    try:
        if regression_path:
            pairs = _read_pairs(regression_path)
            reg = stats.loglog_regression(pairs, permutations=permutations, seed=seed)
            payload = {
                "slope": reg.slope, "intercept": reg.intercept,
                "r_squared": reg.r_squared, "p_value": reg.p_value,
                "n": reg.n, "n_clamped": reg.n_clamped,
            }
            _emit_json(payload, out)
        elif hexbin_path:
            bins = stats.hexbin(_read_pairs(hexbin_path), bin_width)
            lines = ["hex_x,hex_y,count"]
            lines += [f"{b.center_x:.12g},{b.center_y:.12g},{b.count}" for b in bins]
            _emit_text("\n".join(lines) + "\n", out)
        elif scores_path:
            rows = ["group,label,mean,ci_half_width,level,n"]
            for group, by_label in sorted(stats.read_scores(scores_path).items()):
                for label in stats.SCORE_COLUMNS:
                    if not by_label[label]:
                        continue
                    ci = stats.mean_ci(by_label[label])
                    rows.append(
                        f"{group},{label},{ci.mean:.12g},{ci.half_width:.12g},"
                        f"{ci.level:.12g},{ci.n}"
                    )
            _emit_text("\n".join(rows) + "\n", out)
        else:
            if not membership_path:
                raise click.UsageError("--proportions requires --membership")
            labels = stats.read_labels(labels_path)
            membership = stats.read_labels(membership_path)  # same 2-column shape
            comparison = stats.group_proportions(labels, membership)
            rows = ["group,category,count,proportion"]
            for group, categories in comparison.proportions.items():
                for category, proportion in categories.items():
                    rows.append(
                        f"{group},{category},{comparison.counts[group][category]},"
                        f"{proportion:.12g}"
                    )
            _emit_text("\n".join(rows) + "\n", out)
    except (AuditError, ValueError, OSError) as exc:
        raise _fail(exc)


@main.command()
@click.option("--keywords", "keywords_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Corpus-side entity counts TSV.")
@click.option("--serp-per-keyword", "per_keyword_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="JSON keyword -> entity -> count (from extract --per-keyword-out).")
@click.option("--folds", default=5, show_default=True, type=int)
@click.option("--fraction", default=0.8, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--alpha", default=divergence.DEFAULT_ALPHA, show_default=True, type=float)
@click.option("--out", default=None, type=click.Path(path_type=Path))
@click.option("--verbose", is_flag=True)
def crossval(keywords_path, corpus_path, per_keyword_path, folds, fraction, seed,
             alpha, out, verbose):
    """Divergence stability across seeded keyword subsets."""
    _setup_logging(verbose)
    try:
        keywords = lexicon.load_keywords(keywords_path)
        corpus = read_counts_tsv(corpus_path)
        per_keyword = json.loads(Path(per_keyword_path).read_text(encoding="utf-8"))

        def evaluate(subset: list[str]) -> float:
            pooled: dict[str, int] = {}
            for keyword in subset:
                for entity, count in per_keyword.get(keyword, {}).items():
                    pooled[entity] = pooled.get(entity, 0) + count
            if not pooled:
                raise AuditError("keyword subset produced no SERP entities")
            return divergence.rtd_from_counts(pooled, corpus, alpha).total_rtd

        result = stats.keyword_crossval(
            keywords, folds=folds, fraction=fraction, seed=seed, evaluator=evaluate
        )
        payload = {
            "fold_rtds": list(result.fold_values),
            "min": result.minimum, "max": result.maximum,
            "mean": result.mean, "stdev": result.stdev,
            "fold_size": result.fold_size, "folds": folds,
            "fraction": fraction, "seed": seed, "alpha": alpha,
        }
        _emit_json(payload, out)
    except (AuditError, ValueError, OSError) as exc:
        raise _fail(exc)


@main.command()
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out-dir", default=None, type=click.Path(path_type=Path))
@click.option("--seed", default=None, type=int)
@click.option("--alpha", default=None, type=float)
@click.option("--offline", is_flag=True, help="Use the fixture transport only.")
@click.option("--verify", "verify_dir", default=None,
              type=click.Path(exists=True, path_type=Path),
              help="Verify an existing bundle's content hashes instead of running.")
@click.option("--verbose", is_flag=True)
def report(config_path, out_dir, seed, alpha, offline, verify_dir, verbose):
    """Run the full pipeline and write a report bundle (or --verify one)."""
    _setup_logging(verbose)
    if verify_dir is not None:
        try:
            manifest = verify_bundle(verify_dir)
        except AuditError as exc:
            raise _fail(exc)
        click.echo(f"ok: {len(manifest.get('files', {}))} files verified")
        return
    if config_path is None:
        raise click.UsageError("--config is required unless --verify is given")
    try:
        bundle = run_pipeline(
            config_path, out_dir=out_dir, seed=seed, alpha=alpha, offline=offline
        )
    except (AuditError, OSError) as exc:
        raise _fail(exc)
    click.echo(f"report bundle: {bundle}")


def _read_pairs(path: Path) -> list[tuple[float, float]]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace("\t", ",").split(",")
            if lineno == 1 and not _is_number(parts[0]):
                continue  # header
            if len(parts) < 2:
                raise AuditError(f"{path}:{lineno}: expected two columns")
            pairs.append((float(parts[0]), float(parts[1])))
    return pairs


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _emit_json(payload: dict, out: Path | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


def _emit_text(text: str, out: Path | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="")
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
