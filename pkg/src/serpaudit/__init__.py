"""serpaudit: measure how search-engine results over- or under-represent
communities (subreddits) and topics (hashtags) relative to a nonsampled
corpus, via rank turbulence divergence and supporting statistics."""

from ._version import __version__
from .ingest import (
    RecordStream,
    TokenCounts,
    count_entities,
    extract_field,
    merge_counts,
    open_stream,
    read_counts_tsv,
    write_counts_tsv,
)
from .lexicon import (
    KeywordSample,
    Vocabulary,
    build_vocabulary,
    stratified_sample,
    tokenize,
)
from .entities import (
    extract_from_serp,
    hashtags_from_text,
    is_english_like,
    subreddit_from_url,
)
from .serp import (
    CacheKey,
    CacheStore,
    FixtureTransport,
    HttpTransport,
    RateLimiter,
    SerpItem,
    SerpQuerySpec,
    SerpResultSet,
    build_query,
    fetch,
)
from .divergence import (
    DivergenceReport,
    RankedDistribution,
    element_divergence,
    rank,
    rtd,
    rtd_from_counts,
    signed_contributions,
)
from .stats import (
    CiStat,
    GroupComparison,
    RegressionResult,
    group_proportions,
    hexbin,
    keyword_crossval,
    loglog_regression,
    mean_ci,
)
from .config import Config, load_config
from .pipeline import RunManifest, run_pipeline, verify_bundle

__all__ = [
    "__version__",
    "RecordStream", "TokenCounts", "count_entities", "extract_field",
    "merge_counts", "open_stream", "read_counts_tsv", "write_counts_tsv",
    "KeywordSample", "Vocabulary", "build_vocabulary", "stratified_sample",
    "tokenize",
    "extract_from_serp", "hashtags_from_text", "is_english_like",
    "subreddit_from_url",
    "CacheKey", "CacheStore", "FixtureTransport", "HttpTransport",
    "RateLimiter", "SerpItem", "SerpQuerySpec", "SerpResultSet",
    "build_query", "fetch",
    "DivergenceReport", "RankedDistribution", "element_divergence", "rank",
    "rtd", "rtd_from_counts", "signed_contributions",
    "CiStat", "GroupComparison", "RegressionResult", "group_proportions",
    "hexbin", "keyword_crossval", "loglog_regression", "mean_ci",
    "Config", "load_config",
    "RunManifest", "run_pipeline", "verify_bundle",
]
