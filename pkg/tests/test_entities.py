"""Entity extraction from URLs, text, and result sets."""

from datetime import date

import numpy as np
import pytest

from serpaudit.entities import (
    entity_extractor_for_schema,
    extract_from_serp,
    hashtags_from_text,
    is_english_like,
    subreddit_from_url,
)
from serpaudit.errors import ConfigurationError
from serpaudit.serp import SerpItem, SerpQuerySpec, SerpResultSet


def result_set(items, site="reddit.com", keyword="cooking"):
    spec = SerpQuerySpec(keyword, site, date(2023, 1, 1), date(2023, 1, 31))
    return SerpResultSet(spec=spec, items=list(items))


# -- subreddit_from_url -------------------------------------------------------

def test_subreddit_from_comment_url():
    url = "https://www.reddit.com/r/AskReddit/comments/x1/whats_up/"
    assert subreddit_from_url(url) == "askreddit"


def test_subreddit_absent_for_user_page():
    assert subreddit_from_url("https://reddit.com/user/foo") is None


def test_subreddit_host_variants():
    assert subreddit_from_url("https://old.reddit.com/r/ffxiv/") == "ffxiv"
    assert subreddit_from_url("http://reddit.com/r/Cooking") == "cooking"


def test_subreddit_rejects_foreign_hosts():
    assert subreddit_from_url("https://notreddit.com/r/ffxiv/") is None
    assert subreddit_from_url("https://reddit.com.evil.example/r/ffxiv/") is None
    assert subreddit_from_url("not a url") is None
    assert subreddit_from_url("") is None


def test_subreddit_bare_r_segment():
    assert subreddit_from_url("https://reddit.com/r/") is None


# -- hashtags_from_text ----------------------------------------------------------

def test_hashtags_case_folded_duplicates_kept():
    assert hashtags_from_text("gm #NFT #nft!") == ["nft", "nft"]


def test_hashtags_none_present():
    assert hashtags_from_text("no tags here") == []


def test_hashtags_alphanumeric():
    assert hashtags_from_text("#unga77 live") == ["unga77"]


def test_hashtags_adjacent_punctuation():
    assert hashtags_from_text("…#linux…") == ["linux"]
    assert hashtags_from_text("(#money)") == ["money"]


def test_hashtags_order_of_appearance():
    assert hashtags_from_text("#b then #a then #c") == ["b", "a", "c"]


def test_hashtags_unicode_word_characters_kept():
    # language filtering is a separate, optional step
    assert hashtags_from_text("#ドラマ now") == ["ドラマ"]


# -- is_english_like ----------------------------------------------------------------

def test_english_like_plain():
    assert is_english_like("peaceday")
    assert is_english_like("unga77")
    assert is_english_like("with_underscore")


def test_english_like_rejects_non_ascii_and_empty():
    assert not is_english_like("ドラマ")
    assert not is_english_like("café")
    assert not is_english_like("")


# -- extract_from_serp -----------------------------------------------------------------

def test_extract_subreddits_counts_unique_urls():
    items = [
        SerpItem(f"https://www.reddit.com/r/Cooking/comments/{i}/", "", "", i + 1, 0)
        for i in range(3)
    ]
    counts = extract_from_serp(result_set(items), "subreddit")
    assert counts.counts == {"cooking": 3}


def test_extract_subreddits_dedupes_repeated_urls():
    url = "https://www.reddit.com/r/ffxiv/comments/abc/"
    items = [SerpItem(url, "", "", 1, rep) for rep in range(3)]
    counts = extract_from_serp(result_set(items), "subreddit")
    assert counts.counts == {"ffxiv": 1}


def test_extract_hashtags_from_titles_and_snippets():
    items = [
        SerpItem("https://twitter.com/u/status/1", "…#linux…", "", 1, 0),
        SerpItem("https://twitter.com/u/status/2", "", "…#linux #money…", 2, 0),
    ]
    counts = extract_from_serp(result_set(items, site="twitter.com"), "hashtag")
    assert counts.counts == {"linux": 2, "money": 1}


def test_extract_empty_result_set():
    counts = extract_from_serp(result_set([]), "subreddit")
    assert counts.counts == {}
    assert counts.total == 0


def test_extract_hashtags_english_filter_toggle():
    items = [SerpItem("https://twitter.com/u/status/9", "#ドラマ #linux", "", 1, 0)]
    strict = extract_from_serp(result_set(items, site="twitter.com"), "hashtag")
    loose = extract_from_serp(
        result_set(items, site="twitter.com"), "hashtag", english_only=False
    )
    assert strict.counts == {"linux": 1}
    assert loose.counts == {"ドラマ": 1, "linux": 1}


def test_extract_rejects_unknown_kind():
    with pytest.raises(ConfigurationError):
        extract_from_serp(result_set([]), "emoji")


def test_extract_is_permutation_invariant():
    rng = np.random.default_rng(8)
    items = [
        SerpItem(
            f"https://www.reddit.com/r/sub{int(rng.integers(0, 6))}/comments/{i}/",
            "", "", i % 10 + 1, i % 3,
        )
        for i in range(40)
    ]
    baseline = extract_from_serp(result_set(items), "subreddit").counts
    for _ in range(5):
        shuffled = [items[int(i)] for i in rng.permutation(len(items))]
        assert extract_from_serp(result_set(shuffled), "subreddit").counts == baseline


def test_extracted_entities_are_normalized():
    rng = np.random.default_rng(15)
    items = [
        SerpItem(
            f"https://www.reddit.com/r/MiXeD{int(rng.integers(0, 9))}/comments/{i}/",
            "#TAG1 text", "#Tag2", i + 1, 0,
        )
        for i in range(25)
    ]
    for kind in ("subreddit", "hashtag"):
        counts = extract_from_serp(
            result_set(items, site="reddit.com" if kind == "subreddit" else "twitter.com"),
            kind,
        )
        for entity in counts.counts:
            assert entity == entity.lower()
            assert "#" not in entity
            assert "/r/" not in entity


def test_subreddit_counts_bounded_by_unique_urls():
    items = [
        SerpItem(f"https://www.reddit.com/r/a/comments/{i}/", "", "", i + 1, 0)
        for i in range(4)
    ] + [SerpItem("https://www.reddit.com/user/nobody", "", "", 5, 0)]
    rs = result_set(items)
    counts = extract_from_serp(rs, "subreddit")
    assert sum(counts.counts.values()) <= len(rs.unique_urls())


# -- schema extractors ---------------------------------------------------------------------

def test_schema_extractor_reddit_post():
    extract = entity_extractor_for_schema("reddit_post")
    assert extract({"subreddit": "AskReddit"}) == ["askreddit"]
    assert extract({"subreddit": "/r/Cooking"}) == ["cooking"]
    assert extract({}) == []


def test_schema_extractor_tweet_hashtags():
    extract = entity_extractor_for_schema("tweet")
    assert extract({"text": "gm #NFT #eth"}) == ["nft", "eth"]
    assert extract({"text": "#ドラマ #ok"}) == ["ok"]


def test_schema_extractor_generic_requires_explicit_kind():
    with pytest.raises(ConfigurationError):
        entity_extractor_for_schema("generic")
    extract = entity_extractor_for_schema("generic", kind="hashtag", field_path="body")
    assert extract({"body": "#works"}) == ["works"]
