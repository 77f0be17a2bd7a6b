import math
from collections import Counter

import numpy as np
import pytest

from src.rag_corpus import Document
from src.rag_retriever import (
    BM25Params,
    BM25Retriever,
    IndexFormatError,
    bm25_score,
    check_snapshot,
    build_index,
    load_index,
    retrieve,
    save_index,
    tokenize,
)


def brute_force(docs, query, k, k1=1.2, b=0.75):
    """Score every document from raw token counts and sort by (score desc, ordinal asc)."""
    tokenized = [doc.text.lower().split() for doc in docs]
    n = len(docs)
    avgdl = sum(len(t) for t in tokenized) / n
    q_terms = query.lower().split()
    scored = []
    for ordinal, terms in enumerate(tokenized):
        counts = Counter(terms)
        score = 0.0
        for term in q_terms:
            tf = counts[term]
            if not tf:
                continue
            df = sum(1 for t in tokenized if term in t)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            score += idf * (tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(terms) / avgdl)))
        if score > 0:
            scored.append((score, ordinal))
    scored.sort(key=lambda x: (-x[0], x[1]))
    return [(docs[o].doc_id, s) for s, o in scored[:k]]


def random_corpus(rng):
    vocab = [f"w{i}" for i in range(int(rng.integers(2, 41)))]
    docs = []
    for i in range(int(rng.integers(1, 51))):
        length = int(rng.integers(1, 12))
        docs.append(Document(f"doc{i}", "", " ".join(rng.choice(vocab, size=length))))
    query = " ".join(rng.choice(vocab + ["zz"], size=int(rng.integers(1, 6))))
    return docs, query


def test_retrieve_matches_brute_force_on_random_corpora():
    rng = np.random.default_rng(1234)
    for _ in range(200):
        docs, query = random_corpus(rng)
        k = int(rng.integers(1, 8))
        index = build_index(docs)
        got = [(d.doc_id, d.score) for d in retrieve(index, query, k)]
        expected = brute_force(docs, query, k)
        assert [g[0] for g in got] == [e[0] for e in expected]
        for (_, s_got), (_, s_exp) in zip(got, expected):
            assert s_got == pytest.approx(s_exp, rel=1e-12, abs=1e-12)


def test_ranks_are_contiguous_from_one(small_retriever):
    hits = small_retriever.retrieve("founded by", 3)
    assert [h.rank for h in hits] == list(range(1, len(hits) + 1))


def test_equal_scores_break_by_ordinal():
    docs = [Document("b", "", "alpha beta"), Document("a", "", "alpha beta")]
    hits = retrieve(build_index(docs), "alpha", 2)
    assert [h.doc_id for h in hits] == ["b", "a"]


def test_no_matching_terms_returns_empty(small_retriever):
    assert small_retriever.retrieve("quantum chromodynamics", 3) == []


def test_k_must_be_positive(small_retriever):
    with pytest.raises(ValueError):
        small_retriever.retrieve("google", 0)


def test_bm25_score_out_of_range(small_docs):
    index = build_index(small_docs)
    with pytest.raises(IndexError):
        bm25_score(index, ["google"], 3)


def test_repeated_query_terms_count_twice(small_docs):
    index = build_index(small_docs)
    once = bm25_score(index, ["google"], 0)
    assert bm25_score(index, ["google", "google"], 0) == pytest.approx(2 * once)


def test_title_is_indexed():
    index = build_index([Document("d1", "Venice", "a city on the lagoon")])
    assert retrieve(index, "venice", 1)[0].doc_id == "d1"


def test_tokenize_options():
    assert tokenize("The Running dogs!") == ["the", "running", "dogs"]
    params = BM25Params(stem=True, remove_stopwords=True)
    assert tokenize("The Running dogs!", params) == ["run", "dog"]


@pytest.mark.parametrize("word, stem", [
    ("running", "run"),
    ("studies", "studi"),
    ("caress", "caress"),
    ("news", "news"),
])
def test_stemming_is_snowball(word, stem):
    assert tokenize(word, BM25Params(stem=True)) == [stem]


def test_stopwords_only_when_asked():
    assert tokenize("who is the founder", BM25Params(remove_stopwords=True)) == ["founder"]
    assert tokenize("who is the founder", BM25Params()) == ["who", "is", "the", "founder"]


def test_invalid_params():
    with pytest.raises(ValueError):
        BM25Params(k1=0)
    with pytest.raises(ValueError):
        BM25Params(b=1.5)


def test_snapshot_round_trip_is_byte_identical(tmp_path, small_docs):
    first, second = tmp_path / "a.bin", tmp_path / "b.bin"
    save_index(build_index(small_docs), str(first))
    save_index(build_index(small_docs), str(second))
    assert first.read_bytes() == second.read_bytes()

    loaded = load_index(str(first))
    original = build_index(small_docs)
    for query in ["founded by", "venice cabot", "bill gates microsoft"]:
        assert retrieve(loaded, query, 3) == retrieve(original, query, 3)


def test_snapshot_rejects_bad_magic_and_trailing_bytes(tmp_path, small_docs):
    path = tmp_path / "idx.bin"
    save_index(build_index(small_docs), str(path))
    data = path.read_bytes()

    (tmp_path / "bad.bin").write_bytes(b"NOTANIDX" + data[8:])
    with pytest.raises(IndexFormatError, match="magic"):
        load_index(str(tmp_path / "bad.bin"))

    (tmp_path / "long.bin").write_bytes(data + b"\x00")
    with pytest.raises(IndexFormatError, match="trailing"):
        load_index(str(tmp_path / "long.bin"))

    (tmp_path / "short.bin").write_bytes(data[:-3])
    with pytest.raises(IndexFormatError):
        load_index(str(tmp_path / "short.bin"))


def test_retriever_rejects_index_with_unknown_docs(small_docs):
    index = build_index(small_docs)
    with pytest.raises(IndexFormatError):
        BM25Retriever(index, small_docs[:2])


def test_snapshot_must_match_corpus(tmp_path, small_docs):
    path = tmp_path / "index.bin"
    save_index(build_index(small_docs), str(path))
    index = load_index(str(path))
    check_snapshot(index, small_docs)

    with pytest.raises(IndexFormatError, match="stale"):
        edited = [small_docs[0], Document("d2", "", "microsoft was founded by bill gates in 1975"), small_docs[2]]
        check_snapshot(index, edited)
    with pytest.raises(IndexFormatError, match="do not match"):
        check_snapshot(index, list(reversed(small_docs)))
