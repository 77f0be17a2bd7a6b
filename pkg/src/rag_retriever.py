"""
BM25 Sparse Retriever
=====================

Tokenizer, in-memory inverted index and Okapi BM25 ranking over a loaded corpus,
plus a versioned binary snapshot so the index can be rebuilt once and reused.

Snapshot layout (all integers little-endian):

    magic          8 bytes   b"ARAGIDX1"
    params         <ddII B   k1, b, doc_count, term_count, flags (bit0 stem, bit1 stopwords)
    doc table      doc_count x ( <I id_len, id utf-8 bytes, <I doc_length )
    postings       term_count x ( <I term_len, term utf-8 bytes, <I n,
                                  n x <u4 doc_ordinal, n x <u4 term_frequency )

Terms are written in sorted order so rebuilding from the same corpus produces
byte-identical files.
"""

import logging
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import BinaryIO, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from nltk.stem.snowball import SnowballStemmer
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

from .rag_corpus import CorpusStats, Document

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"ARAGIDX1"
_PARAMS = struct.Struct("<ddIIB")
_U32 = struct.Struct("<I")

_TOKEN_RE = re.compile(r"[^\W_]+")

STOPWORDS = frozenset(ENGLISH_STOP_WORDS)

_STEMMER = SnowballStemmer("english")


class IndexFormatError(ValueError):
    pass


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75
    stem: bool = False
    remove_stopwords: bool = False

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    rank: int


@dataclass
class InvertedIndex:
    postings: Dict[str, List[Tuple[int, int]]]
    doc_lengths: List[int]
    doc_ids: List[str]
    stats: CorpusStats
    params: BM25Params = field(default_factory=BM25Params)

    def __post_init__(self):
        self._ordinal_by_id = {d: i for i, d in enumerate(self.doc_ids)}
        self._tf_by_term = {t: dict(p) for t, p in self.postings.items()}

    @property
    def doc_count(self) -> int:
        return self.stats.doc_count

    def ordinal(self, doc_id: str) -> int:
        return self._ordinal_by_id[doc_id]

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, doc_ordinal: int) -> int:
        return self._tf_by_term.get(term, {}).get(doc_ordinal, 0)

    def idf(self, term: str) -> float:
        n, df = self.doc_count, self.df(term)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


# --------------------------
# Tokenization
# --------------------------

@lru_cache(maxsize=65536)
def _stem(term: str) -> str:
    return _STEMMER.stem(term)


def tokenize(text: str, params: Optional[BM25Params] = None) -> List[str]:
    """Lowercase alphanumeric runs; stemming and stopword removal only when params ask."""
    terms = _TOKEN_RE.findall(text.lower())
    if params is None:
        return terms
    if params.remove_stopwords:
        terms = [t for t in terms if t not in STOPWORDS]
    if params.stem:
        terms = [_stem(t) for t in terms]
    return terms


# --------------------------
# Index construction and scoring
# --------------------------

def build_index(docs: Sequence[Document], params: Optional[BM25Params] = None) -> InvertedIndex:
    params = params or BM25Params()
    postings: Dict[str, List[Tuple[int, int]]] = {}
    doc_lengths: List[int] = []
    doc_ids: List[str] = []
    seen = set()

    for ordinal, doc in enumerate(docs):
        if doc.doc_id in seen:
            raise ValueError(f"duplicate doc_id '{doc.doc_id}' at ordinal {ordinal}")
        seen.add(doc.doc_id)
        # Title is part of the indexed text.
        terms = tokenize(f"{doc.title} {doc.text}", params)
        doc_ids.append(doc.doc_id)
        doc_lengths.append(len(terms))
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((ordinal, tf))

    stats = CorpusStats.from_lengths(doc_lengths)
    logger.info("Indexed %d documents, %d terms, avg length %.2f",
                stats.doc_count, len(postings), stats.avg_doc_len)
    return InvertedIndex(postings=postings, doc_lengths=doc_lengths, doc_ids=doc_ids,
                         stats=stats, params=params)


def _term_weight(index: InvertedIndex, tf: int, doc_ordinal: int) -> float:
    k1, b = index.params.k1, index.params.b
    avgdl = index.stats.avg_doc_len
    dl = index.doc_lengths[doc_ordinal]
    length_norm = 1.0 - b + b * dl / avgdl if avgdl > 0 else 1.0
    return tf * (k1 + 1.0) / (tf + k1 * length_norm)


def bm25_score(index: InvertedIndex, query_terms: Sequence[str], doc_ordinal: int) -> float:
    """Okapi BM25 with the non-negative ln(1 + ...) idf; repeated query terms count repeatedly."""
    if not 0 <= doc_ordinal < index.doc_count:
        raise IndexError(f"doc_ordinal {doc_ordinal} out of range for {index.doc_count} documents")
    score = 0.0
    for term in query_terms:
        tf = index.tf(term, doc_ordinal)
        if tf:
            score += index.idf(term) * _term_weight(index, tf, doc_ordinal)
    return score


def retrieve(index: InvertedIndex, query: str, k: int) -> List[ScoredDoc]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_terms = tokenize(query, index.params)

    # Only documents sharing a term can score above zero.
    candidates = set()
    for term in set(query_terms):
        candidates.update(ordinal for ordinal, _ in index.postings.get(term, ()))

    scored = [(bm25_score(index, query_terms, o), o) for o in candidates]
    scored = [(s, o) for s, o in scored if s > 0.0]
    scored.sort(key=lambda x: (-x[0], x[1]))
    return [
        ScoredDoc(doc_id=index.doc_ids[o], score=s, rank=rank)
        for rank, (s, o) in enumerate(scored[:k], start=1)
    ]


class BM25Retriever:
    """Index plus the documents it was built from, so strategies can resolve hits to text."""

    def __init__(self, index: InvertedIndex, documents: Sequence[Document]):
        self.index = index
        self.documents: Mapping[str, Document] = {d.doc_id: d for d in documents}
        missing = [d for d in index.doc_ids if d not in self.documents]
        if missing:
            raise IndexFormatError(f"index references {len(missing)} unknown doc_id(s), e.g. '{missing[0]}'")

    @classmethod
    def from_documents(cls, documents: Sequence[Document], params: Optional[BM25Params] = None) -> "BM25Retriever":
        return cls(build_index(documents, params), documents)

    def retrieve(self, query: str, k: int) -> List[ScoredDoc]:
        return retrieve(self.index, query, k)

    def document(self, doc_id: str) -> Document:
        return self.documents[doc_id]


def check_snapshot(index: InvertedIndex, documents: Sequence[Document]) -> None:
    """Reject a snapshot that was built from a different corpus than the one loaded."""
    doc_ids = [d.doc_id for d in documents]
    if index.doc_ids != doc_ids:
        raise IndexFormatError(f"index snapshot covers {len(index.doc_ids)} documents that do not match "
                               f"the {len(doc_ids)} corpus documents in order")
    for ordinal, doc in enumerate(documents):
        length = len(tokenize(f"{doc.title} {doc.text}", index.params))
        if length != index.doc_lengths[ordinal]:
            raise IndexFormatError(f"index snapshot is stale: '{doc.doc_id}' has {length} terms, "
                                   f"snapshot says {index.doc_lengths[ordinal]}")


# --------------------------
# Snapshot I/O
# --------------------------

def _write_str(f: BinaryIO, s: str) -> None:
    data = s.encode("utf-8")
    f.write(_U32.pack(len(data)))
    f.write(data)


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IndexFormatError("truncated index snapshot")
    return data


def _read_u32(f: BinaryIO) -> int:
    return _U32.unpack(_read_exact(f, _U32.size))[0]


def _read_str(f: BinaryIO) -> str:
    return _read_exact(f, _read_u32(f)).decode("utf-8")


def save_index(index: InvertedIndex, path: str) -> None:
    flags = (1 if index.params.stem else 0) | (2 if index.params.remove_stopwords else 0)
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(_PARAMS.pack(index.params.k1, index.params.b, index.doc_count, len(index.postings), flags))
        for doc_id, length in zip(index.doc_ids, index.doc_lengths):
            _write_str(f, doc_id)
            f.write(_U32.pack(length))
        for term in sorted(index.postings):
            plist = np.asarray(index.postings[term], dtype="<u4").reshape(-1, 2)
            _write_str(f, term)
            f.write(_U32.pack(len(plist)))
            f.write(plist[:, 0].tobytes())
            f.write(plist[:, 1].tobytes())
    logger.info("Wrote index snapshot to %s", path)


def load_index(path: str) -> InvertedIndex:
    with open(path, "rb") as f:
        magic = f.read(len(INDEX_MAGIC))
        if magic != INDEX_MAGIC:
            raise IndexFormatError(f"{path}: bad magic {magic!r}, expected {INDEX_MAGIC!r}")
        k1, b, doc_count, term_count, flags = _PARAMS.unpack(_read_exact(f, _PARAMS.size))
        params = BM25Params(k1=k1, b=b, stem=bool(flags & 1), remove_stopwords=bool(flags & 2))

        doc_ids: List[str] = []
        doc_lengths: List[int] = []
        for _ in range(doc_count):
            doc_ids.append(_read_str(f))
            doc_lengths.append(_read_u32(f))

        postings: Dict[str, List[Tuple[int, int]]] = {}
        for _ in range(term_count):
            term = _read_str(f)
            n = _read_u32(f)
            ordinals = np.frombuffer(_read_exact(f, 4 * n), dtype="<u4")
            tfs = np.frombuffer(_read_exact(f, 4 * n), dtype="<u4")
            postings[term] = [(int(o), int(t)) for o, t in zip(ordinals, tfs)]

        if f.read(1):
            raise IndexFormatError(f"{path}: trailing bytes after postings")

    return InvertedIndex(postings=postings, doc_lengths=doc_lengths, doc_ids=doc_ids,
                         stats=CorpusStats.from_lengths(doc_lengths), params=params)
