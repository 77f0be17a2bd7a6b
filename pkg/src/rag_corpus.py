"""
Corpus and Query Loading
========================

Reads the JSONL document corpus and query sets the rest of the engine works on,
and owns the answer normalization used by every metric downstream.

Corpus lines:  {"doc_id": ..., "title": ..., "text": ...}
Query lines:   {"query_id": ..., "question": ..., "dataset_id": ...,
                "hop_type": "single_hop" | "multi_hop", "gold_answers": [...]}
"""

import json
import logging
import re
import string
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterator, List, Sequence, Tuple

logger = logging.getLogger(__name__)

CORPUS_KEYS = ("doc_id", "title", "text")
QUERY_KEYS = ("query_id", "question", "dataset_id", "hop_type", "gold_answers")

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class CorpusFormatError(ValueError):
    """A corpus or query file line that cannot be accepted."""

    def __init__(self, path: str, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class DuplicateIdError(CorpusFormatError):
    pass


class HopType(str, Enum):
    SINGLE_HOP = "single_hop"
    MULTI_HOP = "multi_hop"


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    question: str
    dataset_id: str
    hop_type: HopType
    gold_answers: Tuple[str, ...]

    def to_json(self) -> Dict[str, Any]:
        return {
            "query_id": self.query_id,
            "question": self.question,
            "dataset_id": self.dataset_id,
            "hop_type": self.hop_type.value,
            "gold_answers": list(self.gold_answers),
        }


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int = 0
    avg_doc_len: float = 0.0

    @classmethod
    def from_lengths(cls, lengths: Sequence[int]) -> "CorpusStats":
        if not lengths:
            return cls(0, 0.0)
        return cls(len(lengths), sum(lengths) / len(lengths))


# --------------------------
# JSONL helpers
# --------------------------

def iter_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line_no, object) for every non-blank line; line numbers are 1-based."""
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(path, line_no, f"invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise CorpusFormatError(path, line_no, "expected a JSON object")
            yield line_no, obj


def write_jsonl(path: str, rows: Sequence[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def _require_keys(path: str, line_no: int, obj: Dict[str, Any], keys: Sequence[str]) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise CorpusFormatError(path, line_no, f"missing key(s): {', '.join(missing)}")


def _require_str(path: str, line_no: int, obj: Dict[str, Any], key: str) -> str:
    value = obj[key]
    if not isinstance(value, str):
        raise CorpusFormatError(path, line_no, f"'{key}' must be a string")
    return value


# --------------------------
# Loaders
# --------------------------

def load_corpus(path: str) -> List[Document]:
    docs: List[Document] = []
    seen: Dict[str, int] = {}
    for line_no, obj in iter_jsonl(path):
        _require_keys(path, line_no, obj, CORPUS_KEYS)
        doc_id = _require_str(path, line_no, obj, "doc_id")
        title = _require_str(path, line_no, obj, "title")
        text = _require_str(path, line_no, obj, "text")
        if not text.strip():
            raise CorpusFormatError(path, line_no, f"document '{doc_id}' has empty text")
        if doc_id in seen:
            raise DuplicateIdError(path, line_no, f"duplicate doc_id '{doc_id}' (first on line {seen[doc_id]})")
        seen[doc_id] = line_no
        docs.append(Document(doc_id=doc_id, title=title, text=text))
    logger.info("Loaded %d documents from %s", len(docs), path)
    return docs


def load_queries(path: str) -> List[QueryRecord]:
    """
    Load a query file, enforcing the QueryRecord invariants: unique ids,
    non-empty gold answers, and a single hop type per dataset.
    """
    records: List[QueryRecord] = []
    seen: Dict[str, int] = {}
    hop_by_dataset: Dict[str, Tuple[HopType, int]] = {}

    for line_no, obj in iter_jsonl(path):
        _require_keys(path, line_no, obj, QUERY_KEYS)
        query_id = _require_str(path, line_no, obj, "query_id")
        question = _require_str(path, line_no, obj, "question")
        dataset_id = _require_str(path, line_no, obj, "dataset_id")

        try:
            hop_type = HopType(obj["hop_type"])
        except ValueError:
            raise CorpusFormatError(path, line_no, f"unknown hop_type {obj['hop_type']!r}")

        golds = obj["gold_answers"]
        if not isinstance(golds, list) or not all(isinstance(g, str) for g in golds):
            raise CorpusFormatError(path, line_no, "'gold_answers' must be a list of strings")
        if not golds:
            raise CorpusFormatError(path, line_no, f"query '{query_id}' has empty gold_answers")

        if query_id in seen:
            raise DuplicateIdError(path, line_no, f"duplicate query_id '{query_id}' (first on line {seen[query_id]})")
        seen[query_id] = line_no

        prior = hop_by_dataset.get(dataset_id)
        if prior is None:
            hop_by_dataset[dataset_id] = (hop_type, line_no)
        elif prior[0] != hop_type:
            raise CorpusFormatError(
                path, line_no,
                f"dataset '{dataset_id}' mixes hop types ({prior[0].value} on line {prior[1]}, {hop_type.value} here)",
            )

        records.append(QueryRecord(
            query_id=query_id,
            question=question,
            dataset_id=dataset_id,
            hop_type=hop_type,
            gold_answers=tuple(golds),
        ))
    logger.info("Loaded %d queries from %s", len(records), path)
    return records


def normalize_answer(text: str) -> str:
    """Lower text and remove punctuation, articles and extra whitespace."""
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())
