"""
Training-Set Labeler
====================

Turns strategy outcomes into classifier training data.

- Silver labels: the simplest strategy that answered correctly wins
  (no retrieval -> A, single-step -> B, multi-step -> C).
- Inductive-bias labels: queries nobody solved fall back to their dataset type
  (single_hop -> B, multi_hop -> C).

Training-set file: a header line {"header": {...mode, gating_metric, seed...}}
followed by one LabeledQuery per line.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .rag_classifier import ComplexityLabel
from .rag_corpus import HopType, QueryRecord, iter_jsonl, write_jsonl

logger = logging.getLogger(__name__)


class LabelingError(ValueError):
    pass


class LabelingMode(str, Enum):
    FULL = "full"
    SILVER_ONLY = "silver_only"
    BIAS_ONLY = "bias_only"


class Provenance(str, Enum):
    SILVER_OUTCOME = "silver_outcome"
    INDUCTIVE_BIAS = "inductive_bias"


@dataclass(frozen=True)
class OutcomeTriple:
    query_id: str
    correct_no_retrieval: bool
    correct_single: bool
    correct_multi: bool

    def to_json(self) -> Dict[str, Any]:
        return {
            "query_id": self.query_id,
            "correct_no_retrieval": self.correct_no_retrieval,
            "correct_single": self.correct_single,
            "correct_multi": self.correct_multi,
        }

    @classmethod
    def from_json(cls, row: Mapping[str, Any]) -> "OutcomeTriple":
        return cls(row["query_id"], bool(row["correct_no_retrieval"]),
                   bool(row["correct_single"]), bool(row["correct_multi"]))


@dataclass(frozen=True)
class LabeledQuery:
    query_id: str
    label: ComplexityLabel
    provenance: Provenance
    question: str = ""

    def to_json(self) -> Dict[str, Any]:
        return {"query_id": self.query_id, "label": self.label.value,
                "provenance": self.provenance.value, "question": self.question}

    @classmethod
    def from_json(cls, row: Mapping[str, Any]) -> "LabeledQuery":
        return cls(row["query_id"], ComplexityLabel(row["label"]),
                   Provenance(row["provenance"]), row.get("question", ""))


# --------------------------
# Rules
# --------------------------

def label_by_outcome(t: OutcomeTriple) -> Optional[ComplexityLabel]:
    if t.correct_no_retrieval:
        return ComplexityLabel.A
    if t.correct_single:
        return ComplexityLabel.B
    if t.correct_multi:
        return ComplexityLabel.C
    return None


def label_by_bias(q: QueryRecord) -> ComplexityLabel:
    if q.hop_type == HopType.SINGLE_HOP:
        return ComplexityLabel.B
    return ComplexityLabel.C


def oracle_label(q: QueryRecord, triple: OutcomeTriple) -> ComplexityLabel:
    """Outcome label when some strategy succeeded, else the dataset-type label."""
    return label_by_outcome(triple) or label_by_bias(q)


def build_training_set(
    queries: Sequence[QueryRecord],
    triples: Sequence[OutcomeTriple],
    mode: LabelingMode = LabelingMode.FULL,
) -> List[LabeledQuery]:
    """
    One pass over the queries in input order. Queries without a triple can
    only be bias-labeled, so they are skipped in silver_only mode.
    """
    mode = LabelingMode(mode)
    known = {q.query_id for q in queries}
    by_id: Dict[str, OutcomeTriple] = {}
    for t in triples:
        if t.query_id not in known:
            raise LabelingError(f"outcome triple references unknown query_id '{t.query_id}'")
        by_id[t.query_id] = t

    out: List[LabeledQuery] = []
    for q in queries:
        silver = None
        if mode != LabelingMode.BIAS_ONLY and q.query_id in by_id:
            silver = label_by_outcome(by_id[q.query_id])
        if silver is not None:
            out.append(LabeledQuery(q.query_id, silver, Provenance.SILVER_OUTCOME, q.question))
        elif mode != LabelingMode.SILVER_ONLY:
            out.append(LabeledQuery(q.query_id, label_by_bias(q), Provenance.INDUCTIVE_BIAS, q.question))

    n_silver = sum(1 for l in out if l.provenance == Provenance.SILVER_OUTCOME)
    logger.info("Built %s training set: %d labeled (%d silver, %d bias) from %d queries",
                mode.value, len(out), n_silver, len(out) - n_silver, len(queries))
    return out


# --------------------------
# File I/O
# --------------------------

def write_triples(path: str, triples: Sequence[OutcomeTriple]) -> None:
    write_jsonl(path, [t.to_json() for t in triples])


def read_triples(path: str) -> List[OutcomeTriple]:
    return [OutcomeTriple.from_json(obj) for _, obj in iter_jsonl(path)]


def write_training_set(path: str, labeled: Sequence[LabeledQuery], mode: LabelingMode,
                       gating_metric: str, seed: int) -> None:
    header = {"header": {"mode": LabelingMode(mode).value, "gating_metric": gating_metric,
                         "seed": seed, "count": len(labeled)}}
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for l in labeled:
            f.write(json.dumps(l.to_json(), ensure_ascii=False) + "\n")


def read_training_set(path: str) -> Tuple[Dict[str, Any], List[LabeledQuery]]:
    header: Dict[str, Any] = {}
    labeled: List[LabeledQuery] = []
    for _, obj in iter_jsonl(path):
        if "header" in obj:
            header = obj["header"]
        else:
            labeled.append(LabeledQuery.from_json(obj))
    return header, labeled
