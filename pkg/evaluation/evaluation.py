"""
Answer and Routing Evaluation
=============================

Effectiveness metrics (EM, token F1, containment accuracy), efficiency metrics
(steps and time per query, time relative to single-step retrieval), classifier
accuracy with a confusion matrix, and the oracle router that dispatches each
query with its outcome-derived label.
"""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.rag_classifier import LABELS, ComplexityLabel
from src.rag_corpus import QueryRecord, normalize_answer
from src.rag_labeler import LabeledQuery, OutcomeTriple, oracle_label
from src.rag_strategies import StrategyDeps, StrategyResult, run_with_label

logger = logging.getLogger(__name__)

QueryLookup = Union[Mapping[str, QueryRecord], Sequence[QueryRecord]]


class UnknownQueryError(ValueError):
    def __init__(self, query_id: str, where: str = "results"):
        self.query_id = query_id
        super().__init__(f"{where} reference unknown query_id '{query_id}'")


# --------------------------
# Per-answer metrics
# --------------------------

def exact_match(pred: Optional[str], golds: Sequence[str]) -> int:
    if pred is None:
        return 0
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred_tokens: List[str], gold_tokens: List[str]) -> float:
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_tokens)
    recall = num_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: Optional[str], golds: Sequence[str]) -> float:
    """Best multiset token-overlap F1 against any gold answer."""
    if pred is None:
        return 0.0
    pred_tokens = normalize_answer(pred).split()
    return max(_f1(pred_tokens, normalize_answer(g).split()) for g in golds)


def accuracy_contains(pred: Optional[str], golds: Sequence[str]) -> int:
    if pred is None:
        return 0
    p = normalize_answer(pred)
    if not p:
        return 0
    # A gold that normalizes to nothing would match every prediction.
    return int(any(g_norm and g_norm in p for g_norm in (normalize_answer(g) for g in golds)))


GATING_METRICS = {"em": exact_match, "acc": accuracy_contains}


def is_correct(pred: Optional[str], golds: Sequence[str], metric: str = "em") -> bool:
    return bool(GATING_METRICS[metric](pred, golds))


# --------------------------
# Aggregation
# --------------------------

@dataclass(frozen=True)
class MetricRow:
    em: float
    f1: float
    acc: float
    avg_steps: float
    avg_time: float
    total_steps: int
    count: int
    rel_time: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        return asdict(self)


def _lookup(queries: QueryLookup) -> Mapping[str, QueryRecord]:
    if isinstance(queries, Mapping):
        return queries
    return {q.query_id: q for q in queries}


def aggregate(results: Sequence[StrategyResult], queries: QueryLookup,
              baseline_avg_time: Optional[float] = None) -> MetricRow:
    """
    Unweighted means over results. A missing answer scores zero on every
    effectiveness metric. rel_time is avg_time / baseline_avg_time when a
    positive baseline is given.
    """
    by_id = _lookup(queries)
    em, f1, acc, times = [], [], [], []
    total_steps = 0
    for r in results:
        q = by_id.get(r.query_id)
        if q is None:
            raise UnknownQueryError(r.query_id)
        em.append(exact_match(r.answer, q.gold_answers))
        f1.append(token_f1(r.answer, q.gold_answers))
        acc.append(accuracy_contains(r.answer, q.gold_answers))
        times.append(r.elapsed)
        total_steps += r.steps

    n = len(results)
    if n == 0:
        return MetricRow(0.0, 0.0, 0.0, 0.0, 0.0, 0, 0, None)
    # fsum keeps the means independent of result order.
    avg_time = math.fsum(times) / n
    rel_time = None
    if baseline_avg_time is not None and baseline_avg_time > 0:
        rel_time = avg_time / baseline_avg_time
    return MetricRow(
        em=math.fsum(em) / n,
        f1=math.fsum(f1) / n,
        acc=math.fsum(acc) / n,
        avg_steps=total_steps / n,
        avg_time=avg_time,
        total_steps=total_steps,
        count=n,
        rel_time=rel_time,
    )


def aggregate_by_dataset(results: Sequence[StrategyResult], queries: QueryLookup,
                         baseline_avg_time: Optional[Mapping[str, float]] = None) -> Dict[str, MetricRow]:
    by_id = _lookup(queries)
    groups: Dict[str, List[StrategyResult]] = {}
    for r in results:
        q = by_id.get(r.query_id)
        if q is None:
            raise UnknownQueryError(r.query_id)
        groups.setdefault(q.dataset_id, []).append(r)
    baseline_avg_time = baseline_avg_time or {}
    return {d: aggregate(groups[d], by_id, baseline_avg_time.get(d)) for d in sorted(groups)}


def mean_elapsed(results: Sequence[StrategyResult]) -> Optional[float]:
    if not results:
        return None
    return math.fsum(r.elapsed for r in results) / len(results)


def mean_elapsed_by_dataset(results: Sequence[StrategyResult], queries: QueryLookup) -> Dict[str, float]:
    by_id = _lookup(queries)
    groups: Dict[str, List[float]] = {}
    for r in results:
        if r.query_id in by_id:
            groups.setdefault(by_id[r.query_id].dataset_id, []).append(r.elapsed)
    return {d: math.fsum(v) / len(v) for d, v in groups.items()}


# --------------------------
# Classifier evaluation
# --------------------------

@dataclass
class ConfusionMatrix:
    """counts[true, predicted], rows and columns in A, B, C order."""

    counts: np.ndarray

    @classmethod
    def empty(cls) -> "ConfusionMatrix":
        return cls(np.zeros((len(LABELS), len(LABELS)), dtype=np.int64))

    def add(self, true: ComplexityLabel, predicted: ComplexityLabel) -> None:
        self.counts[ComplexityLabel(true).index, ComplexityLabel(predicted).index] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_frame(self) -> pd.DataFrame:
        names = [l.value for l in LABELS]
        return pd.DataFrame(self.counts, index=pd.Index(names, name="true"),
                            columns=pd.Index(names, name="predicted"))

    def to_json(self) -> List[List[int]]:
        return self.counts.astype(int).tolist()


class ClassifierReport(NamedTuple):
    accuracy: float
    per_class: Dict[str, float]
    confusion: ConfusionMatrix

    def to_json(self) -> Dict[str, Any]:
        return {"accuracy": self.accuracy, "per_class": dict(self.per_class),
                "confusion": self.confusion.to_json()}


def classifier_report(preds: Sequence[Tuple[str, ComplexityLabel]],
                      reference: Sequence[LabeledQuery]) -> ClassifierReport:
    """
    Overall accuracy, recall per true label and the confusion matrix. A label
    with no support gets recall 0.0.
    """
    truth = {r.query_id: r.label for r in reference}
    predicted = dict(preds)
    if set(truth) != set(predicted):
        missing = sorted(set(truth) ^ set(predicted))
        raise UnknownQueryError(missing[0], where="classifier predictions and reference labels")

    cm = ConfusionMatrix.empty()
    for query_id, label in truth.items():
        cm.add(label, predicted[query_id])

    support = cm.support()
    diag = np.diag(cm.counts)
    per_class = {
        l.value: float(diag[i] / support[i]) if support[i] else 0.0
        for i, l in enumerate(LABELS)
    }
    accuracy = float(diag.sum() / cm.total) if cm.total else 0.0
    return ClassifierReport(accuracy, per_class, cm)


def label_distribution(results: Iterable[StrategyResult]) -> Dict[str, Dict[str, float]]:
    """Share of queries and mean seconds per query for each routed label."""
    results = [r for r in results if r.label is not None]
    n = len(results)
    out: Dict[str, Dict[str, float]] = {}
    for label in LABELS:
        times = [r.elapsed for r in results if r.label == label]
        out[label.value] = {
            "count": len(times),
            "percent": 100.0 * len(times) / n if n else 0.0,
            "avg_time": math.fsum(times) / len(times) if times else 0.0,
        }
    return out


# --------------------------
# Oracle routing
# --------------------------

def oracle_route(q: QueryRecord, triple: OutcomeTriple, deps: StrategyDeps) -> StrategyResult:
    return run_with_label(q, oracle_label(q, triple), deps)


# --------------------------
# Reports
# --------------------------

def build_report(
    mode: str,
    results: Sequence[StrategyResult],
    queries: QueryLookup,
    baseline: Optional[Sequence[StrategyResult]] = None,
    classifier: Optional[ClassifierReport] = None,
    config_snapshot: Optional[Mapping[str, Any]] = None,
) -> Dict[str, Any]:
    by_id = _lookup(queries)
    baseline_time = mean_elapsed(baseline) if baseline else None
    if baseline_time is None:
        logger.info("No single-step baseline for %s; rel_time omitted", mode)
    baseline_by_dataset = mean_elapsed_by_dataset(baseline, by_id) if baseline else None
    report: Dict[str, Any] = {
        "mode": mode,
        "overall": aggregate(results, by_id, baseline_time).to_json(),
        "per_dataset": {d: row.to_json() for d, row in
                        aggregate_by_dataset(results, by_id, baseline_by_dataset).items()},
        "label_distribution": label_distribution(results),
        "failures": sum(1 for r in results if r.error is not None),
    }
    if classifier is not None:
        report["classifier"] = classifier.to_json()
    if config_snapshot is not None:
        report["config"] = dict(config_snapshot)
    return report


def metric_table(rows: Mapping[str, MetricRow]) -> pd.DataFrame:
    """Side-by-side table, one row per named run."""
    frame = pd.DataFrame([row.to_json() for row in rows.values()], index=list(rows.keys()))
    frame[["em", "f1", "acc"]] = frame[["em", "f1", "acc"]] * 100.0
    return frame[["em", "f1", "acc", "avg_steps", "total_steps", "avg_time", "rel_time", "count"]]
