"""
Adaptive QA Pipeline
====================

Batch execution over a query set:

- route: pick a complexity label per query (fixed strategy, trained classifier,
  or oracle labels from strategy outcomes) and run the matching strategy
- collect_outcomes: run all three strategies per query and judge each answer,
  producing the OutcomeTriples the labeler consumes

Queries run on a thread pool bounded by the backend's in-flight limit. Output
order always follows input order. A query that fails is recorded and kept in
the output with no answer, so every query is scored over the same denominator.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar

from tqdm import tqdm

from .rag_classifier import ClassifierModel, ComplexityLabel, predict
from .rag_corpus import QueryRecord, iter_jsonl, write_jsonl
from .rag_labeler import OutcomeTriple, oracle_label
from .rag_strategies import (
    LABEL_FOR_STRATEGY,
    STRATEGY_FOR_LABEL,
    StrategyDeps,
    StrategyError,
    StrategyKind,
    StrategyResult,
    run_with_label,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class RouteMode(str, Enum):
    NO_RETRIEVAL = "no_retrieval"
    SINGLE = "single"
    MULTI = "multi"
    ADAPTIVE = "adaptive"
    ORACLE = "oracle"


FIXED_MODES = {
    RouteMode.NO_RETRIEVAL: StrategyKind.NO_RETRIEVAL,
    RouteMode.SINGLE: StrategyKind.SINGLE_STEP,
    RouteMode.MULTI: StrategyKind.MULTI_STEP,
}


@dataclass(frozen=True)
class FailureRecord:
    query_id: str
    error: str

    def to_json(self) -> Dict[str, str]:
        return {"query_id": self.query_id, "error": self.error}


@dataclass
class BatchOutcome:
    results: List[StrategyResult] = field(default_factory=list)
    failures: List[FailureRecord] = field(default_factory=list)

    @property
    def failure_fraction(self) -> float:
        return len(self.failures) / len(self.results) if self.results else 0.0


def map_ordered(fn: Callable[[T], R], items: Sequence[T], workers: int,
                desc: str = "", show_progress: bool = True) -> List[R]:
    """Apply fn over items on a thread pool; results come back in input order."""
    workers = max(1, min(workers, len(items) or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(fn, items), total=len(items), desc=desc, disable=not show_progress))


def _pool_size(deps: StrategyDeps, workers: int) -> int:
    return max(1, min(workers, deps.backend.max_in_flight))


def _failed_result(q: QueryRecord, label: ComplexityLabel, kind: StrategyKind,
                   err: Exception, elapsed: float) -> StrategyResult:
    steps = len(err.context) if isinstance(err, StrategyError) else 0
    context = err.context if isinstance(err, StrategyError) else None
    result = StrategyResult(query_id=q.query_id, strategy=kind, answer=None, steps=steps,
                            elapsed=elapsed, label=label, error=str(err))
    if context is not None:
        result.context = context
    return result


def run_labeled(q: QueryRecord, label: ComplexityLabel, deps: StrategyDeps) -> StrategyResult:
    """run_with_label, with failures turned into an answerless result carrying the error."""
    start = time.perf_counter()
    try:
        return run_with_label(q, label, deps)
    except Exception as e:
        logger.warning("Query %s failed: %s", q.query_id, e)
        return _failed_result(q, label, STRATEGY_FOR_LABEL[label], e, time.perf_counter() - start)


# --------------------------
# Routing
# --------------------------

def route_labels(
    queries: Sequence[QueryRecord],
    mode: RouteMode,
    classifier: Optional[ClassifierModel] = None,
    triples: Optional[Mapping[str, OutcomeTriple]] = None,
) -> List[ComplexityLabel]:
    mode = RouteMode(mode)
    if mode in FIXED_MODES:
        return [LABEL_FOR_STRATEGY[FIXED_MODES[mode]]] * len(queries)
    if mode == RouteMode.ADAPTIVE:
        if classifier is None:
            raise ValueError("adaptive routing needs a trained classifier")
        return [predict(classifier, q.question)[0] for q in queries]
    if triples is None:
        raise ValueError("oracle routing needs outcome triples")
    missing = [q.query_id for q in queries if q.query_id not in triples]
    if missing:
        raise ValueError(f"oracle routing has no outcome triple for {len(missing)} query(ies), e.g. '{missing[0]}'")
    return [oracle_label(q, triples[q.query_id]) for q in queries]


def route(
    queries: Sequence[QueryRecord],
    mode: RouteMode,
    deps: StrategyDeps,
    workers: int = 4,
    classifier: Optional[ClassifierModel] = None,
    triples: Optional[Mapping[str, OutcomeTriple]] = None,
    show_progress: bool = True,
) -> BatchOutcome:
    labels = route_labels(queries, mode, classifier, triples)
    if RouteMode(mode) == RouteMode.ADAPTIVE:
        counts = {l.value: labels.count(l) for l in ComplexityLabel}
        logger.info("Predicted label distribution: %s", counts)

    results = map_ordered(lambda pair: run_labeled(pair[0], pair[1], deps), list(zip(queries, labels)),
                          _pool_size(deps, workers), desc=f"evaluate[{RouteMode(mode).value}]",
                          show_progress=show_progress)
    failures = [FailureRecord(r.query_id, r.error) for r in results if r.error is not None]
    return BatchOutcome(results, failures)


# --------------------------
# Outcome collection for labeling
# --------------------------

@dataclass
class OutcomeRun:
    triple: Optional[OutcomeTriple]
    results: Tuple[StrategyResult, ...] = ()
    error: Optional[str] = None


def collect_outcome(q: QueryRecord, deps: StrategyDeps,
                    judge: Callable[[Optional[str], Sequence[str]], bool]) -> OutcomeRun:
    results = []
    for label in (ComplexityLabel.A, ComplexityLabel.B, ComplexityLabel.C):
        r = run_labeled(q, label, deps)
        if r.error is not None:
            return OutcomeRun(None, tuple(results) + (r,), r.error)
        results.append(r)
    correct = [judge(r.answer, q.gold_answers) for r in results]
    return OutcomeRun(OutcomeTriple(q.query_id, *correct), tuple(results))


def collect_outcomes(
    queries: Sequence[QueryRecord],
    deps: StrategyDeps,
    judge: Callable[[Optional[str], Sequence[str]], bool],
    workers: int = 4,
    show_progress: bool = True,
) -> Tuple[List[OutcomeTriple], List[FailureRecord]]:
    """Run no-retrieval, single-step and multi-step on every query and judge each answer."""
    runs = map_ordered(lambda q: collect_outcome(q, deps, judge), queries,
                       _pool_size(deps, workers), desc="label", show_progress=show_progress)
    triples: List[OutcomeTriple] = []
    failures: List[FailureRecord] = []
    for q, run in zip(queries, runs):
        if run.triple is None:
            failures.append(FailureRecord(q.query_id, run.error or "unknown error"))
        else:
            triples.append(run.triple)
    logger.info("Collected %d outcome triples, %d failures", len(triples), len(failures))
    return triples, failures


# --------------------------
# Trace files
# --------------------------

def write_trace(path: str, results: Sequence[StrategyResult], include_elapsed: bool = True) -> None:
    write_jsonl(path, [r.to_json(include_elapsed=include_elapsed) for r in results])


def write_failures(path: str, failures: Sequence[FailureRecord]) -> None:
    write_jsonl(path, [f.to_json() for f in failures])


def read_trace(path: str) -> List[StrategyResult]:
    return [StrategyResult.from_json(obj) for _, obj in iter_jsonl(path)]
