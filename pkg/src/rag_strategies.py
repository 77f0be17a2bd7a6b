"""
QA Strategy Engine
==================

The three query-handling strategies and the label-driven dispatch between them:

- NoRetrieval:  answer = LLM(q)                           steps = 0
- SingleStep:   d = Retriever(q); answer = LLM(q, d)      steps = 1
- MultiStep:    d_i = Retriever(q, c_i); LLM(q, d_i, c_i)  1 <= steps <= max_steps,
                repeated until the generation carries the answer cue.

Every run returns a StrategyResult with the reasoning trace, raw generations,
step count and wall-clock time.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

from .rag_classifier import ComplexityLabel
from .rag_corpus import Document, QueryRecord
from .rag_llm import (
    GenerationRequest,
    GeneratorBackend,
    PromptTemplates,
    build_prompt_multistep,
    build_prompt_no_retrieval,
    build_prompt_single,
    default_templates,
    extract_answer,
    generate,
)
from .rag_retriever import ScoredDoc

logger = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    NO_RETRIEVAL = "no_retrieval"
    SINGLE_STEP = "single_step"
    MULTI_STEP = "multi_step"


STRATEGY_FOR_LABEL = {
    ComplexityLabel.A: StrategyKind.NO_RETRIEVAL,
    ComplexityLabel.B: StrategyKind.SINGLE_STEP,
    ComplexityLabel.C: StrategyKind.MULTI_STEP,
}
LABEL_FOR_STRATEGY = {v: k for k, v in STRATEGY_FOR_LABEL.items()}


class Retriever(Protocol):
    def retrieve(self, query: str, k: int) -> List[ScoredDoc]: ...

    def document(self, doc_id: str) -> Document: ...


@dataclass(frozen=True)
class ReasoningStep:
    retrieval_query: str
    doc_ids: Tuple[str, ...]
    intermediate_text: str


@dataclass
class ReasoningContext:
    steps: List[ReasoningStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def intermediates(self) -> List[str]:
        return [s.intermediate_text for s in self.steps]

    def to_json(self) -> List[Dict[str, Any]]:
        return [
            {"retrieval_query": s.retrieval_query, "doc_ids": list(s.doc_ids), "text": s.intermediate_text}
            for s in self.steps
        ]

    @classmethod
    def from_json(cls, rows: Sequence[Dict[str, Any]]) -> "ReasoningContext":
        return cls([ReasoningStep(r["retrieval_query"], tuple(r["doc_ids"]), r["text"]) for r in rows])


@dataclass
class StrategyResult:
    query_id: str
    strategy: StrategyKind
    answer: Optional[str]
    steps: int
    elapsed: float
    context: ReasoningContext = field(default_factory=ReasoningContext)
    raw_generations: List[str] = field(default_factory=list)
    label: Optional[ComplexityLabel] = None
    error: Optional[str] = None

    def to_json(self, include_elapsed: bool = True) -> Dict[str, Any]:
        row = {
            "query_id": self.query_id,
            "strategy": self.strategy.value,
            "label": self.label.value if self.label else None,
            "answer": self.answer,
            "steps": self.steps,
            "context": self.context.to_json(),
            "raw_generations": list(self.raw_generations),
        }
        if include_elapsed:
            row["elapsed"] = self.elapsed
        if self.error is not None:
            row["error"] = self.error
        return row

    @classmethod
    def from_json(cls, row: Dict[str, Any]) -> "StrategyResult":
        return cls(
            query_id=row["query_id"],
            strategy=StrategyKind(row["strategy"]),
            answer=row.get("answer"),
            steps=int(row["steps"]),
            elapsed=float(row.get("elapsed", 0.0)),
            context=ReasoningContext.from_json(row.get("context", [])),
            raw_generations=list(row.get("raw_generations", [])),
            label=ComplexityLabel(row["label"]) if row.get("label") else None,
            error=row.get("error"),
        )


class StrategyError(RuntimeError):
    """A strategy run that failed; carries the partial trace for debugging."""

    def __init__(self, query_id: str, strategy: StrategyKind, cause: BaseException,
                 context: Optional[ReasoningContext] = None):
        self.query_id = query_id
        self.strategy = strategy
        self.context = context or ReasoningContext()
        super().__init__(f"{strategy.value} failed for query '{query_id}' after {len(self.context)} step(s): {cause}")


@dataclass
class StrategyDeps:
    retriever: Optional[Retriever]
    backend: GeneratorBackend
    templates: PromptTemplates = field(default_factory=default_templates)
    k: int = 3
    max_steps: int = 5
    max_new_tokens: int = 128
    temperature: float = 0.0
    stop_sequences: Tuple[str, ...] = ("\n\n",)
    full_chain_query: bool = False
    accumulate_documents: bool = False

    def request(self, prompt: str) -> GenerationRequest:
        return GenerationRequest(prompt=prompt, max_new_tokens=self.max_new_tokens,
                                 temperature=self.temperature, stop_sequences=self.stop_sequences)

    def require_retriever(self) -> Retriever:
        if self.retriever is None:
            raise ValueError("this strategy needs a retriever but none is configured")
        return self.retriever


def _resolve(retriever: Retriever, hits: Sequence[ScoredDoc]) -> List[Document]:
    return [retriever.document(h.doc_id) for h in hits]


def _dedup(docs: Sequence[Document]) -> List[Document]:
    seen = set()
    out = []
    for d in docs:
        if d.doc_id not in seen:
            seen.add(d.doc_id)
            out.append(d)
    return out


# --------------------------
# Strategies
# --------------------------

def run_no_retrieval(q: QueryRecord, deps: StrategyDeps) -> StrategyResult:
    start = time.perf_counter()
    try:
        response = generate(deps.backend, deps.request(build_prompt_no_retrieval(q, deps.templates)))
    except Exception as e:
        raise StrategyError(q.query_id, StrategyKind.NO_RETRIEVAL, e) from e
    return StrategyResult(
        query_id=q.query_id,
        strategy=StrategyKind.NO_RETRIEVAL,
        answer=extract_answer(response.text),
        steps=0,
        elapsed=time.perf_counter() - start,
        raw_generations=[response.text],
    )


def run_single_step(q: QueryRecord, deps: StrategyDeps, k: Optional[int] = None) -> StrategyResult:
    k = _check_k(k if k is not None else deps.k)
    retriever = deps.require_retriever()
    start = time.perf_counter()
    context = ReasoningContext()
    try:
        hits = retriever.retrieve(q.question, k)
        docs = _resolve(retriever, hits)
        prompt = build_prompt_single(q, docs, deps.templates, allow_empty=True)
        response = generate(deps.backend, deps.request(prompt))
    except Exception as e:
        raise StrategyError(q.query_id, StrategyKind.SINGLE_STEP, e, context) from e

    context.steps.append(ReasoningStep(q.question, tuple(h.doc_id for h in hits), response.text.strip()))
    return StrategyResult(
        query_id=q.query_id,
        strategy=StrategyKind.SINGLE_STEP,
        answer=extract_answer(response.text),
        steps=1,
        elapsed=time.perf_counter() - start,
        context=context,
        raw_generations=[response.text],
    )


def _check_k(k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return k


def _multistep_query(q: QueryRecord, chain: Sequence[str], full_chain: bool) -> str:
    if not chain:
        return q.question
    if full_chain:
        return " ".join([q.question, *chain])
    return f"{q.question} {chain[-1]}"


def run_multi_step(q: QueryRecord, deps: StrategyDeps, k: Optional[int] = None,
                   max_steps: Optional[int] = None) -> StrategyResult:
    """
    Interleaved retrieve-and-generate loop. Each round retrieves with the
    question plus the latest intermediate sentence, generates one continuation,
    and stops as soon as the continuation carries the answer cue or the step
    cap is reached.
    """
    k = _check_k(k if k is not None else deps.k)
    max_steps = max_steps if max_steps is not None else deps.max_steps
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    retriever = deps.require_retriever()

    start = time.perf_counter()
    context = ReasoningContext()
    raw: List[str] = []
    chain: List[str] = []
    seen_docs: List[Document] = []
    answer: Optional[str] = None

    for step in range(1, max_steps + 1):
        query = _multistep_query(q, chain, deps.full_chain_query)
        try:
            hits = retriever.retrieve(query, k)
            step_docs = _resolve(retriever, hits)
            seen_docs.extend(step_docs)
            prompt_docs = _dedup(seen_docs if deps.accumulate_documents else step_docs)
            response = generate(deps.backend, deps.request(build_prompt_multistep(q, prompt_docs, chain, deps.templates)))
        except Exception as e:
            raise StrategyError(q.query_id, StrategyKind.MULTI_STEP, e, context) from e

        text = response.text.strip()
        raw.append(response.text)
        context.steps.append(ReasoningStep(query, tuple(h.doc_id for h in hits), text))
        logger.debug("query %s step %d: %d docs, generation %r", q.query_id, step, len(hits), text[:80])

        answer = extract_answer(text)
        if answer is not None:
            break
        chain.append(text)

    return StrategyResult(
        query_id=q.query_id,
        strategy=StrategyKind.MULTI_STEP,
        answer=answer,
        steps=len(context),
        elapsed=time.perf_counter() - start,
        context=context,
        raw_generations=raw,
    )


STRATEGY_RUNNERS: Dict[StrategyKind, Callable[[QueryRecord, StrategyDeps], StrategyResult]] = {
    StrategyKind.NO_RETRIEVAL: run_no_retrieval,
    StrategyKind.SINGLE_STEP: run_single_step,
    StrategyKind.MULTI_STEP: run_multi_step,
}


def run_strategy(q: QueryRecord, kind: StrategyKind, deps: StrategyDeps) -> StrategyResult:
    return STRATEGY_RUNNERS[kind](q, deps)


def run_with_label(q: QueryRecord, label: ComplexityLabel, deps: StrategyDeps) -> StrategyResult:
    result = run_strategy(q, STRATEGY_FOR_LABEL[ComplexityLabel(label)], deps)
    result.label = ComplexityLabel(label)
    return result
