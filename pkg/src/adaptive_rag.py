#!/usr/bin/env python3
"""
adaptive_rag.py

Command-line entry point for the adaptive QA engine:

  index     build the BM25 index snapshot from the corpus
  label     run all three strategies on a seeded sample, write outcome
            triples, the labeled training set and the exclusion list
  train     train the complexity classifier on the training set
  evaluate  answer the query set with one routing mode and write a trace
            plus a JSON report
  report    side-by-side metric table over existing trace files

Usage (example):
  python -m src.adaptive_rag index    --config run.cfg
  python -m src.adaptive_rag label    --config run.cfg --seed 13
  python -m src.adaptive_rag train    --config run.cfg
  python -m src.adaptive_rag evaluate --config run.cfg --mode adaptive
  python -m src.adaptive_rag report   --config run.cfg outputs/trace_single.jsonl outputs/trace_adaptive.jsonl

Exit codes: 0 success, 1 some queries failed within max_failure_fraction,
2 configuration or usage error, 3 too many queries failed (no outputs written).
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Set

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), ".."))

from evaluation.evaluation import (
    MetricRow,
    UnknownQueryError,
    aggregate,
    build_report,
    classifier_report,
    is_correct,
    mean_elapsed,
    metric_table,
)

from src.adaptive_pipeline import (
    RouteMode,
    collect_outcomes,
    read_trace,
    route,
    write_failures,
    write_trace,
)
from src.rag_classifier import (
    FeaturizerMismatchError,
    ModelFormatError,
    TrainingDivergedError,
    accuracy,
    load_model,
    save_model,
    train,
)
from src.rag_config import ConfigError, RunConfig
from src.rag_corpus import CorpusFormatError, QueryRecord, load_corpus, load_queries
from src.rag_labeler import (
    LabeledQuery,
    LabelingError,
    LabelingMode,
    Provenance,
    build_training_set,
    oracle_label,
    read_training_set,
    read_triples,
    write_training_set,
    write_triples,
)
from src.rag_llm import (
    DEFAULT_PROMPT_DIR,
    GeneratorBackend,
    MockScriptError,
    OpenAICompletionsBackend,
    ScriptedMockBackend,
    TemplateNotFoundError,
    load_templates,
)
from src.rag_retriever import BM25Retriever, IndexFormatError, build_index, check_snapshot, load_index, save_index
from src.rag_strategies import StrategyDeps, StrategyKind, StrategyResult

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_FAILED = 3

# Problems with inputs rather than with a query run.
INPUT_ERRORS = (
    ConfigError, CorpusFormatError, IndexFormatError, ModelFormatError,
    FeaturizerMismatchError, LabelingError, UnknownQueryError, MockScriptError, TemplateNotFoundError,
)


# --------------------------
# Shared setup
# --------------------------

def load_retriever(config: RunConfig) -> BM25Retriever:
    documents = load_corpus(config.corpus_path)
    path = config.index_file()
    if os.path.exists(path):
        index = load_index(path)
        if index.params != config.bm25_params():
            logger.warning("Index snapshot %s was built with %s; config asks for %s. Using the snapshot.",
                           path, index.params, config.bm25_params())
        check_snapshot(index, documents)
        logger.info("Loaded index snapshot %s", path)
    else:
        logger.info("No index snapshot at %s; building in memory", path)
        index = build_index(documents, config.bm25_params())
    return BM25Retriever(index, documents)


def make_backend(config: RunConfig) -> GeneratorBackend:
    if config.backend == "mock":
        return ScriptedMockBackend.from_script(config.mock_script_path, max_in_flight=config.max_in_flight)
    return OpenAICompletionsBackend(
        base_url=config.base_url,
        model=config.model,
        api_key=config.api_key(),
        timeout=config.request_timeout,
        max_retries=config.max_retries,
        retry_backoff=config.retry_backoff,
        max_in_flight=config.max_in_flight,
    )


def make_deps(config: RunConfig) -> StrategyDeps:
    templates = load_templates(
        config.prompt_dir or DEFAULT_PROMPT_DIR,
        no_retrieval=config.template_no_retrieval,
        single_step=config.template_single,
        multi_step=config.template_multistep,
    )
    return StrategyDeps(
        retriever=load_retriever(config),
        backend=make_backend(config),
        templates=templates,
        k=config.k,
        max_steps=config.max_steps,
        max_new_tokens=config.max_new_tokens,
        temperature=config.temperature,
        full_chain_query=config.full_chain_query,
        accumulate_documents=config.accumulate_documents,
    )


def sample_per_dataset(queries: Sequence[QueryRecord], size: int, rng: np.random.Generator,
                       exclude: Optional[Set[str]] = None) -> List[QueryRecord]:
    """Seeded uniform sample of `size` queries per dataset (all when size < 0), kept in input order."""
    exclude = exclude or set()
    by_dataset: Dict[str, List[int]] = {}
    for i, q in enumerate(queries):
        if q.query_id not in exclude:
            by_dataset.setdefault(q.dataset_id, []).append(i)

    chosen: List[int] = []
    for dataset_id in sorted(by_dataset):
        idx = by_dataset[dataset_id]
        if size < 0 or size >= len(idx):
            chosen.extend(idx)
        elif size > 0:
            chosen.extend(idx[j] for j in rng.choice(len(idx), size=size, replace=False))
    return [queries[i] for i in sorted(chosen)]


def read_id_list(path: str) -> Set[str]:
    with open(path, "r", encoding="utf-8") as f:
        return {line.strip() for line in f if line.strip()}


def write_id_list(path: str, ids: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i in ids:
            f.write(i + "\n")


def write_json(path: str, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def over_tolerance(n_failed: int, n_total: int, config: RunConfig) -> bool:
    fraction = n_failed / n_total if n_total else 0.0
    return n_failed > 0 and fraction > config.max_failure_fraction


def _abort(n_failed: int, n_total: int, config: RunConfig, failures_path: str) -> int:
    print(f"ERROR: {n_failed}/{n_total} queries failed, above max_failure_fraction={config.max_failure_fraction}; "
          f"nothing written except {failures_path}")
    return EXIT_FAILED


def _partial_exit(n_failed: int, n_total: int) -> int:
    if n_failed == 0:
        return EXIT_OK
    print(f"WARNING: {n_failed}/{n_total} queries failed; see the failures file")
    return EXIT_PARTIAL


# --------------------------
# Commands
# --------------------------

def cmd_index(config: RunConfig, args: argparse.Namespace) -> int:
    config.validate_paths("index")
    documents = load_corpus(config.corpus_path)
    index = build_index(documents, config.bm25_params())
    path = config.index_file()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_index(index, path)
    print(f"Indexed {index.stats.doc_count} documents (avg_doc_len={index.stats.avg_doc_len:.2f}) -> {path}")
    return EXIT_OK


def cmd_label(config: RunConfig, args: argparse.Namespace) -> int:
    config.validate_paths("label")
    mode = LabelingMode(config.labeling_mode)
    queries = load_queries(config.query_path)
    rng = np.random.default_rng(config.seed)
    os.makedirs(config.output_dir, exist_ok=True)

    failures = []
    triples = []
    if mode == LabelingMode.BIAS_ONLY:
        size = config.bias_sample_size if config.bias_sample_size > 0 else -1
        labeled_queries = sample_per_dataset(queries, size, rng)
    else:
        if config.label_sample_size == 0:
            raise ConfigError(f"label_sample_size = 0 leaves nothing to label in {mode.value} mode")
        silver_sample = sample_per_dataset(queries, config.label_sample_size, rng)
        print(f"Running 3 strategies on {len(silver_sample)} sampled queries...")
        deps = make_deps(config)
        judge = lambda pred, golds: is_correct(pred, golds, config.gating_metric)
        triples, failures = collect_outcomes(silver_sample, deps, judge, workers=config.workers,
                                             show_progress=not args.no_progress)
        if over_tolerance(len(failures), len(silver_sample), config):
            failures_path = config.output_path("label_failures.jsonl")
            write_failures(failures_path, failures)
            return _abort(len(failures), len(silver_sample), config, failures_path)
        solved_ids = {t.query_id for t in triples}
        labeled_queries = [q for q in silver_sample if q.query_id in solved_ids]
        if mode == LabelingMode.FULL and config.bias_sample_size > 0:
            taken = {q.query_id for q in silver_sample}
            extra = sample_per_dataset(queries, config.bias_sample_size, rng, exclude=taken)
            labeled_queries = sorted(labeled_queries + extra, key=lambda q: queries.index(q))

    labeled = build_training_set(labeled_queries, triples, mode)

    triples_path = config.triples_file()
    training_path = config.training_set_file()
    exclusion_path = config.exclusion_file()
    write_triples(triples_path, triples)
    write_training_set(training_path, labeled, mode, config.gating_metric, config.seed)
    write_id_list(exclusion_path, [l.query_id for l in labeled])
    if failures:
        write_failures(config.output_path("label_failures.jsonl"), failures)

    print(f"Labeled {len(labeled)} queries ({mode.value}, gated by {config.gating_metric}):")
    if labeled:
        table = pd.crosstab(pd.Series([l.label.value for l in labeled], name="label"),
                            pd.Series([l.provenance.value for l in labeled], name="provenance"))
        print(table.to_string())
    print(f"Triples -> {triples_path}\nTraining set -> {training_path}\nExclusion list -> {exclusion_path}")
    return _partial_exit(len(failures), len(labeled_queries) + len(failures))


def cmd_train(config: RunConfig, args: argparse.Namespace) -> int:
    config.validate_paths("train")
    header, labeled = read_training_set(config.training_set_file())
    if not labeled:
        raise ConfigError(f"training set {config.training_set_file()} is empty")
    pairs = [(l.question, l.label) for l in labeled]
    print(f"Training on {len(pairs)} labeled queries (mode={header.get('mode', '?')})")

    every = max(1, config.epochs // 10)

    def on_epoch(epoch: int, loss: float, holdout_loss: Optional[float]) -> None:
        if epoch % every == 0 or epoch == config.epochs:
            extra = f", holdout loss {holdout_loss:.4f}" if holdout_loss is not None else ""
            print(f"  epoch {epoch:4d}: train loss {loss:.4f}{extra}")

    try:
        model = train(pairs, config.epochs, config.learning_rate, config.seed,
                      featurizer=config.featurizer(), holdout_fraction=config.holdout_fraction,
                      on_epoch=on_epoch)
    except TrainingDivergedError as e:
        print(f"ERROR: {e}")
        return EXIT_PARTIAL

    path = config.classifier_file()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_model(model, path)
    print(f"Train accuracy {accuracy(model, pairs):.4f} (best epoch {model.training_meta['best_epoch']}) -> {path}")
    return EXIT_OK


def _classifier_reference(queries: Sequence[QueryRecord], config: RunConfig) -> Optional[List[LabeledQuery]]:
    if not os.path.exists(config.triples_file()):
        return None
    triples = {t.query_id: t for t in read_triples(config.triples_file())}
    return [LabeledQuery(q.query_id, oracle_label(q, triples[q.query_id]), Provenance.SILVER_OUTCOME, q.question)
            for q in queries if q.query_id in triples]


def cmd_evaluate(config: RunConfig, args: argparse.Namespace) -> int:
    mode = RouteMode(args.mode)
    config.validate_paths("evaluate", mode.value)
    queries = load_queries(config.query_path)
    if config.exclude_training_queries and os.path.exists(config.exclusion_file()):
        excluded = read_id_list(config.exclusion_file())
        queries = [q for q in queries if q.query_id not in excluded]
        print(f"Excluded {len(excluded)} training queries listed in {config.exclusion_file()}; evaluating {len(queries)}")
        if not queries:
            raise ConfigError(f"every query is listed in {config.exclusion_file()}; nothing left to evaluate "
                              f"(set exclude_training_queries = false to evaluate them anyway)")

    classifier = load_model(config.classifier_file()) if mode == RouteMode.ADAPTIVE else None
    triples = None
    if mode == RouteMode.ORACLE:
        triples = {t.query_id: t for t in read_triples(config.triples_file())}
        missing = [q.query_id for q in queries if q.query_id not in triples]
        if missing:
            raise ConfigError(f"{config.triples_file()} has no outcome triple for {len(missing)} "
                              f"evaluated query(ies), e.g. '{missing[0]}'")

    deps = make_deps(config)
    outcome = route(queries, mode, deps, workers=config.workers, classifier=classifier,
                    triples=triples, show_progress=not args.no_progress)
    os.makedirs(config.output_dir, exist_ok=True)
    failures_path = config.output_path(f"failures_{mode.value}.jsonl")
    if over_tolerance(len(outcome.failures), len(outcome.results), config):
        write_failures(failures_path, outcome.failures)
        return _abort(len(outcome.failures), len(outcome.results), config, failures_path)

    baseline: Optional[List[StrategyResult]] = None
    if mode == RouteMode.SINGLE:
        baseline = outcome.results
    elif config.baseline_trace:
        baseline = read_trace(config.baseline_trace)

    clf_report = None
    if classifier is not None:
        reference = _classifier_reference(queries, config)
        if reference:
            ref_ids = {r.query_id for r in reference}
            preds = [(r.query_id, r.label) for r in outcome.results if r.query_id in ref_ids]
            clf_report = classifier_report(preds, reference)

    report = build_report(mode.value, outcome.results, queries, baseline=baseline,
                          classifier=clf_report, config_snapshot=config.snapshot())

    trace_path = config.output_path(f"trace_{mode.value}.jsonl")
    report_path = config.output_path(f"report_{mode.value}.json")
    write_trace(trace_path, outcome.results)
    write_json(report_path, report)
    if outcome.failures:
        write_failures(failures_path, outcome.failures)

    row = aggregate(outcome.results, queries, mean_elapsed(baseline) if baseline else None)
    print(metric_table({mode.value: row}).to_string(float_format=lambda x: f"{x:.2f}"))
    if clf_report is not None:
        print(f"Classifier accuracy {clf_report.accuracy:.4f}")
        print(clf_report.confusion.to_frame().to_string())
    print(f"Trace -> {trace_path}\nReport -> {report_path}")
    return _partial_exit(len(outcome.failures), len(outcome.results))


def summarize_traces(trace_paths: Sequence[str], queries: Sequence[QueryRecord],
                     baseline_path: Optional[str] = None) -> Dict[str, MetricRow]:
    """One MetricRow per trace, timed relative to the baseline trace (or a single-step trace among the inputs)."""
    traces = {path: read_trace(path) for path in trace_paths}
    baseline: Optional[List[StrategyResult]] = read_trace(baseline_path) if baseline_path else None
    if baseline is None:
        for results in traces.values():
            if results and all(r.strategy == StrategyKind.SINGLE_STEP for r in results):
                baseline = results
                break
    baseline_time = mean_elapsed(baseline) if baseline else None

    rows: Dict[str, MetricRow] = {}
    for path, results in traces.items():
        name = os.path.splitext(os.path.basename(path))[0]
        if name in rows:
            name = path
        rows[name] = aggregate(results, queries, baseline_time)
    return rows


def cmd_report(config: RunConfig, args: argparse.Namespace) -> int:
    config.validate_paths("report")
    missing = [p for p in args.traces if not os.path.exists(p)]
    if missing:
        raise ConfigError(f"trace file does not exist: {missing[0]}")
    queries = load_queries(config.query_path)
    rows = summarize_traces(args.traces, queries, config.baseline_trace)

    table = metric_table(rows)
    print(table.to_string(float_format=lambda x: f"{x:.2f}"))
    os.makedirs(config.output_dir, exist_ok=True)
    summary_path = config.output_path("summary.json")
    write_json(summary_path, {name: row.to_json() for name, row in rows.items()})
    print(f"Summary -> {summary_path}")
    return EXIT_OK


COMMANDS = {
    "index": cmd_index,
    "label": cmd_label,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# --------------------------
# Argument parsing
# --------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Flat key = value config file.")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--backend", choices=["mock", "remote"], default=None)
    common.add_argument("--k", type=int, default=None, help="Documents retrieved per step.")
    common.add_argument("--max-steps", type=int, default=None, help="Step cap for multi-step reasoning.")
    common.add_argument("--out", default=None, help="Output directory.")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any config key; repeatable.")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--no-progress", action="store_true", help="Disable progress bars.")

    ap = argparse.ArgumentParser(description="Adaptive retrieval-augmented question answering.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("index", parents=[common], help="Build the BM25 index snapshot.")
    sub.add_parser("label", parents=[common], help="Collect strategy outcomes and build the training set.")
    sub.add_parser("train", parents=[common], help="Train the query-complexity classifier.")
    ev = sub.add_parser("evaluate", parents=[common], help="Answer the query set with one routing mode.")
    ev.add_argument("--mode", required=True, choices=[m.value for m in RouteMode])
    rp = sub.add_parser("report", parents=[common], help="Side-by-side metrics over trace files.")
    rp.add_argument("traces", nargs="+")
    return ap


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "backend": args.backend,
        "k": args.k,
        "max_steps": args.max_steps,
        "output_dir": args.out,
    }
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = RunConfig.load(args.config, overrides_from_args(args))
        return COMMANDS[args.command](config, args)
    except INPUT_ERRORS as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
