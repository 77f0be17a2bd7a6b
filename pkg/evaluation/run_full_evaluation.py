#!/usr/bin/env python3
"""
Run every evaluate mode whose prerequisites exist and write one side-by-side report.

Usage:
  python evaluation/run_full_evaluation.py --config fixtures/scripted/fixture.cfg
"""

import argparse
import json
import os
import sys
from typing import Dict, List, Optional, Sequence

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from evaluation.evaluation import metric_table
from src.adaptive_rag import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, cmd_evaluate, summarize_traces
from src.rag_config import ConfigError, RunConfig
from src.rag_corpus import load_queries

MODES = ["no_retrieval", "single", "multi", "adaptive", "oracle"]


def available_modes(config: RunConfig) -> List[str]:
    modes = ["no_retrieval", "single", "multi"]
    if os.path.exists(config.classifier_file()):
        modes.append("adaptive")
    if os.path.exists(config.triples_file()):
        modes.append("oracle")
    return modes


def run_sweep(config: RunConfig, modes: Optional[Sequence[str]] = None, show_progress: bool = True) -> Dict[str, int]:
    """Evaluate each mode in turn; single runs first so later modes get its timing baseline."""
    modes = list(modes or available_modes(config))
    modes.sort(key=lambda m: m != "single")
    exit_codes: Dict[str, int] = {}
    for mode in modes:
        print(f"\n=== {mode} ===")
        if mode != "single" and "single" in exit_codes and not config.baseline_trace:
            config.set("baseline_trace", config.output_path("trace_single.jsonl"))
        exit_codes[mode] = cmd_evaluate(config, argparse.Namespace(mode=mode, no_progress=not show_progress))
    return exit_codes


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="Evaluate every available routing mode.")
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--modes", nargs="+", choices=MODES, default=None)
    ap.add_argument("--no-progress", action="store_true")
    args = ap.parse_args(argv)

    try:
        config = RunConfig.load(args.config, {"output_dir": args.out})
        exit_codes = run_sweep(config, args.modes, show_progress=not args.no_progress)
        traces = [config.output_path(f"trace_{m}.jsonl") for m in MODES
                  if m in exit_codes and exit_codes[m] != EXIT_FAILED]
        rows = summarize_traces(traces, load_queries(config.query_path), config.baseline_trace)
    except ConfigError as e:
        print(f"ERROR: {e}")
        return EXIT_CONFIG

    print("\n=== Side-by-side ===")
    print(metric_table(rows).to_string(float_format=lambda x: f"{x:.2f}"))
    out_file = config.output_path("sweep_report.json")
    with open(out_file, "w") as f:
        json.dump({"modes": exit_codes, "rows": {k: v.to_json() for k, v in rows.items()}}, f, indent=2, sort_keys=True)
    print(f"\n✅ Sweep report saved to {out_file}")
    return max(exit_codes.values(), default=EXIT_OK)


if __name__ == "__main__":
    sys.exit(main())
