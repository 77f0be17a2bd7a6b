#!/usr/bin/env python3
"""
Build a self-contained scripted-mock benchmark:

  corpus.jsonl          one or two documents per query
  queries.jsonl         per_class queries of each complexity (A, B, C)
  mock_script.jsonl     pattern -> generation rules for the scripted backend
  expected_triples.jsonl which strategies the mock lets answer each query
  fixture.cfg           run config pointing at the files above

The mock answers every (query, strategy) pair so that its correctness matches
the query's expected outcome triple. Within each class of N queries the first
three quarters succeed on the designed strategy; the rest are:

  A  also fail single-step   (T, F, T)
  B  fail everything         (F, F, F)  -> bias label B
  C  fail everything         (F, F, F)  -> bias label C

A and B queries come from a single-hop dataset, C queries from a multi-hop one.
Multi-step reasoning takes 2 steps on A and B queries and 3 on C queries.

Usage:
  python data_extraction/build_scripted_fixture.py --out fixtures/scripted --per-class 20
"""

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Tuple

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), ".."))

from src.rag_corpus import write_jsonl

SINGLE_HOP_DATASET = "single_fixture"
MULTI_HOP_DATASET = "multi_fixture"
WRONG_ANSWER = "unknown"

CONFIG_TEMPLATE = """# scripted-mock fixture
corpus_path = corpus.jsonl
query_path = queries.jsonl
mock_script_path = mock_script.jsonl
backend = mock
output_dir = outputs
k = 3
max_steps = 5
workers = 4
label_sample_size = -1
seed = {seed}
epochs = 100
learning_rate = 0.5
holdout_fraction = 0.0
feature_dim = 4096
# labeled and evaluated on the same queries
exclude_training_queries = false
"""


@dataclass(frozen=True)
class FixturePaths:
    root: str
    corpus: str
    queries: str
    mock_script: str
    triples: str
    config: str


def _triple(cls: str, position: int, per_class: int) -> Tuple[bool, bool, bool]:
    regular = position < (3 * per_class) // 4
    if cls == "A":
        return (True, True, True) if regular else (True, False, True)
    if cls == "B":
        return (False, True, True) if regular else (False, False, False)
    return (False, False, True) if regular else (False, False, False)


def _query(cls: str, i: int) -> Tuple[str, str, List[Tuple[str, str]]]:
    """(question, answer, documents as (title, text))."""
    if cls == "A":
        entity, answer = f"Kalvoria{i}", f"Port Meren{i}"
        question = f"What is the capital of {entity}?"
        docs = [(entity, f"{entity} is a coastal country. Its capital is {answer}.")]
    elif cls == "B":
        entity, answer = f"Tessaro{i} festival", f"{1900 + i}"
        question = f"In which year did the {entity} first take place?"
        docs = [(entity, f"The {entity} first took place in {answer} in the old harbour district.")]
    else:
        film, founder, answer = f"Orvane{i}", f"Lisbet Harrow{i}", f"Dario Quell{i}"
        question = f"Who directed the film starring the founder of the studio Brightmoor{i}?"
        docs = [
            (f"Brightmoor{i}", f"Brightmoor{i} is a studio founded by {founder}."),
            (film, f"{film} is a film starring {founder}, directed by {answer}."),
        ]
    return question, answer, docs


def _chain(cls: str, i: int) -> List[str]:
    if cls == "C":
        return [f"Brightmoor{i} was founded by Lisbet Harrow{i}.",
                f"Lisbet Harrow{i} starred in the film Orvane{i}."]
    return [f"The question asks about item {cls.lower()}{i}."]


def _final(answer: str, correct: bool) -> str:
    return f"So the answer is: {answer if correct else WRONG_ANSWER}."


def build_fixture(out_dir: str, per_class: int = 20, seed: int = 0) -> FixturePaths:
    os.makedirs(out_dir, exist_ok=True)
    corpus: List[Dict[str, str]] = []
    queries: List[Dict] = []
    rules: List[Dict[str, str]] = []
    triples: List[Dict] = []

    for cls in ("A", "B", "C"):
        for i in range(per_class):
            query_id = f"{cls.lower()}{i:03d}"
            question, answer, docs = _query(cls, i)
            no_ret, single, multi = _triple(cls, i, per_class)

            for j, (title, text) in enumerate(docs):
                corpus.append({"doc_id": f"{query_id}-d{j}", "title": title, "text": text})
            queries.append({
                "query_id": query_id,
                "question": question,
                "dataset_id": MULTI_HOP_DATASET if cls == "C" else SINGLE_HOP_DATASET,
                "hop_type": "multi_hop" if cls == "C" else "single_hop",
                "gold_answers": [answer],
            })
            triples.append({"query_id": query_id, "correct_no_retrieval": no_ret,
                            "correct_single": single, "correct_multi": multi})

            # Longest multi-step prefix first: earlier steps' patterns are substrings of later prompts.
            chain = _chain(cls, i)
            multi_prefix = f"Q: {question}\nA (multi-step):"
            rules.append({"pattern": multi_prefix + "".join(" " + s for s in chain),
                          "response": _final(answer, multi)})
            for n in range(len(chain) - 1, -1, -1):
                rules.append({"pattern": multi_prefix + "".join(" " + s for s in chain[:n]),
                              "response": " " + chain[n]})
            rules.append({"pattern": f"Q: {question}\nA (single-step):",
                          "response": f" The documents mention {question.split()[-1]} {_final(answer, single)}"})
            rules.append({"pattern": f"Q: {question}\nA (closed-book):",
                          "response": f" {_final(answer, no_ret)}"})

    paths = FixturePaths(
        root=out_dir,
        corpus=os.path.join(out_dir, "corpus.jsonl"),
        queries=os.path.join(out_dir, "queries.jsonl"),
        mock_script=os.path.join(out_dir, "mock_script.jsonl"),
        triples=os.path.join(out_dir, "expected_triples.jsonl"),
        config=os.path.join(out_dir, "fixture.cfg"),
    )
    write_jsonl(paths.corpus, corpus)
    write_jsonl(paths.queries, queries)
    write_jsonl(paths.mock_script, rules + [{"default": f"So the answer is: {WRONG_ANSWER}."}])
    write_jsonl(paths.triples, triples)
    with open(paths.config, "w", encoding="utf-8") as f:
        f.write(CONFIG_TEMPLATE.format(seed=seed))
    return paths


def main():
    ap = argparse.ArgumentParser(description="Write the scripted-mock benchmark fixture.")
    ap.add_argument("--out", default="fixtures/scripted")
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    paths = build_fixture(args.out, args.per_class, args.seed)
    print(f"Wrote {3 * args.per_class} queries and their mock script to {paths.root}")
    print(f"Config -> {paths.config}")


if __name__ == "__main__":
    main()
