"""
Pytest configuration and fixtures (no network calls).
"""
import sys
from pathlib import Path

import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.rag_corpus import Document, HopType, QueryRecord, write_jsonl
from src.rag_llm import ScriptedMockBackend
from src.rag_retriever import BM25Retriever


def make_query(query_id="q1", question="Who founded Google?", dataset_id="nq",
               hop_type=HopType.SINGLE_HOP, golds=("Larry Page",)):
    return QueryRecord(query_id=query_id, question=question, dataset_id=dataset_id,
                       hop_type=HopType(hop_type), gold_answers=tuple(golds))


@pytest.fixture
def small_docs():
    return [
        Document("d1", "", "google was founded by larry page and sergey brin"),
        Document("d2", "", "microsoft was founded by bill gates"),
        Document("d3", "", "the cabot family sailed from venice"),
    ]


@pytest.fixture
def small_retriever(small_docs):
    return BM25Retriever.from_documents(small_docs)


@pytest.fixture
def corpus_file(tmp_path, small_docs):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(str(path), [{"doc_id": d.doc_id, "title": d.title, "text": d.text} for d in small_docs])
    return path


@pytest.fixture
def query_file(tmp_path):
    path = tmp_path / "queries.jsonl"
    write_jsonl(str(path), [
        make_query("q1").to_json(),
        make_query("q2", "Who founded Microsoft?", golds=("Bill Gates",)).to_json(),
        make_query("q3", "Where did the founder of the Cabot family sail from?", dataset_id="hotpot",
                   hop_type=HopType.MULTI_HOP, golds=("Venice",)).to_json(),
    ])
    return path


@pytest.fixture
def echo_backend():
    """Mock that answers every prompt with the same cue-bearing line."""
    return ScriptedMockBackend([], default="So the answer is: Larry Page.", record_prompts=True)


@pytest.fixture
def scripted_fixture(tmp_path):
    from data_extraction.build_scripted_fixture import build_fixture
    return build_fixture(str(tmp_path / "fixture"), per_class=20, seed=0)
