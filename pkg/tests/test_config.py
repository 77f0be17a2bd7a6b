import os

import pytest

from src.rag_config import ConfigError, RunConfig, read_config_file


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults():
    config = RunConfig.load()
    assert (config.k1, config.b, config.k, config.max_steps) == (1.2, 0.75, 3, 5)
    assert config.backend == "mock"
    assert config.ngram_orders == (1, 2)


def test_file_values_are_typed_and_paths_resolve_against_file(tmp_path):
    path = write_cfg(tmp_path, """
        # comment line
        corpus_path = data/corpus.jsonl
        k = 7            # trailing comment
        stem = yes
        temperature = 0.3
        ngram_orders = 1, 2, 3
    """)
    config = RunConfig.load(path)
    assert config.corpus_path == os.path.join(str(tmp_path), "data/corpus.jsonl")
    assert config.k == 7
    assert config.stem is True
    assert config.temperature == 0.3
    assert config.ngram_orders == (1, 2, 3)
    assert config.featurizer().ngram_orders == (1, 2, 3)
    assert config.sources["k"].startswith("file:")


def test_flags_override_file(tmp_path):
    path = write_cfg(tmp_path, "k = 7\nseed = 1\n")
    config = RunConfig.load(path, {"k": 2, "seed": None, "max_steps": "4"})
    assert config.k == 2
    assert config.seed == 1
    assert config.max_steps == 4
    assert config.sources["k"] == "flag"


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key 'colour'"):
        RunConfig.load(write_cfg(tmp_path, "colour = blue\n"))


def test_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="boolean"):
        RunConfig.load(overrides={"stem": "maybe"})
    with pytest.raises(ConfigError, match="k must be >= 1"):
        RunConfig.load(overrides={"k": 0})
    with pytest.raises(ConfigError, match="backend"):
        RunConfig.load(overrides={"backend": "cloud"})
    with pytest.raises(ConfigError, match="holdout_fraction"):
        RunConfig.load(overrides={"holdout_fraction": 1.0})


def test_malformed_line(tmp_path):
    with pytest.raises(ConfigError, match=":2:"):
        read_config_file(write_cfg(tmp_path, "k = 3\njust words\n"))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        RunConfig.load(str(tmp_path / "nope.cfg"))


def test_validate_paths(tmp_path, corpus_file, query_file):
    config = RunConfig.load(overrides={"corpus_path": str(corpus_file), "query_path": str(query_file),
                                       "output_dir": str(tmp_path / "out")})
    config.validate_paths("index")
    with pytest.raises(ConfigError, match="mock_script_path is not set"):
        config.validate_paths("evaluate", "single")
    config.set("labeling_mode", "bias_only")
    config.validate_paths("label")
    with pytest.raises(ConfigError, match="training_set_path does not exist"):
        config.validate_paths("train")


def test_snapshot_and_api_key(monkeypatch):
    monkeypatch.setenv("RAG_TEST_KEY", "sk-secret")
    config = RunConfig.load(overrides={"api_key_env": "RAG_TEST_KEY"})
    assert config.api_key() == "sk-secret"
    snapshot = config.snapshot()
    assert "sk-secret" not in str(snapshot)
    assert "sources" not in snapshot
    monkeypatch.delenv("RAG_TEST_KEY")
    assert config.api_key() == "EMPTY"


def test_exclusion_and_index_defaults(tmp_path):
    config = RunConfig.load(overrides={"output_dir": str(tmp_path)})
    assert config.exclude_training_queries is True
    assert config.exclusion_file() == os.path.join(str(tmp_path), "exclusion_ids.txt")
    assert config.index_file() == os.path.join(str(tmp_path), "index.bin")
    config.set("index_path", str(tmp_path / "custom.bin"))
    assert config.index_file() == str(tmp_path / "custom.bin")
