"""
Run Configuration
=================

RunConfig holds every knob the commands read. Values come from three layers,
later ones winning: dataclass defaults, a flat `key = value` config file, and
command-line flags.

Config file example:

    # paths are relative to this file
    corpus_path = data/corpus.jsonl
    query_path  = data/queries.jsonl
    backend     = mock
    k           = 3
    stem        = false
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple, get_type_hints

from .rag_classifier import FeaturizerConfig
from .rag_retriever import BM25Params

logger = logging.getLogger(__name__)

BACKENDS = ("mock", "remote")
LABELING_MODES = ("full", "silver_only", "bias_only")
GATING_METRICS = ("em", "acc")
EVALUATE_MODES = ("no_retrieval", "single", "multi", "adaptive", "oracle")

PATH_KEYS = (
    "corpus_path", "query_path", "index_path", "mock_script_path", "prompt_dir",
    "classifier_path", "training_set_path", "triples_path", "exclusion_path",
    "baseline_trace", "output_dir",
)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    """Usage or configuration problem; the CLI exits with code 2."""


@dataclass
class RunConfig:
    # data
    corpus_path: Optional[str] = None
    query_path: Optional[str] = None
    index_path: Optional[str] = None
    output_dir: str = "outputs"

    # generator backend
    backend: str = "mock"
    mock_script_path: Optional[str] = None
    base_url: str = "http://localhost:8000/v1"
    model: str = "flan-t5-xl"
    api_key_env: str = "OPENAI_API_KEY"
    request_timeout: float = 30.0
    max_retries: int = 2
    retry_backoff: float = 0.5
    max_in_flight: int = 4
    workers: int = 4

    # retrieval
    k1: float = 1.2
    b: float = 0.75
    stem: bool = False
    remove_stopwords: bool = False
    k: int = 3

    # strategies
    max_steps: int = 5
    full_chain_query: bool = False
    accumulate_documents: bool = False
    max_new_tokens: int = 128
    temperature: float = 0.0
    prompt_dir: Optional[str] = None
    template_no_retrieval: str = "no_retrieval"
    template_single: str = "single_step"
    template_multistep: str = "multi_step"

    # classifier
    classifier_path: Optional[str] = None
    feature_dim: int = 2 ** 18
    ngram_orders: Tuple[int, ...] = (1, 2)
    epochs: int = 200
    learning_rate: float = 3e-5
    holdout_fraction: float = 0.1

    # labeling
    seed: int = 0
    labeling_mode: str = "full"
    gating_metric: str = "em"
    label_sample_size: int = 400
    bias_sample_size: int = 0
    training_set_path: Optional[str] = None
    triples_path: Optional[str] = None
    exclusion_path: Optional[str] = None
    exclude_training_queries: bool = True

    # evaluation
    baseline_trace: Optional[str] = None
    max_failure_fraction: float = 0.1

    sources: Dict[str, str] = field(default_factory=dict, repr=False, compare=False)

    # --------------------------
    # Construction
    # --------------------------

    @classmethod
    def load(cls, config_path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        config = cls()
        if config_path:
            file_values = read_config_file(config_path)
            base = os.path.dirname(os.path.abspath(config_path))
            for key, raw in file_values.items():
                if key in PATH_KEYS and raw and not os.path.isabs(raw):
                    raw = os.path.join(base, raw)
                config.set(key, raw, source=f"file:{config_path}")
        for key, value in (overrides or {}).items():
            if value is not None:
                config.set(key, value, source="flag")
        config.check()
        return config

    def set(self, key: str, value: Any, source: str = "flag") -> None:
        if key == "sources" or key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        setattr(self, key, _coerce(key, value, _FIELD_TYPES[key]))
        self.sources[key] = source

    def check(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got '{self.backend}'")
        if self.labeling_mode not in LABELING_MODES:
            raise ConfigError(f"labeling_mode must be one of {LABELING_MODES}, got '{self.labeling_mode}'")
        if self.gating_metric not in GATING_METRICS:
            raise ConfigError(f"gating_metric must be one of {GATING_METRICS}, got '{self.gating_metric}'")
        for key in ("k", "max_steps", "max_new_tokens", "workers", "max_in_flight", "feature_dim"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.epochs < 0 or self.max_retries < 0:
            raise ConfigError("epochs and max_retries must be >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction must be in [0, 1), got {self.holdout_fraction}")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            raise ConfigError(f"max_failure_fraction must be in [0, 1], got {self.max_failure_fraction}")
        try:
            self.bm25_params()
            self.featurizer()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    # --------------------------
    # Derived settings
    # --------------------------

    def bm25_params(self) -> BM25Params:
        return BM25Params(k1=self.k1, b=self.b, stem=self.stem, remove_stopwords=self.remove_stopwords)

    def featurizer(self) -> FeaturizerConfig:
        return FeaturizerConfig(dim=self.feature_dim, ngram_orders=tuple(self.ngram_orders))

    def output_path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def index_file(self) -> str:
        return self.index_path or self.output_path("index.bin")

    def exclusion_file(self) -> str:
        return self.exclusion_path or self.output_path("exclusion_ids.txt")

    def triples_file(self) -> str:
        return self.triples_path or self.output_path("triples.jsonl")

    def training_set_file(self) -> str:
        return self.training_set_path or self.output_path("training_set.jsonl")

    def classifier_file(self) -> str:
        return self.classifier_path or self.output_path("classifier.bin")

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            logger.warning("Environment variable %s is not set; sending a placeholder API key", self.api_key_env)
            return "EMPTY"
        return key

    def snapshot(self) -> Dict[str, Any]:
        """Config values for reports. Holds the key's variable name only, never the key."""
        d = asdict(self)
        d.pop("sources", None)
        d["ngram_orders"] = list(self.ngram_orders)
        return d

    # --------------------------
    # Path validation
    # --------------------------

    def validate_paths(self, command: str, mode: Optional[str] = None) -> None:
        """Every input a command reads must exist before it starts."""
        required: List[str] = []
        if command in ("index", "label", "evaluate"):
            required.append("corpus_path")
        if command in ("label", "evaluate", "report"):
            required.append("query_path")
        runs_strategies = command == "evaluate" or (command == "label" and self.labeling_mode != "bias_only")
        if runs_strategies and self.backend == "mock":
            required.append("mock_script_path")

        problems = [f"{key} is not set" for key in required if not getattr(self, key)]
        files = {key: getattr(self, key) for key in required if getattr(self, key)}

        if command == "train":
            files["training_set_path"] = self.training_set_file()
        if command == "evaluate":
            if mode not in EVALUATE_MODES:
                raise ConfigError(f"evaluate mode must be one of {EVALUATE_MODES}, got '{mode}'")
            if mode == "adaptive":
                files["classifier_path"] = self.classifier_file()
            if mode == "oracle":
                files["triples_path"] = self.triples_file()
            for key in ("exclusion_path", "baseline_trace"):
                if getattr(self, key):
                    files[key] = getattr(self, key)
        if self.prompt_dir and command in ("label", "evaluate"):
            files["prompt_dir"] = self.prompt_dir

        for key, path in files.items():
            if not os.path.exists(path):
                problems.append(f"{key} does not exist: {path}")
        if problems:
            raise ConfigError(f"{command}: " + "; ".join(problems))


_FIELD_TYPES = {name: t for name, t in get_type_hints(RunConfig).items() if name != "sources"}


def _coerce(key: str, value: Any, typ: Any) -> Any:
    """Turn a config-file string or flag value into the field's declared type."""
    if typ in (Optional[str],):
        return None if value in ("", None) else str(value)
    if typ is str:
        return str(value)
    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in _TRUE:
                return True
            if s in _FALSE:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ == Tuple[int, ...]:
            if isinstance(value, (list, tuple)):
                return tuple(int(v) for v in value)
            return tuple(int(v) for v in str(value).replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"invalid value for {key}: {e}") from e
    raise ConfigError(f"unsupported config type for {key}")


def read_config_file(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values
