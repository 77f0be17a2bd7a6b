"""
Query-Complexity Classifier
===========================

Predicts one of three complexity labels for a question:

    A  answerable by the generator alone          -> no retrieval
    B  needs one retrieval step                    -> single-step
    C  needs iterative retrieval and reasoning     -> multi-step

The model is multinomial logistic regression over hashed word n-gram counts
plus a question-length bucket, trained by full-batch gradient descent on the
mean cross-entropy. Ties in the predicted distribution go to the cheaper label.

Model file layout (little-endian):

    magic      8 bytes  b"ARAGCLS1"
    header     <I length, then UTF-8 JSON (featurizer config, shape, training meta)
    weights    3 x dim float64, row-major
    bias       3 float64
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.special import logsumexp, softmax
from sklearn.utils import murmurhash3_32

from .rag_retriever import tokenize

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"ARAGCLS1"
_U32 = struct.Struct("<I")


class ComplexityLabel(str, Enum):
    A = "A"
    B = "B"
    C = "C"

    @property
    def index(self) -> int:
        return LABELS.index(self)


LABELS: Tuple[ComplexityLabel, ...] = (ComplexityLabel.A, ComplexityLabel.B, ComplexityLabel.C)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, learning_rate: float, loss: float):
        self.epoch = epoch
        self.learning_rate = learning_rate
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}: loss={loss} with learning_rate={learning_rate}; "
            "lower the learning rate"
        )


class ModelFormatError(ValueError):
    pass


class FeaturizerMismatchError(ValueError):
    pass


# --------------------------
# Features
# --------------------------

@dataclass(frozen=True)
class FeaturizerConfig:
    dim: int = 2 ** 18
    ngram_orders: Tuple[int, ...] = (1, 2)
    length_bucket_size: int = 4
    max_length_bucket: int = 8

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"feature dim must be >= 1, got {self.dim}")
        if not self.ngram_orders or any(n < 1 for n in self.ngram_orders):
            raise ValueError(f"invalid ngram_orders {self.ngram_orders}")

    def to_json(self) -> Dict[str, Any]:
        d = asdict(self)
        d["ngram_orders"] = list(self.ngram_orders)
        return d

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> "FeaturizerConfig":
        return cls(dim=int(d["dim"]), ngram_orders=tuple(int(n) for n in d["ngram_orders"]),
                   length_bucket_size=int(d["length_bucket_size"]),
                   max_length_bucket=int(d["max_length_bucket"]))


@dataclass(frozen=True)
class FeatureVector:
    dim: int
    entries: Dict[int, float]


def feature_keys(question: str, config: FeaturizerConfig) -> List[str]:
    tokens = tokenize(question)
    keys = []
    for n in config.ngram_orders:
        for i in range(len(tokens) - n + 1):
            keys.append(f"{n}g:" + " ".join(tokens[i:i + n]))
    keys.append(f"len:{min(len(tokens) // config.length_bucket_size, config.max_length_bucket)}")
    return keys


def feature_index(key: str, config: FeaturizerConfig) -> int:
    return murmurhash3_32(key, seed=0, positive=True) % config.dim


def featurize(question: str, config: FeaturizerConfig) -> FeatureVector:
    entries: Dict[int, float] = {}
    for key in feature_keys(question, config):
        idx = feature_index(key, config)
        entries[idx] = entries.get(idx, 0.0) + 1.0
    return FeatureVector(dim=config.dim, entries=entries)


def to_matrix(vectors: Sequence[FeatureVector], dim: int) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for r, v in enumerate(vectors):
        for c in sorted(v.entries):
            rows.append(r)
            cols.append(c)
            vals.append(v.entries[c])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(vectors), dim), dtype=np.float64)


# --------------------------
# Model
# --------------------------

@dataclass
class ClassifierModel:
    weights: np.ndarray
    bias: np.ndarray
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)
    training_meta: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def initial(cls, featurizer: Optional[FeaturizerConfig] = None) -> "ClassifierModel":
        featurizer = featurizer or FeaturizerConfig()
        return cls(np.zeros((len(LABELS), featurizer.dim)), np.zeros(len(LABELS)), featurizer)

    def logits(self, X: sparse.csr_matrix) -> np.ndarray:
        return np.asarray(X @ self.weights.T) + self.bias


class Gradient(NamedTuple):
    weights: np.ndarray
    bias: np.ndarray


def label_indices(labels: Sequence[ComplexityLabel]) -> np.ndarray:
    return np.array([ComplexityLabel(l).index for l in labels], dtype=np.int64)


def loss_and_gradient(model: ClassifierModel, X: sparse.csr_matrix, y: np.ndarray) -> Tuple[float, Gradient]:
    """Mean cross-entropy of the batch and its exact gradient w.r.t. weights and bias."""
    n = X.shape[0]
    if n == 0:
        raise ValueError("loss_and_gradient needs a non-empty batch")
    logits = model.logits(X)
    rows = np.arange(n)
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[rows, y]))

    g = softmax(logits, axis=1)
    g[rows, y] -= 1.0
    g /= n
    grad_w = np.asarray((X.T @ g).T)
    return loss, Gradient(grad_w, g.sum(axis=0))


def predict_proba(model: ClassifierModel, questions: Sequence[str]) -> np.ndarray:
    X = to_matrix([featurize(q, model.featurizer) for q in questions], model.featurizer.dim)
    return softmax(model.logits(X), axis=1)


def predict(model: ClassifierModel, question: str,
            featurizer: Optional[FeaturizerConfig] = None) -> Tuple[ComplexityLabel, np.ndarray]:
    if featurizer is not None and featurizer != model.featurizer:
        raise FeaturizerMismatchError(f"model was trained with {model.featurizer}, got {featurizer}")
    probs = predict_proba(model, [question])[0]
    # np.argmax returns the first maximum, i.e. the cheapest tied label.
    return LABELS[int(np.argmax(probs))], probs


def accuracy(model: ClassifierModel, pairs: Sequence[Tuple[str, ComplexityLabel]]) -> float:
    if not pairs:
        return 0.0
    probs = predict_proba(model, [q for q, _ in pairs])
    return float(np.mean(np.argmax(probs, axis=1) == label_indices([l for _, l in pairs])))


# --------------------------
# Training
# --------------------------

def _split(n: int, holdout_fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    order = np.arange(n)
    if holdout_fraction <= 0 or n < 2:
        return order, order[:0]
    perm = rng.permutation(n)
    n_hold = min(n - 1, max(1, int(round(n * holdout_fraction))))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train(
    pairs: Sequence[Tuple[str, ComplexityLabel]],
    epochs: int,
    lr: float,
    seed: int,
    featurizer: Optional[FeaturizerConfig] = None,
    holdout_fraction: float = 0.0,
    on_epoch: Optional[Callable[[int, float, Optional[float]], None]] = None,
) -> ClassifierModel:
    """
    Full-batch gradient descent on the mean cross-entropy, starting from zero
    weights. With holdout_fraction > 0 a seeded split is held out and the
    weights of the epoch with the best held-out accuracy (then lower held-out
    loss, then earlier epoch) are returned.
    """
    if not pairs:
        raise ValueError("cannot train a classifier on an empty training set")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")

    featurizer = featurizer or FeaturizerConfig()
    rng = np.random.default_rng(seed)
    X_all = to_matrix([featurize(q, featurizer) for q, _ in pairs], featurizer.dim)
    y_all = label_indices([l for _, l in pairs])
    train_idx, hold_idx = _split(len(pairs), holdout_fraction, rng)
    X, y = X_all[train_idx], y_all[train_idx]
    X_hold, y_hold = X_all[hold_idx], y_all[hold_idx]

    model = ClassifierModel.initial(featurizer)
    train_losses: List[float] = []
    holdout_losses: List[float] = []
    best: Optional[Tuple[Tuple[float, float, int], np.ndarray, np.ndarray]] = None

    loss, grad = loss_and_gradient(model, X, y)
    for epoch in range(1, epochs + 1):
        model.weights -= lr * grad.weights
        model.bias -= lr * grad.bias
        loss, grad = loss_and_gradient(model, X, y)
        if not np.isfinite(loss) or not np.all(np.isfinite(model.bias)):
            raise TrainingDivergedError(epoch, lr, loss)
        train_losses.append(loss)

        hold_loss = None
        if len(hold_idx):
            hold_loss, _ = loss_and_gradient(model, X_hold, y_hold)
            holdout_losses.append(hold_loss)
            hold_acc = float(np.mean(np.argmax(model.logits(X_hold), axis=1) == y_hold))
            key = (-hold_acc, hold_loss, epoch)
            if best is None or key < best[0]:
                best = (key, model.weights.copy(), model.bias.copy())
        if on_epoch is not None:
            on_epoch(epoch, loss, hold_loss)

    best_epoch = epochs
    if best is not None:
        model.weights, model.bias = best[1], best[2]
        best_epoch = best[0][2]

    model.training_meta = {
        "epochs": epochs,
        "learning_rate": lr,
        "seed": seed,
        "holdout_fraction": holdout_fraction,
        "train_size": int(len(train_idx)),
        "holdout_size": int(len(hold_idx)),
        "best_epoch": best_epoch,
        "train_losses": train_losses,
        "holdout_losses": holdout_losses,
        "final_train_loss": loss,
    }
    logger.info("Trained classifier: %d epochs, final train loss %.6f, best epoch %d", epochs, loss, best_epoch)
    return model


# --------------------------
# Serialization
# --------------------------

def save_model(model: ClassifierModel, path: str) -> None:
    header = {
        "featurizer": model.featurizer.to_json(),
        "shape": list(model.weights.shape),
        "training_meta": model.training_meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(_U32.pack(len(header_bytes)))
        f.write(header_bytes)
        f.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.bias, dtype="<f8").tobytes())


def load_model(path: str) -> ClassifierModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {data[:len(MODEL_MAGIC)]!r}, expected {MODEL_MAGIC!r}")
    offset = len(MODEL_MAGIC)
    (header_len,) = _U32.unpack_from(data, offset)
    offset += _U32.size
    header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    offset += header_len

    featurizer = FeaturizerConfig.from_json(header["featurizer"])
    rows, dim = header["shape"]
    if rows != len(LABELS) or dim != featurizer.dim:
        raise FeaturizerMismatchError(f"{path}: weight shape {header['shape']} does not match feature dim {featurizer.dim}")

    n_weights = rows * dim * 8
    if len(data) != offset + n_weights + rows * 8:
        raise ModelFormatError(f"{path}: unexpected file size {len(data)}")
    weights = np.frombuffer(data, dtype="<f8", count=rows * dim, offset=offset).reshape(rows, dim).copy()
    bias = np.frombuffer(data, dtype="<f8", count=rows, offset=offset + n_weights).copy()
    return ClassifierModel(weights, bias, featurizer, header["training_meta"])
