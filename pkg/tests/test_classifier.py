import math

import numpy as np
import pytest

from src.rag_classifier import (
    ClassifierModel,
    ComplexityLabel,
    FeatureVector,
    FeaturizerConfig,
    FeaturizerMismatchError,
    ModelFormatError,
    TrainingDivergedError,
    accuracy,
    feature_index,
    feature_keys,
    featurize,
    label_indices,
    load_model,
    loss_and_gradient,
    predict,
    save_model,
    to_matrix,
    train,
)

SMALL = FeaturizerConfig(dim=2 ** 12)


def separable_pairs(n_per_class=100, seed=0):
    """Three disjoint keyword vocabularies, one per label."""
    rng = np.random.default_rng(seed)
    vocab = {
        ComplexityLabel.A: [f"alpha{i}" for i in range(10)],
        ComplexityLabel.B: [f"beta{i}" for i in range(10)],
        ComplexityLabel.C: [f"gamma{i}" for i in range(10)],
    }
    pairs = []
    for label, words in vocab.items():
        for _ in range(n_per_class):
            pairs.append((" ".join(rng.choice(words, size=3)), label))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


# --------------------------
# Features
# --------------------------

def test_empty_question_has_only_length_bucket():
    vec = featurize("", SMALL)
    assert vec.entries == {feature_index("len:0", SMALL): 1.0}


def test_featurize_is_deterministic():
    assert featurize("Who founded Google?", SMALL) == featurize("Who founded Google?", SMALL)


def test_one_word_change_touches_only_affected_ngrams():
    config = FeaturizerConfig()
    a, b = "who founded google in california", "who founded alphabet in california"
    keys_a, keys_b = set(feature_keys(a, config)), set(feature_keys(b, config))
    changed = keys_a ^ keys_b
    assert changed == {"1g:google", "2g:founded google", "2g:google in",
                       "1g:alphabet", "2g:founded alphabet", "2g:alphabet in"}
    all_keys = keys_a | keys_b
    assert len({feature_index(k, config) for k in all_keys}) == len(all_keys)

    va, vb = featurize(a, config), featurize(b, config)
    differing = {i for i in set(va.entries) | set(vb.entries) if va.entries.get(i) != vb.entries.get(i)}
    assert differing == {feature_index(k, config) for k in changed}


def test_repeated_ngrams_are_counted():
    vec = featurize("go go", SMALL)
    assert vec.entries[feature_index("1g:go", SMALL)] == 2.0


# --------------------------
# Loss and gradient
# --------------------------

def test_uniform_model_loss_is_ln3():
    model = ClassifierModel.initial(SMALL)
    pairs = separable_pairs(5)
    X = to_matrix([featurize(q, SMALL) for q, _ in pairs], SMALL.dim)
    loss, _ = loss_and_gradient(model, X, label_indices([l for _, l in pairs]))
    assert abs(loss - math.log(3)) < 1e-9


def test_confident_correct_model_has_near_zero_loss():
    config = FeaturizerConfig(dim=8)
    model = ClassifierModel.initial(config)
    model.bias[:] = [50.0, 0.0, 0.0]
    X = to_matrix([FeatureVector(8, {1: 1.0})], 8)
    loss, _ = loss_and_gradient(model, X, np.array([0]))
    assert loss < 1e-12


def _numeric_gradient(model, X, y, eps=1e-6):
    grad_w = np.zeros_like(model.weights)
    for idx in np.ndindex(*model.weights.shape):
        old = model.weights[idx]
        model.weights[idx] = old + eps
        up, _ = loss_and_gradient(model, X, y)
        model.weights[idx] = old - eps
        down, _ = loss_and_gradient(model, X, y)
        model.weights[idx] = old
        grad_w[idx] = (up - down) / (2 * eps)
    grad_b = np.zeros_like(model.bias)
    for i in range(len(model.bias)):
        old = model.bias[i]
        model.bias[i] = old + eps
        up, _ = loss_and_gradient(model, X, y)
        model.bias[i] = old - eps
        down, _ = loss_and_gradient(model, X, y)
        model.bias[i] = old
        grad_b[i] = (up - down) / (2 * eps)
    return grad_w, grad_b


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    dim = 12
    config = FeaturizerConfig(dim=dim)
    for _ in range(100):
        model = ClassifierModel(rng.normal(scale=0.5, size=(3, dim)), rng.normal(scale=0.5, size=3), config)
        n = int(rng.integers(1, 6))
        vectors = []
        for _ in range(n):
            idx = rng.choice(dim, size=int(rng.integers(1, 5)), replace=False)
            vectors.append(FeatureVector(dim, {int(i): float(rng.integers(1, 4)) for i in idx}))
        X = to_matrix(vectors, dim)
        y = rng.integers(0, 3, size=n)

        _, grad = loss_and_gradient(model, X, y)
        num_w, num_b = _numeric_gradient(model, X, y)
        analytic = np.concatenate([grad.weights.ravel(), grad.bias])
        numeric = np.concatenate([num_w.ravel(), num_b])
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        assert rel < 1e-5


# --------------------------
# Prediction and training
# --------------------------

def test_zero_model_predicts_uniform_and_cheapest_label():
    label, probs = predict(ClassifierModel.initial(SMALL), "anything at all")
    assert np.allclose(probs, [1 / 3] * 3)
    assert abs(probs.sum() - 1.0) < 1e-9
    assert label == ComplexityLabel.A


def test_zero_epochs_returns_initialization():
    model = train(separable_pairs(3), epochs=0, lr=0.5, seed=0, featurizer=SMALL)
    assert not model.weights.any() and not model.bias.any()


def test_training_converges_on_separable_set():
    pairs = separable_pairs(100)
    model = train(pairs, epochs=200, lr=0.5, seed=0, featurizer=SMALL)
    assert accuracy(model, pairs) >= 0.99
    for question, label in pairs[:30]:
        assert predict(model, question)[0] == label
    losses = model.training_meta["train_losses"]
    assert len(losses) == 200
    assert losses[-1] < losses[0] < math.log(3)


def test_small_learning_rate_loss_never_increases():
    model = train(separable_pairs(30), epochs=50, lr=0.05, seed=0, featurizer=SMALL)
    losses = model.training_meta["train_losses"]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_single_pair_becomes_confident():
    model = train([("who founded google", ComplexityLabel.B)], epochs=200, lr=0.5, seed=0, featurizer=SMALL)
    _, probs = predict(model, "who founded google")
    assert probs[ComplexityLabel.B.index] > 0.99


def test_training_is_bit_identical_across_runs(tmp_path):
    pairs = separable_pairs(20)
    paths = []
    for name in ("a.bin", "b.bin"):
        model = train(pairs, epochs=30, lr=0.5, seed=3, featurizer=SMALL, holdout_fraction=0.2)
        paths.append(tmp_path / name)
        save_model(model, str(paths[-1]))
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_holdout_selection_records_epoch_history():
    model = train(separable_pairs(20), epochs=15, lr=0.5, seed=1, featurizer=SMALL, holdout_fraction=0.25)
    meta = model.training_meta
    assert meta["holdout_size"] == 15 and meta["train_size"] == 45
    assert len(meta["holdout_losses"]) == 15
    assert 1 <= meta["best_epoch"] <= 15


def test_divergence_is_reported():
    with pytest.raises(TrainingDivergedError) as e:
        train(separable_pairs(5), epochs=5, lr=float("inf"), seed=0, featurizer=SMALL)
    assert e.value.epoch == 1


def test_empty_training_set_rejected():
    with pytest.raises(ValueError):
        train([], epochs=1, lr=0.1, seed=0)


# --------------------------
# Model file
# --------------------------

def test_model_round_trip(tmp_path):
    pairs = separable_pairs(10)
    model = train(pairs, epochs=20, lr=0.5, seed=0, featurizer=SMALL)
    path = tmp_path / "model.bin"
    save_model(model, str(path))
    loaded = load_model(str(path))
    assert loaded.featurizer == SMALL
    assert np.array_equal(loaded.weights, model.weights)
    assert loaded.training_meta["epochs"] == 20
    for question, _ in pairs:
        assert np.array_equal(predict(loaded, question)[1], predict(model, question)[1])


def test_model_file_errors(tmp_path):
    path = tmp_path / "model.bin"
    save_model(ClassifierModel.initial(SMALL), str(path))
    data = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ModelFormatError):
        load_model(str(tmp_path / "bad.bin"))
    (tmp_path / "short.bin").write_bytes(data[:-8])
    with pytest.raises(ModelFormatError):
        load_model(str(tmp_path / "short.bin"))


def test_predict_rejects_other_featurizer():
    with pytest.raises(FeaturizerMismatchError):
        predict(ClassifierModel.initial(SMALL), "q", featurizer=FeaturizerConfig(dim=2 ** 10))
