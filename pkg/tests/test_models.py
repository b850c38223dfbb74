import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from conftest import tiny_encoder
from natureval.errors import ConfigError, IncompatibleArtifactError, NumericError, ValidationError
from natureval.features import encode_batch
from natureval.models import (
    BiLstmClassifier,
    ClassifierHead,
    EncoderClassifier,
    MajorityModel,
    bilstm_forward,
    encoder_classify,
    head_loss_and_grad,
    load_neural,
    majority_fit_predict,
    predict,
    save_neural,
    softmax,
    svm_train,
)
from oracles import tally


def test_majority_table3():
    counts = (394, 373, 670, 2185, 3062, 4669)
    labels = [lab for lab, c in zip(range(1, 7), counts) for _ in range(c)]
    preds = majority_fit_predict(labels, 5)
    assert preds == [6] * 5
    assert round(counts[5] / sum(counts), 2) == 0.41


@pytest.mark.parametrize("train, expected", [([2, 2, 5], 2), ([1, 6], 6), ([3], 3)])
def test_majority_rules(train, expected):
    assert majority_fit_predict(train, 2) == [expected, expected]


def test_majority_empty():
    with pytest.raises(ValidationError):
        MajorityModel.fit([])


@given(st.lists(st.integers(1, 6), min_size=1, max_size=50), st.lists(st.integers(1, 6), min_size=1, max_size=50))
def test_majority_accuracy_equals_tally(train, query):
    m = MajorityModel.fit(train)
    acc = np.mean(np.asarray(m.predict(len(query))) == np.asarray(query))
    assert acc == pytest.approx(tally(query)[m.label] / len(query))


def test_svm_separable():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 0.3, (20, 4)) + [3, 3, 0, 0]
    b = rng.normal(0, 0.3, (20, 4)) + [0, 0, 3, 3]
    feats = list(np.vstack([a, b]))
    labels = [1] * 20 + [6] * 20
    model = svm_train(feats, labels, C=1.0)
    X = np.vstack(feats)
    assert (model.predict(X) == labels).all()
    assert model.decision_values(X).shape == (40, 6)


def test_svm_identical_features_predict_constant():
    feats = [np.ones(5)] * 12
    labels = [1, 2, 3, 4, 5, 6] * 2
    preds = svm_train(feats, labels).predict(np.ones((7, 5)))
    assert len(set(preds.tolist())) == 1


def test_svm_errors():
    with pytest.raises(ValidationError):
        svm_train([np.ones(3), np.ones(4)], [1, 2])
    with pytest.raises(ValidationError):
        svm_train([np.ones(3)], [1, 2])
    with pytest.raises(ConfigError):
        svm_train([np.ones(3)], [1], C=0)


def test_svm_single_class():
    m = svm_train([np.ones(3), np.zeros(3)], [4, 4])
    assert m.predict(np.eye(3)).tolist() == [4, 4, 4]


def test_predict_rules():
    assert predict([0, 0, 0, 0, 0, 9]) == 6
    assert predict([1.5] * 6) == 1
    with pytest.raises(NumericError):
        predict([0, 0, np.nan, 0, 0, 0])
    with pytest.raises(NumericError):
        predict([0, 0, np.inf, 0, 0, 0])


finite = st.floats(-50, 50, allow_nan=False)


@given(st.lists(finite, min_size=6, max_size=6), st.floats(-1e3, 1e3, allow_nan=False))
def test_softmax_and_shift_invariance(logits, c):
    p = softmax(logits)
    assert p.sum() == pytest.approx(1.0, abs=1e-6)
    assert (p > 0).all()
    shifted = [v + c for v in logits]
    # argmax is stable under shifts whenever the top score is not a near-tie
    top = sorted(logits)[-2:]
    if top[1] - top[0] > 1e-6 * (1 + abs(c)):
        assert predict(shifted) == predict(logits)


def test_head_init():
    head = ClassifierHead(768, generator=torch.Generator().manual_seed(0))
    assert head.weight.shape == (6, 768)
    assert head.bias.abs().sum() == 0
    assert abs(head.weight.std().item() - 0.02) < 0.002


def test_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    n, h = 5, 7
    W, b = rng.normal(0, 0.5, (6, h)), rng.normal(0, 0.5, 6)
    x, y = rng.normal(size=(n, h)), rng.integers(0, 6, n)
    _, dW, db = head_loss_and_grad(W, b, x, y)
    eps = 1e-6
    num = np.zeros_like(W)
    for i in range(6):
        for j in range(h):
            Wp, Wm = W.copy(), W.copy()
            Wp[i, j] += eps
            Wm[i, j] -= eps
            num[i, j] = (head_loss_and_grad(Wp, b, x, y)[0] - head_loss_and_grad(Wm, b, x, y)[0]) / (2 * eps)
    assert np.linalg.norm(num - dW) / np.linalg.norm(num) < 1e-4
    # closed form agrees with autograd through the torch head
    head = ClassifierHead(h).double()
    with torch.no_grad():
        head.weight.copy_(torch.from_numpy(W))
        head.bias.copy_(torch.from_numpy(b))
    loss = torch.nn.functional.cross_entropy(head(torch.from_numpy(x)), torch.from_numpy(y))
    loss.backward()
    np.testing.assert_allclose(head.weight.grad.numpy(), dW, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(head.bias.grad.numpy(), db, rtol=1e-10, atol=1e-12)


def _toy_batch(tokenizer, pairs, max_len=32):
    return encode_batch(pairs, tokenizer, max_len)


def test_bilstm_shape_and_padding_invariance(tokenizer, toy_pairs):
    model = BiLstmClassifier(len(tokenizer), embed_dim=16, hidden=12, seed=0)
    batch = _toy_batch(tokenizer, toy_pairs[:8])
    logits = bilstm_forward(batch, model)
    assert logits.shape == (8, 6)
    noisy = {k: v.copy() for k, v in batch.items()}
    rng = np.random.default_rng(0)
    pad = noisy["attention_mask"] == 0
    noisy["input_ids"][pad] = rng.integers(0, len(tokenizer), pad.sum())
    noisy["token_type_ids"][pad] = 1
    np.testing.assert_allclose(bilstm_forward(noisy, model), logits, atol=1e-6)


def test_bilstm_rejects_out_of_range_ids(tokenizer, toy_pairs):
    model = BiLstmClassifier(len(tokenizer), embed_dim=8, hidden=8)
    batch = _toy_batch(tokenizer, toy_pairs[:2])
    batch["input_ids"][0, 1] = len(tokenizer) + 3
    with pytest.raises(ValidationError):
        bilstm_forward(batch, model)


def test_bilstm_default_dims():
    m = BiLstmClassifier(100)
    assert m.lstm.num_layers == 1 and m.lstm.bidirectional
    assert m.embedding.embedding_dim == 768 and m.lstm.hidden_size == 768
    assert m.head.in_features == 1536


def test_bilstm_overfits_single_batch(tokenizer, toy_pairs):
    torch.manual_seed(0)
    pairs = toy_pairs[:16]
    batch = _toy_batch(tokenizer, pairs)
    y = torch.tensor([p.label("naturalness") - 1 for p in pairs])
    model = BiLstmClassifier(len(tokenizer), embed_dim=32, hidden=32, seed=0)
    opt = torch.optim.Adam(model.parameters(), lr=5e-3)
    t = {k: torch.as_tensor(v) for k, v in batch.items()}
    for _ in range(200):
        loss = torch.nn.functional.cross_entropy(model(t["input_ids"], t["token_type_ids"], t["attention_mask"]), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    preds = bilstm_forward(batch, model).argmax(1)
    assert (preds == y.numpy()).mean() >= 0.95


def test_encoder_shapes_and_determinism(tokenizer, toy_pairs):
    model = tiny_encoder(tokenizer)
    batch = _toy_batch(tokenizer, [toy_pairs[0], toy_pairs[1], toy_pairs[0]])
    logits = encoder_classify(batch, model)
    assert logits.shape == (3, 6)
    np.testing.assert_array_equal(logits[0], logits[2])
    with torch.no_grad():
        model.eval()
        t = {k: torch.as_tensor(v) for k, v in batch.items()}
        pooled = model.pooled(t["input_ids"], t["token_type_ids"], t["attention_mask"])
    assert pooled.shape == (3, 64)


def test_encoder_padding_invariance(tokenizer, toy_pairs):
    model = tiny_encoder(tokenizer)
    batch = _toy_batch(tokenizer, toy_pairs[:6])
    base = encoder_classify(batch, model)
    noisy = {k: v.copy() for k, v in batch.items()}
    pad = noisy["attention_mask"] == 0
    noisy["input_ids"][pad] = np.random.default_rng(1).integers(0, len(tokenizer), pad.sum())
    np.testing.assert_allclose(encoder_classify(noisy, model), base, atol=1e-6)


def test_encoder_width_mismatch(tokenizer):
    model = tiny_encoder(tokenizer)
    with pytest.raises(ConfigError):
        EncoderClassifier(model.encoder, ClassifierHead(32))


def test_encoder_default_head_width(tiny_checkpoint):
    model = EncoderClassifier.from_pretrained(tiny_checkpoint, seed=0)
    assert model.head.in_features == model.encoder.config.hidden_size == 64
    assert model.head.out_features == 6


def test_encoder_rejects_unknown_ids(tokenizer, toy_pairs):
    model = tiny_encoder(tokenizer)
    batch = _toy_batch(tokenizer, toy_pairs[:1])
    batch["input_ids"][0, 1] = 10_000
    with pytest.raises(IncompatibleArtifactError):
        encoder_classify(batch, model)


@pytest.mark.parametrize("kind", ["encoder", "bilstm"])
def test_save_load_roundtrip(tmp_path, tokenizer, toy_pairs, kind):
    if kind == "encoder":
        model = tiny_encoder(tokenizer)
    else:
        model = BiLstmClassifier(len(tokenizer), embed_dim=8, hidden=8, seed=0)
    save_neural(model, tmp_path, tokenizer)
    assert {"weights.pt", "head.pt", "config.json", "vocab.txt"} <= {p.name for p in tmp_path.iterdir()}
    batch = _toy_batch(tokenizer, toy_pairs[:4])
    from natureval.models import run_inference

    np.testing.assert_allclose(run_inference(load_neural(tmp_path), batch), run_inference(model, batch), atol=1e-6)
