import math

import numpy as np
import pytest
import torch
from torch import nn

from conftest import tiny_encoder
from natureval.dataset import DatasetSplit, RatedPair
from natureval.errors import ConfigError, TrainingError, ValidationError
from natureval.features import encode_batch
from natureval.models import run_inference
from natureval.training import (
    Checkpoint,
    EpochRecord,
    HyperParams,
    TrainingCurve,
    fit_majority,
    fit_svm,
    select_best,
    train_classifier,
    transfer_train,
)
from natureval.features import bow_matrix
from oracles import cross_entropy_oracle

NO_DROPOUT = dict(hidden_dropout_prob=0.0, attention_probs_dropout_prob=0.0)


def _curve(points):
    return TrainingCurve([EpochRecord(e, a, 1.0) for e, a in points])


@pytest.mark.parametrize("points, best", [
    ([(1, 0.5), (2, 0.7), (3, 0.6)], 2),
    ([(1, 0.1), (2, 0.7), (3, 0.2), (4, 0.3), (5, 0.7)], 2),
    ([(1, 0.1), (2, 0.2), (3, 0.3)], 3),
])
def test_select_best(points, best):
    curve = _curve(points)
    snaps = {e: Checkpoint({}, e, a) for e, a in points}
    assert select_best(curve, snaps).epoch == best
    assert select_best(curve).epoch == best


def test_select_best_empty():
    with pytest.raises(ValidationError):
        select_best(TrainingCurve())


def test_curve_roundtrip_and_ordering(tmp_path):
    c = _curve([(1, 0.2), (2, 0.4)])
    c.save(tmp_path / "curve.jsonl")
    assert TrainingCurve.load(tmp_path / "curve.jsonl") == c
    with pytest.raises(ValidationError):
        c.append(EpochRecord(2, 0.1, 0.0))


@pytest.mark.parametrize("bad", [dict(batch_size=0), dict(epochs=0), dict(learning_rate=0.0),
                                 dict(optimizer="sgd")])
def test_hyperparams_validation(bad):
    with pytest.raises(ConfigError):
        HyperParams(**bad)


def test_hyperparams_defaults():
    hp = HyperParams()
    assert (hp.batch_size, hp.epochs, hp.learning_rate, hp.optimizer) == (256, 25, 5e-3, "adam")
    with pytest.raises(ConfigError):
        HyperParams.from_dict({"momentum": 0.9})


def _random_split(n_train, n_dev, seed=0):
    """Pairs of random synthetic-vocabulary tokens with balanced random labels."""
    from natureval.synthetic import TOKENS

    rng = np.random.default_rng(seed)

    def pairs(n, offset):
        out = []
        for i in range(n):
            s = " ".join(rng.choice(TOKENS, size=int(rng.integers(3, 10))))
            r = " ".join(rng.choice(TOKENS, size=int(rng.integers(3, 10))))
            lab = 1 + (i + offset) % 6
            out.append(RatedPair(s, r, {"naturalness": lab, "quality": 7 - lab, "informativeness": lab}, 3))
        return out

    return DatasetSplit(pairs(n_train, 0), pairs(n_dev, 3), [], seed=seed)


def test_curve_length_matches_epochs(tokenizer, toy_split):
    model = tiny_encoder(tokenizer)
    hp = HyperParams(batch_size=32, epochs=1, learning_rate=1e-3, seed=0, device="cpu")
    ck, curve = train_classifier(model, toy_split, "naturalness", hp, tokenizer, max_len=48)
    assert len(curve) == 1 and curve.records[0].epoch == 1
    assert ck.epoch == 1 and 0.0 <= ck.dev_accuracy <= 1.0
    assert ck.provenance["target"] == "naturalness"


def test_step0_loss_matches_independent_cross_entropy(tokenizer):
    data = _random_split(48, 12)
    model = tiny_encoder(tokenizer, **NO_DROPOUT)
    enc = {name: encode_batch(data.part(name), tokenizer, 32) for name in ("train", "dev")}
    logits = run_inference(model, enc["train"])
    gold = [p.label("naturalness") - 1 for p in data.train]
    expected = cross_entropy_oracle(logits.tolist(), gold)
    seen = {}
    hp = HyperParams(batch_size=64, epochs=1, learning_rate=1e-3, seed=0, device="cpu")
    train_classifier(model, data, "naturalness", hp, encoded=enc, on_step=lambda s, l: seen.setdefault(s, l))
    assert seen[0] == pytest.approx(expected, abs=1e-5)


def test_first_epoch_loss_near_ln6(tokenizer):
    data = _random_split(240, 12)
    model = tiny_encoder(tokenizer)
    hp = HyperParams(batch_size=32, epochs=1, seed=0, device="cpu")
    _, curve = train_classifier(model, data, "naturalness", hp, tokenizer, max_len=32)
    assert abs(curve.records[0].train_loss - math.log(6)) < 0.1


@pytest.mark.slow
def test_overfit_32_samples(tokenizer):
    data = _random_split(32, 0)
    data.dev = data.train
    model = tiny_encoder(tokenizer, **NO_DROPOUT)
    hp = HyperParams(batch_size=32, epochs=200, learning_rate=1e-3, seed=0, device="cpu")
    ck, curve = train_classifier(model, data, "naturalness", hp, tokenizer, max_len=32)
    assert ck.dev_accuracy >= 0.95


class _NanModel(nn.Module):
    def __init__(self):
        super().__init__()
        self.w = nn.Parameter(torch.zeros(1))

    def forward(self, ids, seg, mask):
        return torch.full((ids.shape[0], 6), float("nan")) * self.w


def test_non_finite_loss_aborts(tokenizer, toy_split):
    hp = HyperParams(batch_size=16, epochs=1, device="cpu")
    with pytest.raises(TrainingError, match="step 0"):
        train_classifier(_NanModel(), toy_split, "naturalness", hp, tokenizer, max_len=16)


def test_empty_train_split(tokenizer):
    with pytest.raises(ValidationError):
        train_classifier(_NanModel(), DatasetSplit([], [], []), "naturalness", HyperParams(), tokenizer)


def test_neural_training_is_seed_deterministic(tokenizer, toy_split):
    hp = HyperParams(batch_size=32, epochs=2, learning_rate=1e-3, seed=3, device="cpu")
    runs = []
    for _ in range(2):
        model = tiny_encoder(tokenizer, seed=5)
        runs.append(train_classifier(model, toy_split, "naturalness", hp, tokenizer, max_len=48)[1])
    assert runs[0] == runs[1]


def test_transfer_stage2_starts_from_stage1_encoder(tokenizer, toy_split):
    model = tiny_encoder(tokenizer)
    hp1 = HyperParams(batch_size=32, epochs=2, learning_rate=1e-3, seed=1, device="cpu")
    hp2 = HyperParams(batch_size=32, epochs=3, learning_rate=1e-3, seed=2, device="cpu")
    at_start = {}

    def grab(stage, m):
        at_start[stage] = {k: v.detach().clone() for k, v in m.state_dict().items()}

    ck, curve = transfer_train(model, toy_split, "quality", hp1, hp2, tokenizer, max_len=48, on_stage_start=grab)
    stage1 = ck.parent
    assert stage1 is not None and stage1.provenance["target"] == "quality"
    encoder_keys = [k for k in stage1.state if k.startswith("encoder.")]
    assert encoder_keys
    for k in encoder_keys:
        assert torch.equal(at_start[2][k], stage1.state[k]), k
    # fresh head for stage 2
    assert not torch.equal(at_start[2]["head.weight"], stage1.state["head.weight"])
    assert torch.count_nonzero(at_start[2]["head.bias"]) == 0
    assert len(curve) == 3
    lineage = ck.provenance["lineage"]
    assert lineage["source"] == "quality" and lineage["stage1_epoch"] == stage1.epoch
    assert ck.provenance["target"] == "naturalness"


def test_transfer_rejects_bad_source(tokenizer, toy_split):
    with pytest.raises(ConfigError):
        transfer_train(tiny_encoder(tokenizer), toy_split, "naturalness", HyperParams(), HyperParams(), tokenizer)


def test_majority_and_svm_fits_are_deterministic(toy_split):
    assert fit_majority(toy_split).label == fit_majority(toy_split).label
    (a, va), (b, vb) = fit_svm(toy_split, seed=0), fit_svm(toy_split, seed=0)
    X = bow_matrix(toy_split.test, va)
    assert va == vb
    np.testing.assert_array_equal(a.decision_values(X), b.decision_values(X))


def test_svm_beats_majority_on_learnable_toy_corpus():
    from natureval.dataset import aggregate, split
    from natureval.synthetic import synthetic_records

    data = split(aggregate(synthetic_records(600, seed=9)), seed=0)
    svm, vocab = fit_svm(data)
    gold = np.asarray([p.label("naturalness") for p in data.test])
    svm_acc = np.mean(svm.predict(bow_matrix(data.test, vocab)) == gold)
    maj_acc = np.mean(gold == fit_majority(data).label)
    assert svm_acc > maj_acc
