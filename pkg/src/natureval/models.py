"""The classifier ladder.

Every model emits six classes; label ``k`` lives at index ``k - 1``.
Neural models share one call signature,
``model(input_ids, token_type_ids, attention_mask) -> logits``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from natureval.errors import ConfigError, IncompatibleArtifactError, NumericError, ValidationError

NUM_CLASSES = 6
HEAD_INIT_STD = 0.02
MODEL_KINDS = ("majority", "svm", "bilstm", "encoder", "bleurt-tiny")
ENCODER_KINDS = ("encoder", "bleurt-tiny")
NEURAL_KINDS = ("bilstm",) + ENCODER_KINDS


def labels_to_index(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.int64) - 1


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(logits) -> int:
    """Label 1..6 of the largest score; the first index wins ties."""
    scores = np.asarray(logits, dtype=np.float64)
    if scores.shape != (NUM_CLASSES,):
        raise ValidationError(f"expected {NUM_CLASSES} scores, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise NumericError(f"non-finite logits: {scores.tolist()}")
    return int(np.argmax(scores)) + 1


def predict_batch(logits) -> np.ndarray:
    scores = np.asarray(logits, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != NUM_CLASSES:
        raise ValidationError(f"expected (B, {NUM_CLASSES}) logits, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite logits in batch")
    return scores.argmax(axis=1) + 1


# -- majority ------------------------------------------------------------------

@dataclass
class MajorityModel:
    label: int

    @classmethod
    def fit(cls, train_labels: Sequence[int]) -> "MajorityModel":
        if len(train_labels) == 0:
            raise ValidationError("majority baseline needs at least one training label")
        counts = Counter(int(x) for x in train_labels)
        # ties go to the larger label
        return cls(max(counts, key=lambda lab: (counts[lab], lab)))

    def predict(self, n: int) -> list[int]:
        return [self.label] * n


def majority_fit_predict(train_labels: Sequence[int], query_count: int) -> list[int]:
    return MajorityModel.fit(train_labels).predict(query_count)


# -- linear SVM ----------------------------------------------------------------

@dataclass
class SvmModel:
    """One-vs-rest linear SVM over BoW blocks.

    ``gamma`` is kept for config fidelity only; a linear kernel ignores it.
    """

    C: float = 1.0
    gamma: str = "auto"
    seed: int = 0
    classes_: np.ndarray | None = None
    estimator: object = field(default=None, repr=False)

    def fit(self, X, y) -> "SvmModel":
        from sklearn.svm import LinearSVC

        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] != y.shape[0]:
            raise ValidationError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if X.shape[0] == 0:
            raise ValidationError("empty training set")
        self.classes_ = np.unique(y)
        if len(self.classes_) == 1:
            self.estimator = None
            return self
        self.estimator = LinearSVC(C=self.C, random_state=self.seed, max_iter=20000, dual="auto")
        self.estimator.fit(X, y)
        return self

    @property
    def n_features(self) -> int | None:
        return None if self.estimator is None else self.estimator.coef_.shape[1]

    def decision_values(self, X) -> np.ndarray:
        """(n, 6) scores, one column per label; absent training classes get -inf."""
        out = np.full((X.shape[0], NUM_CLASSES), -np.inf)
        if self.estimator is None:
            out[:, self.classes_[0] - 1] = 0.0
            return out
        if X.shape[1] != self.n_features:
            raise ValidationError(f"feature width {X.shape[1]} != trained width {self.n_features}")
        dec = self.estimator.decision_function(X)
        if dec.ndim == 1:  # binary problem: sklearn returns the positive-class margin only
            dec = np.stack([-dec, dec], axis=1)
        out[:, self.estimator.classes_ - 1] = dec
        return out

    def predict(self, X) -> np.ndarray:
        return self.decision_values(X).argmax(axis=1) + 1


def svm_train(features, labels: Sequence[int], C: float = 1.0, gamma: str = "auto", seed: int = 0) -> SvmModel:
    """Fit the SVM on a list of count vectors or a (sparse) matrix."""
    import scipy.sparse as sp

    if C <= 0:
        raise ConfigError(f"C must be positive, got {C}")
    if isinstance(features, (list, tuple)):
        if not features:
            raise ValidationError("empty training set")
        widths = {len(f) for f in features}
        if len(widths) != 1:
            raise ValidationError(f"feature vectors have mixed widths {sorted(widths)}")
        X = sp.csr_matrix(np.vstack(features).astype(np.float64))
    else:
        X = features
    return SvmModel(C=C, gamma=gamma, seed=seed).fit(X, labels)


# -- heads and neural classifiers --------------------------------------------

class ClassifierHead(nn.Linear):
    """Linear map to 6 logits; softmax is folded into the loss."""

    def __init__(self, hidden: int, num_classes: int = NUM_CLASSES, generator: torch.Generator | None = None):
        super().__init__(hidden, num_classes)
        self.reset(generator)

    def reset(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.weight.normal_(0.0, HEAD_INIT_STD, generator=generator)
            self.bias.zero_()


def head_loss_and_grad(W: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of ``softmax(x @ W.T + b)`` and its closed-form gradients.

    Returns ``(loss, dW, db)`` with ``dW = (P - Y).T @ x / n``.
    """
    n = x.shape[0]
    p = softmax(x @ W.T + b)
    loss = -np.log(p[np.arange(n), y]).mean()
    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ x, delta.sum(axis=0)


class EncoderClassifier(nn.Module):
    """Pre-trained transformer encoder; its pooled [CLS] output feeds a 6-way head."""

    def __init__(self, encoder: nn.Module, head: ClassifierHead | None = None, kind: str = "encoder"):
        super().__init__()
        width = encoder.config.hidden_size
        if getattr(encoder, "pooler", None) is None:
            raise ConfigError("encoder has no pooling layer; pooled output is required")
        if head is None:
            head = ClassifierHead(width)
        if head.in_features != width:
            raise ConfigError(f"head width {head.in_features} != encoder pooled width {width}")
        self.encoder = encoder
        self.head = head
        self.kind = kind

    @property
    def hidden_size(self) -> int:
        return self.encoder.config.hidden_size

    @property
    def vocab_size(self) -> int:
        return self.encoder.config.vocab_size

    def pooled(self, input_ids, token_type_ids, attention_mask) -> torch.Tensor:
        out = self.encoder(input_ids=input_ids, token_type_ids=token_type_ids, attention_mask=attention_mask)
        return out.pooler_output

    def forward(self, input_ids, token_type_ids, attention_mask) -> torch.Tensor:
        return self.head(self.pooled(input_ids, token_type_ids, attention_mask))

    def encoder_state(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.encoder.state_dict().items()}

    def config_dict(self) -> dict:
        return {"kind": self.kind, "hidden_size": self.hidden_size, "vocab_size": self.vocab_size}

    @classmethod
    def from_pretrained(cls, path: str | Path, kind: str = "encoder", seed: int | None = None) -> "EncoderClassifier":
        """Load a BERT-architecture checkpoint directory (``config.json`` + weights).

        Any task head shipped with the checkpoint is discarded.
        """
        from transformers import BertModel

        _quiet_transformers()
        path = Path(path)
        if not (path / "config.json").exists():
            raise ConfigError(f"no encoder checkpoint (config.json) at {path}")
        encoder = BertModel.from_pretrained(str(path), add_pooling_layer=True)
        gen = None if seed is None else torch.Generator().manual_seed(seed)
        return cls(encoder, ClassifierHead(encoder.config.hidden_size, generator=gen), kind=kind)

    @classmethod
    def from_config(cls, kind: str = "encoder", seed: int | None = None, **bert_kwargs) -> "EncoderClassifier":
        """Randomly initialised encoder, e.g. the tiny stub used in tests."""
        from transformers import BertConfig, BertModel

        if seed is not None:
            torch.manual_seed(seed)
        config = BertConfig(**bert_kwargs)
        encoder = BertModel(config, add_pooling_layer=True)
        gen = None if seed is None else torch.Generator().manual_seed(seed)
        return cls(encoder, ClassifierHead(config.hidden_size, generator=gen), kind=kind)


class BiLstmClassifier(nn.Module):
    """Single-layer Bi-LSTM over the pair token stream.

    The final forward and backward states of the unpadded prefix are
    concatenated (width ``2 * hidden``) and fed to the head.
    """

    kind = "bilstm"

    def __init__(self, vocab_size: int, embed_dim: int = 768, hidden: int = 768, pad_id: int = 0,
                 seed: int | None = None):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=pad_id)
        self.lstm = nn.LSTM(embed_dim, hidden, num_layers=1, batch_first=True, bidirectional=True)
        gen = None if seed is None else torch.Generator().manual_seed(seed)
        self.head = ClassifierHead(2 * hidden, generator=gen)
        self.pad_id = pad_id

    @property
    def vocab_size(self) -> int:
        return self.embedding.num_embeddings

    @property
    def hidden_size(self) -> int:
        return self.lstm.hidden_size

    def forward(self, input_ids, token_type_ids, attention_mask) -> torch.Tensor:
        if input_ids.numel() and (input_ids.min() < 0 or input_ids.max() >= self.vocab_size):
            raise ValidationError(f"token id outside embedding range [0, {self.vocab_size})")
        lengths = attention_mask.sum(dim=1).clamp(min=1).cpu()
        emb = self.embedding(input_ids)
        packed = nn.utils.rnn.pack_padded_sequence(emb, lengths, batch_first=True, enforce_sorted=False)
        _, (h_n, _) = self.lstm(packed)
        # h_n: (2, B, hidden) = last forward state, last backward state
        final = torch.cat([h_n[0], h_n[1]], dim=-1)
        return self.head(final)

    def config_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embedding.embedding_dim,
            "hidden_size": self.hidden_size,
            "pad_id": self.pad_id,
        }


def _as_tensors(batch, device=None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return tuple(torch.as_tensor(np.asarray(batch[k]), dtype=torch.long, device=device)
                 for k in ("input_ids", "token_type_ids", "attention_mask"))


@torch.no_grad()
def run_inference(model: nn.Module, batch, batch_size: int = 256) -> np.ndarray:
    """Logits for an encoded batch (dict of arrays), in eval mode, as float64."""
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    ids, seg, mask = _as_tensors(batch, device)
    outs = []
    try:
        for start in range(0, ids.shape[0], batch_size):
            sl = slice(start, start + batch_size)
            outs.append(model(ids[sl], seg[sl], mask[sl]).double().cpu())
    finally:
        model.train(was_training)
    if not outs:
        return np.zeros((0, NUM_CLASSES))
    return torch.cat(outs).numpy()


def bilstm_forward(batch, model: BiLstmClassifier) -> np.ndarray:
    return run_inference(model, batch)


def encoder_classify(batch, model: EncoderClassifier) -> np.ndarray:
    ids = np.asarray(batch["input_ids"])
    if ids.size and ids.max() >= model.vocab_size:
        raise IncompatibleArtifactError(f"token id {ids.max()} outside encoder vocabulary ({model.vocab_size})")
    return run_inference(model, batch)


# -- construction and persistence -----------------------------------------------

def _quiet_transformers() -> None:
    from transformers.utils import logging as hf_logging

    hf_logging.set_verbosity_error()
    hf_logging.disable_progress_bar()


def build_neural(kind: str, *, checkpoint: str | Path | None = None, vocab_size: int | None = None,
                 pad_id: int = 0, seed: int | None = None, bilstm_dim: int = 768) -> nn.Module:
    if kind in ENCODER_KINDS:
        if checkpoint is None:
            raise ConfigError(f"model kind {kind!r} needs an encoder checkpoint")
        return EncoderClassifier.from_pretrained(checkpoint, kind=kind, seed=seed)
    if kind == "bilstm":
        if vocab_size is None:
            raise ConfigError("bilstm needs the subword vocabulary size")
        return BiLstmClassifier(vocab_size, embed_dim=bilstm_dim, hidden=bilstm_dim, pad_id=pad_id, seed=seed)
    raise ConfigError(f"{kind!r} is not a neural model kind")


def save_neural(model: nn.Module, out_dir: str | Path, tokenizer=None, extra: dict | None = None) -> None:
    """Write ``weights.pt`` (body), ``head.pt``, ``config.json`` and ``vocab.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    body = {k: v for k, v in state.items() if not k.startswith("head.")}
    head = {k[len("head."):]: v for k, v in state.items() if k.startswith("head.")}
    torch.save(body, out / "weights.pt")
    torch.save(head, out / "head.pt")
    config = model.config_dict()
    if isinstance(model, EncoderClassifier):
        config["encoder_config"] = model.encoder.config.to_dict()
    config.update(extra or {})
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True, default=str) + "\n")
    if tokenizer is not None:
        write_vocab_file(tokenizer, out / "vocab.txt")


def write_vocab_file(tokenizer, path: str | Path) -> None:
    """One token per line, in id order (the WordPiece ``vocab.txt`` layout)."""
    vocab = tokenizer.get_vocab()
    by_id = sorted(vocab.items(), key=lambda kv: kv[1])
    if [i for _, i in by_id] != list(range(len(by_id))):
        raise ValidationError("tokenizer ids are not contiguous; cannot write vocab.txt")
    Path(path).write_text("\n".join(tok for tok, _ in by_id) + "\n", encoding="utf-8")


def load_neural(run_dir: str | Path) -> nn.Module:
    from transformers import BertConfig, BertModel

    d = Path(run_dir)
    try:
        config = json.loads((d / "config.json").read_text())
        body = torch.load(d / "weights.pt", map_location="cpu")
        head = torch.load(d / "head.pt", map_location="cpu")
    except (OSError, ValueError, RuntimeError) as exc:
        raise IncompatibleArtifactError(f"cannot load neural checkpoint from {d}: {exc}") from exc
    kind = config["kind"]
    if kind in ENCODER_KINDS:
        enc_cfg = dict(config["encoder_config"])
        enc_cfg.pop("transformers_version", None)
        encoder = BertModel(BertConfig(**enc_cfg), add_pooling_layer=True)
        model = EncoderClassifier(encoder, ClassifierHead(encoder.config.hidden_size), kind=kind)
    elif kind == "bilstm":
        model = BiLstmClassifier(config["vocab_size"], config["embed_dim"], config["hidden_size"], config["pad_id"])
    else:
        raise IncompatibleArtifactError(f"{d} holds a {kind!r} model, not a neural one")
    state = dict(body)
    state.update({f"head.{k}": v for k, v in head.items()})
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise IncompatibleArtifactError(f"weights in {d} do not match config: {exc}") from exc
    return model
