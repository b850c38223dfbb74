"""Fine-tuning loops, two-stage transfer and best-dev checkpoint selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from natureval.dataset import CRITERIA, DatasetSplit, RatedPair
from natureval.errors import ConfigError, TrainingError, ValidationError
from natureval.features import DEFAULT_MAX_LEN, bow_matrix, encode_batch, vocab_from_pairs
from natureval.models import (
    EncoderClassifier,
    MajorityModel,
    labels_to_index,
    predict_batch,
    run_inference,
    svm_train,
)

log = logging.getLogger(__name__)

TRANSFER_SOURCES = ("quality", "informativeness")


@dataclass
class HyperParams:
    """Optimisation settings. Defaults follow the reference setup.

    A learning rate of 5e-3 is very high for encoder fine-tuning; 2e-5 to 5e-5
    is the usual stable range if runs diverge.
    """

    batch_size: int = 256
    epochs: int = 25
    learning_rate: float = 5e-3
    optimizer: str = "adam"
    seed: int = 42
    warmup_steps: int = 0
    weight_decay: float = 0.0
    grad_clip: float | None = None
    device: str = "auto"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer.lower() != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r} (only adam)")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "HyperParams":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown hyper-parameters: {sorted(unknown)}")
        return cls(**d)

    def resolved_device(self) -> torch.device:
        if self.device == "auto":
            return torch.device("cuda" if torch.cuda.is_available() else "cpu")
        return torch.device(self.device)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    dev_accuracy: float
    train_loss: float


@dataclass
class TrainingCurve:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValidationError("epoch indices must increase strictly")
        self.records.append(rec)

    @property
    def dev_accuracies(self) -> list[float]:
        return [r.dev_accuracy for r in self.records]

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainingCurve":
        curve = cls()
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    curve.append(EpochRecord(**json.loads(line)))
        return curve


@dataclass
class Checkpoint:
    state: dict[str, torch.Tensor]
    epoch: int
    dev_accuracy: float
    provenance: dict = field(default_factory=dict)
    parent: "Checkpoint | None" = None

    def meta(self) -> dict:
        return {"epoch": self.epoch, "dev_accuracy": self.dev_accuracy, "provenance": self.provenance}


def select_best(curve: TrainingCurve, checkpoints: Mapping[int, Checkpoint] | None = None):
    """Highest dev accuracy, earliest epoch on ties.

    Returns the matching entry of ``checkpoints`` (keyed by epoch), or the
    winning :class:`EpochRecord` when no snapshots are given.
    """
    if not curve.records:
        raise ValidationError("empty training curve")
    best = curve.records[0]
    for rec in curve.records[1:]:
        if rec.dev_accuracy > best.dev_accuracy:
            best = rec
    if checkpoints is None:
        return best
    return checkpoints[best.epoch]


def _snapshot(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().to("cpu", copy=True) for k, v in model.state_dict().items()}


def _target_labels(pairs: Sequence[RatedPair], target: str) -> np.ndarray:
    if target not in CRITERIA:
        raise ConfigError(f"unknown target criterion {target!r}")
    return np.asarray([p.label(target) for p in pairs], dtype=np.int64)


def accuracy_of(model: nn.Module, encoded: Mapping[str, np.ndarray], labels: np.ndarray,
                batch_size: int = 256) -> float:
    if len(labels) == 0:
        raise ValidationError("accuracy over an empty set")
    preds = predict_batch(run_inference(model, encoded, batch_size))
    return float(np.mean(preds == labels))


def train_classifier(model: nn.Module, split: DatasetSplit, target: str, hp: HyperParams, tokenizer=None, *,
                     max_len: int = DEFAULT_MAX_LEN, encoded: Mapping[str, Mapping[str, np.ndarray]] | None = None,
                     on_step: Callable[[int, float], None] | None = None,
                     provenance: dict | None = None) -> tuple[Checkpoint, TrainingCurve]:
    """Mini-batch Adam on cross-entropy against ``target``; all parameters train.

    Dev accuracy is measured after every epoch and the returned checkpoint is
    the best-dev epoch. ``encoded`` may carry pre-encoded ``train``/``dev``
    arrays; otherwise pairs are encoded with ``tokenizer``. ``on_step`` sees
    ``(global_step, loss)`` for each batch, starting at step 0.
    """
    if not split.train:
        raise ValidationError("empty train split")
    if not split.dev:
        raise ValidationError("empty dev split; best-dev selection needs one")
    if encoded is None:
        if tokenizer is None:
            raise ConfigError("need a tokenizer or pre-encoded inputs")
        encoded = {name: encode_batch(split.part(name), tokenizer, max_len) for name in ("train", "dev")}
    y_train = _target_labels(split.train, target)
    y_dev = _target_labels(split.dev, target)

    device = hp.resolved_device()
    model.to(device)
    for p in model.parameters():
        p.requires_grad_(True)
    torch.manual_seed(hp.seed)
    optim = torch.optim.Adam(model.parameters(), lr=hp.learning_rate, weight_decay=hp.weight_decay)
    sched = None
    if hp.warmup_steps > 0:
        sched = torch.optim.lr_scheduler.LambdaLR(optim, lambda s: min(1.0, (s + 1) / hp.warmup_steps))

    ids = torch.as_tensor(encoded["train"]["input_ids"], dtype=torch.long)
    seg = torch.as_tensor(encoded["train"]["token_type_ids"], dtype=torch.long)
    mask = torch.as_tensor(encoded["train"]["attention_mask"], dtype=torch.long)
    y = torch.as_tensor(labels_to_index(y_train))
    n = len(y)

    curve = TrainingCurve()
    snapshots: dict[int, Checkpoint] = {}
    best_acc = -math.inf
    step = 0
    base_prov = dict(provenance or {})
    base_prov.update({"target": target, "hyperparams": asdict(hp), "max_len": max_len})

    for epoch in range(1, hp.epochs + 1):
        model.train()
        order = torch.randperm(n, generator=torch.Generator().manual_seed(hp.seed * 1_000_003 + epoch))
        losses, sizes = [], []
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            logits = model(ids[idx].to(device), seg[idx].to(device), mask[idx].to(device))
            loss = F.cross_entropy(logits, y[idx].to(device))
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")
            if on_step is not None:
                on_step(step, float(loss.item()))
            optim.zero_grad()
            loss.backward()
            if hp.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), hp.grad_clip)
            optim.step()
            if sched is not None:
                sched.step()
            losses.append(float(loss.item()))
            sizes.append(len(idx))
            step += 1
        train_loss = float(np.average(losses, weights=sizes))
        dev_acc = accuracy_of(model, encoded["dev"], y_dev, hp.batch_size)
        curve.append(EpochRecord(epoch, dev_acc, train_loss))
        log.info("epoch %d  train_loss %.4f  dev_acc %.4f", epoch, train_loss, dev_acc)
        if dev_acc > best_acc:
            best_acc = dev_acc
            snapshots = {epoch: Checkpoint(_snapshot(model), epoch, dev_acc, dict(base_prov))}

    return select_best(curve, snapshots), curve


def transfer_train(model: EncoderClassifier, split: DatasetSplit, source: str, hp_stage1: HyperParams,
                   hp_stage2: HyperParams, tokenizer=None, *, max_len: int = DEFAULT_MAX_LEN,
                   encoded=None, on_step: Callable[[int, float], None] | None = None,
                   on_stage_start: Callable[[int, nn.Module], None] | None = None,
                   provenance: dict | None = None) -> tuple[Checkpoint, TrainingCurve]:
    """Fine-tune on ``source`` labels, then continue on naturalness.

    Stage 2 starts from the stage-1 checkpoint's encoder weights with a freshly
    initialised head. The stage-2 checkpoint links to stage 1 through
    ``parent`` and ``provenance["lineage"]``.
    """
    if source not in TRANSFER_SOURCES:
        raise ConfigError(f"transfer source must be one of {TRANSFER_SOURCES}, got {source!r}")
    if not isinstance(model, EncoderClassifier):
        raise ConfigError("transfer learning needs an encoder-family model")
    if encoded is None:
        if tokenizer is None:
            raise ConfigError("need a tokenizer or pre-encoded inputs")
        encoded = {name: encode_batch(split.part(name), tokenizer, max_len) for name in ("train", "dev")}

    if on_stage_start is not None:
        on_stage_start(1, model)
    stage1, curve1 = train_classifier(model, split, source, hp_stage1, max_len=max_len, encoded=encoded,
                                      on_step=on_step, provenance={**(provenance or {}), "stage": 1})
    model.load_state_dict(stage1.state)
    model.head.reset(torch.Generator().manual_seed(hp_stage2.seed))
    if on_stage_start is not None:
        on_stage_start(2, model)
    lineage = {
        "source": source,
        "stage1_epoch": stage1.epoch,
        "stage1_dev_accuracy": stage1.dev_accuracy,
        "stage1_curve": [asdict(r) for r in curve1.records],
    }
    stage2, curve2 = train_classifier(model, split, "naturalness", hp_stage2, max_len=max_len, encoded=encoded,
                                      on_step=on_step,
                                      provenance={**(provenance or {}), "stage": 2, "lineage": lineage})
    stage2.parent = stage1
    return stage2, curve2


# -- non-neural baselines -------------------------------------------------------

def fit_majority(split: DatasetSplit, target: str = "naturalness") -> MajorityModel:
    return MajorityModel.fit(_target_labels(split.train, target))


def fit_svm(split: DatasetSplit, target: str = "naturalness", C: float = 1.0, gamma: str = "auto", seed: int = 0):
    """BoW vocabulary from the training split, then the linear SVM; returns ``(svm, vocab)``."""
    if not split.train:
        raise ValidationError("empty train split")
    vocab = vocab_from_pairs(split.train)
    X = bow_matrix(split.train, vocab)
    return svm_train(X, _target_labels(split.train, target), C=C, gamma=gamma, seed=seed), vocab
