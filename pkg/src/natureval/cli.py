"""Command line entry point: ``natureval {prepare,train,evaluate,correlate,curves}``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration or validation
error, 3 incompatible artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from natureval import dataset as ds
from natureval.errors import ConfigError, IncompatibleArtifactError, NaturevalError, ValidationError
from natureval.features import DEFAULT_MAX_LEN, BowVocab, bow_matrix, encode_batch, load_tokenizer
from natureval.metrics import EvalReport, evaluate, format_report, spearman
from natureval.models import (
    ENCODER_KINDS,
    MODEL_KINDS,
    NEURAL_KINDS,
    MajorityModel,
    build_neural,
    load_neural,
    predict_batch,
    run_inference,
    save_neural,
)

log = logging.getLogger("natureval")

CHECKPOINT_ENV = "NATUREVAL_CHECKPOINT_DIR"
DEFAULT_CHECKPOINT_NAMES = {"encoder": "bert-base-uncased", "bilstm": "bert-base-uncased",
                            "bleurt-tiny": "bleurt-tiny"}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ARTIFACT = 0, 1, 2, 3


@dataclass
class RunConfig:
    data: str | None = None
    schema_map: dict = field(default_factory=dict)
    ratios: tuple = ds.DEFAULT_RATIOS
    seed: int = ds.DEFAULT_SEED
    model: str = "encoder"
    checkpoint: str | None = None
    target: str = "naturalness"
    transfer_source: str | None = None
    max_len: int = DEFAULT_MAX_LEN
    bilstm_dim: int = 768
    svm: dict = field(default_factory=lambda: {"C": 1.0, "gamma": "auto"})
    hyperparams: dict = field(default_factory=dict)
    hyperparams_stage1: dict | None = None
    out: str | None = None

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.transfer_source in ("none", ""):
            self.transfer_source = None
        if self.transfer_source is not None:
            if self.transfer_source not in ("quality", "informativeness"):
                raise ConfigError(f"transfer source must be quality or informativeness, got {self.transfer_source!r}")
            if self.model not in ENCODER_KINDS:
                raise ConfigError(f"transfer learning needs an encoder-family model, not {self.model!r}")
        if self.target not in ds.CRITERIA:
            raise ConfigError(f"unknown target criterion {self.target!r}")
        self.ratios = tuple(self.ratios)
        return self

    def hp(self, stage: int = 2):
        from natureval.training import HyperParams

        raw = self.hyperparams if stage == 2 or self.hyperparams_stage1 is None else self.hyperparams_stage1
        raw = {"seed": self.seed, **(raw or {})}
        return HyperParams.from_dict(raw)

    def resolved_checkpoint(self) -> Path | None:
        if self.checkpoint:
            return Path(self.checkpoint)
        cache = os.environ.get(CHECKPOINT_ENV)
        if cache and self.model in DEFAULT_CHECKPOINT_NAMES:
            return Path(cache) / DEFAULT_CHECKPOINT_NAMES[self.model]
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        return d


def load_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        values = yaml.safe_load(path.read_text()) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    flag_map = {"seed": "seed", "model": "model", "transfer_source": "transfer_source", "out": "out",
                "data": "data", "checkpoint": "checkpoint"}
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            values[key] = val
    return RunConfig(**values).validate()


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"missing {what}")
    return value


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


# -- prepare ------------------------------------------------------------------

def cmd_prepare(cfg: RunConfig) -> dict:
    raw = Path(_require(cfg.data, "--data (raw ratings file)"))
    out = Path(_require(cfg.out, "--out (prepared data directory)"))
    if not raw.exists():
        raise ConfigError(f"data file {raw} not found")
    records = ds.load_records(raw, cfg.schema_map)
    pairs = ds.aggregate(records)
    data = ds.split(pairs, cfg.ratios, cfg.seed)
    manifest = ds.save_split(out, data, all_pairs=pairs, source=raw)
    print(f"{len(records)} records -> {len(pairs)} pairs -> train/dev/test {data.sizes}")
    print(ds.format_distribution(ds.distribution(pairs, "naturalness")))
    return manifest


# -- train ------------------------------------------------------------------------

def _labels(pairs, target):
    return np.asarray([p.label(target) for p in pairs], dtype=np.int64)


def cmd_train(cfg: RunConfig) -> Path:
    from natureval import training

    split_dir = Path(_require(cfg.data, "--data (prepared data directory)"))
    run_dir = Path(_require(cfg.out, "--out (run directory)"))
    split = ds.load_split(split_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "resolved_config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    provenance = {"split_dir": str(split_dir), "split_manifest_sha256": ds.manifest_checksum(split_dir),
                  "model": cfg.model}

    if cfg.model == "majority":
        model = training.fit_majority(split, cfg.target)
        dev_acc = float(np.mean(_labels(split.dev, cfg.target) == model.label)) if split.dev else None
        _write_json(run_dir / "config.json", {"kind": "majority", "label": model.label, "target": cfg.target})
        _write_json(run_dir / "checkpoint.json", {"dev_accuracy": dev_acc, "provenance": provenance})
        print(f"majority label {model.label}; dev accuracy {dev_acc}")
        return run_dir

    if cfg.model == "svm":
        svm_cfg = {"C": 1.0, "gamma": "auto", **cfg.svm}
        model, vocab = training.fit_svm(split, cfg.target, C=float(svm_cfg["C"]), gamma=svm_cfg["gamma"],
                                        seed=cfg.seed)
        import joblib

        joblib.dump(model, run_dir / "svm.joblib")
        vocab.save(run_dir / "bow_vocab.json")
        dev_acc = None
        if split.dev:
            dev_acc = float(np.mean(model.predict(bow_matrix(split.dev, vocab)) == _labels(split.dev, cfg.target)))
        _write_json(run_dir / "config.json", {"kind": "svm", "target": cfg.target, **svm_cfg,
                                               "vocab_size": vocab.size})
        _write_json(run_dir / "checkpoint.json", {"dev_accuracy": dev_acc, "provenance": provenance})
        print(f"svm trained on {len(split.train)} pairs, {vocab.size} BoW tokens; dev accuracy {dev_acc}")
        return run_dir

    ckpt = cfg.resolved_checkpoint()
    if ckpt is None:
        raise ConfigError(f"model {cfg.model!r} needs --checkpoint or ${CHECKPOINT_ENV}")
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} not found")
    tokenizer = load_tokenizer(ckpt)
    model = build_neural(cfg.model, checkpoint=ckpt if cfg.model in ENCODER_KINDS else None,
                         vocab_size=len(tokenizer), pad_id=tokenizer.pad_token_id, seed=cfg.seed,
                         bilstm_dim=cfg.bilstm_dim)
    encoded = {name: encode_batch(split.part(name), tokenizer, cfg.max_len) for name in ("train", "dev")}
    provenance["encoder_checkpoint"] = str(ckpt)
    hp = cfg.hp(stage=2)

    if cfg.transfer_source:
        best, curve = training.transfer_train(model, split, cfg.transfer_source, cfg.hp(stage=1), hp,
                                              max_len=cfg.max_len, encoded=encoded, provenance=provenance)
        stage1_dir = run_dir / "stage1"
        model.load_state_dict(best.parent.state)
        save_neural(model, stage1_dir, tokenizer, extra={"target": cfg.transfer_source, "max_len": cfg.max_len})
        training.TrainingCurve([training.EpochRecord(**r) for r in best.provenance["lineage"]["stage1_curve"]]
                               ).save(stage1_dir / "curve.jsonl")
        _write_json(stage1_dir / "checkpoint.json", best.parent.meta())
        _write_json(run_dir / "lineage.json", {"source": cfg.transfer_source, "stage1_run": str(stage1_dir),
                                               "stage1_epoch": best.parent.epoch,
                                               "stage1_dev_accuracy": best.parent.dev_accuracy})
    else:
        best, curve = training.train_classifier(model, split, cfg.target, hp, max_len=cfg.max_len,
                                                encoded=encoded, provenance=provenance)
    model.load_state_dict(best.state)
    save_neural(model, run_dir, tokenizer, extra={"target": cfg.target, "max_len": cfg.max_len})
    curve.save(run_dir / "curve.jsonl")
    _write_json(run_dir / "checkpoint.json", best.meta())
    print(f"best dev accuracy {best.dev_accuracy:.4f} at epoch {best.epoch}")
    return run_dir


# -- evaluate -------------------------------------------------------------------

def predict_run(run_dir: Path, pairs) -> np.ndarray:
    """Predicted labels of a trained run for ``pairs``."""
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise IncompatibleArtifactError(f"{run_dir} has no config.json")
    config = json.loads(cfg_path.read_text())
    kind = config.get("kind")
    if kind == "majority":
        return np.asarray(MajorityModel(int(config["label"])).predict(len(pairs)))
    if kind == "svm":
        import joblib

        vocab = BowVocab.load(run_dir / "bow_vocab.json")
        model = joblib.load(run_dir / "svm.joblib")
        if model.n_features is not None and model.n_features != 2 * vocab.size:
            raise IncompatibleArtifactError(f"svm width {model.n_features} != 2 x vocab size {vocab.size}")
        return model.predict(bow_matrix(pairs, vocab))
    if kind in NEURAL_KINDS:
        model = load_neural(run_dir)
        tokenizer = load_tokenizer(run_dir)
        if len(tokenizer) != model.vocab_size:
            raise IncompatibleArtifactError(f"tokenizer has {len(tokenizer)} entries, model expects "
                                            f"{model.vocab_size}")
        encoded = encode_batch(pairs, tokenizer, int(config.get("max_len", DEFAULT_MAX_LEN)))
        return predict_batch(run_inference(model, encoded))
    raise IncompatibleArtifactError(f"unknown model kind {kind!r} in {cfg_path}")


def cmd_evaluate(checkpoint: str | Path, split_dir: str | Path, out: str | Path | None = None,
                 part: str = "test") -> EvalReport:
    run_dir = Path(checkpoint)
    if not run_dir.is_dir():
        raise IncompatibleArtifactError(f"checkpoint directory {run_dir} not found")
    split = ds.load_split(split_dir)
    pairs = split.part(part)
    if not pairs:
        raise ValidationError(f"{part} split is empty")
    config = json.loads((run_dir / "config.json").read_text()) if (run_dir / "config.json").exists() else {}
    target = config.get("target", "naturalness")
    report = evaluate(predict_run(run_dir, pairs), _labels(pairs, target))
    out_dir = Path(out) if out else run_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / "report.json")
    text = format_report(report, name=config.get("kind", "model"))
    (out_dir / "report.txt").write_text(text + "\n")
    print(text)
    return report


# -- correlate --------------------------------------------------------------------

def cmd_correlate(split_dir: str | Path, criterion_a: str, criterion_b: str, out: str | Path | None = None) -> float:
    for c in (criterion_a, criterion_b):
        if c not in ds.CRITERIA:
            raise ConfigError(f"unknown criterion {c!r}; expected one of {ds.CRITERIA}")
    pairs = ds.load_all_pairs(split_dir)
    rho = spearman(_labels(pairs, criterion_a), _labels(pairs, criterion_b))
    result = {"criterion_a": criterion_a, "criterion_b": criterion_b, "rho": rho, "n": len(pairs)}
    print(f"spearman({criterion_a}, {criterion_b}) = {rho:.4f}  (n={len(pairs)})")
    if out:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, result)
    return rho


# -- curves -----------------------------------------------------------------------

def cmd_curves(run_dirs, out: str | Path, labels=None) -> dict[str, list[tuple[int, float]]]:
    """Merge dev-accuracy series into ``<out>.csv`` and ``<out>.png``.

    Series may have different lengths; shorter ones leave empty cells.
    """
    from natureval.training import TrainingCurve

    series: dict[str, list[tuple[int, float]]] = {}
    names = list(labels) if labels else [Path(d).name for d in run_dirs]
    if len(names) != len(run_dirs):
        raise ConfigError("need exactly one label per run directory")
    for name, d in zip(names, run_dirs):
        path = Path(d) / "curve.jsonl"
        if not path.exists():
            raise ConfigError(f"run {d} has no curve.jsonl")
        series[name] = [(r.epoch, r.dev_accuracy) for r in TrainingCurve.load(path).records]

    out = Path(out)
    if out.suffix in (".csv", ".png"):
        out = out.with_suffix("")
    out.parent.mkdir(parents=True, exist_ok=True)
    epochs = sorted({e for s in series.values() for e, _ in s})
    lookup = {name: dict(s) for name, s in series.items()}
    rows = ["epoch," + ",".join(series)]
    for e in epochs:
        rows.append(f"{e}," + ",".join("" if e not in lookup[n] else repr(lookup[n][e]) for n in series))
    out.with_suffix(".csv").write_text("\n".join(rows) + "\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3.2))
    for name, s in series.items():
        ax.plot([e for e, _ in s], [a for _, a in s], marker="o", label=name)
    ax.set_xlabel("epochs")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.grid(True)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(out.with_suffix(".png"), dpi=120)
    plt.close(fig)
    print(f"wrote {out.with_suffix('.csv')} and {out.with_suffix('.png')}")
    return series


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="natureval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        p.add_argument("--config", help="YAML run config; flags override its values")
        for flag in flags:
            p.add_argument(flag)

    p = sub.add_parser("prepare", help="load, aggregate and split raw ratings")
    common(p, "--data", "--out")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train one model on a prepared split")
    common(p, "--data", "--out", "--checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--transfer-source", dest="transfer_source", choices=("none", "quality", "informativeness"))

    p = sub.add_parser("evaluate", help="score a trained run on the test split")
    common(p, "--data", "--out")
    p.add_argument("--checkpoint", required=True, help="trained run directory")
    p.add_argument("--part", default="test", choices=("train", "dev", "test"))

    p = sub.add_parser("correlate", help="Spearman correlation between two criteria")
    common(p, "--data", "--out")
    p.add_argument("criterion_a")
    p.add_argument("criterion_b")

    p = sub.add_parser("curves", help="merge training curves into a CSV and a chart")
    p.add_argument("runs", nargs="+", help="run directories containing curve.jsonl")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--labels", nargs="+")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "prepare":
        cmd_prepare(load_config(args))
    elif args.command == "train":
        cmd_train(load_config(args))
    elif args.command == "evaluate":
        cfg = load_config(args)
        cmd_evaluate(args.checkpoint, _require(cfg.data, "--data (prepared data directory)"), args.out, args.part)
    elif args.command == "correlate":
        cfg = load_config(args)
        cmd_correlate(_require(cfg.data, "--data (prepared data directory)"), args.criterion_a, args.criterion_b,
                      args.out)
    elif args.command == "curves":
        cmd_curves(args.runs, args.out, args.labels)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except IncompatibleArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NaturevalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code 1
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
