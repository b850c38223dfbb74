"""Rating ingestion, per-pair median aggregation and seeded splitting."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from natureval.errors import ConfigError, SchemaError, ValidationError

CRITERIA = ("naturalness", "quality", "informativeness")
LABELS = (1, 2, 3, 4, 5, 6)
DEFAULT_RATIOS = (0.8, 0.1, 0.1)
DEFAULT_SEED = 42

REQUIRED_FIELDS = ("sys_ref", "orig_ref", "judge_id") + CRITERIA
OPTIONAL_FIELDS = ("system_tag", "domain_tag")

# Identity mapping; real corpora override it through the run config.
DEFAULT_SCHEMA = {name: name for name in REQUIRED_FIELDS}


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class AnnotationRecord:
    sys_ref: str
    orig_ref: str
    judge_id: str
    naturalness: int
    quality: int
    informativeness: int
    system_tag: str | None = None
    domain_tag: str | None = None

    def rating(self, criterion: str) -> int:
        return getattr(self, criterion)

    @property
    def key(self) -> tuple[str, str]:
        return normalize_ws(self.sys_ref), normalize_ws(self.orig_ref)


@dataclass(frozen=True)
class RatedPair:
    sys_ref: str
    orig_ref: str
    labels: Mapping[str, int]
    n_judges: int

    def __post_init__(self):
        if self.n_judges < 1:
            raise ValidationError(f"n_judges must be >= 1, got {self.n_judges}")
        for crit, lab in self.labels.items():
            if lab not in LABELS:
                raise ValidationError(f"{crit} label {lab!r} outside 1..6")

    def label(self, criterion: str) -> int:
        return self.labels[criterion]

    def to_json(self) -> dict:
        return {
            "sys_ref": self.sys_ref,
            "orig_ref": self.orig_ref,
            "labels": {c: int(self.labels[c]) for c in sorted(self.labels)},
            "n_judges": self.n_judges,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "RatedPair":
        return cls(
            sys_ref=obj["sys_ref"],
            orig_ref=obj["orig_ref"],
            labels={k: int(v) for k, v in obj["labels"].items()},
            n_judges=int(obj["n_judges"]),
        )


@dataclass
class DatasetSplit:
    train: list[RatedPair]
    dev: list[RatedPair]
    test: list[RatedPair]
    seed: int = DEFAULT_SEED
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    manifest: dict = field(default_factory=dict)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.dev), len(self.test)

    def part(self, name: str) -> list[RatedPair]:
        if name not in ("train", "dev", "test"):
            raise ConfigError(f"unknown split part {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class LabelDistribution:
    criterion: str
    counts: Mapping[int, int]
    total: int
    majority_label: int
    majority_fraction: float


def _parse_rating(raw: str, column: str, row: int) -> int:
    text = (raw or "").strip()
    try:
        value = int(text)
    except ValueError:
        try:
            as_float = float(text)
        except ValueError:
            raise ValidationError(f"row {row}: {column}={raw!r} is not an integer rating") from None
        if not as_float.is_integer():
            raise ValidationError(f"row {row}: {column}={raw!r} is not an integer rating")
        value = int(as_float)
    if value not in LABELS:
        raise ValidationError(f"row {row}: {column}={value} outside [1, 6]")
    return value


def sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def load_records(path: str | Path, schema_map: Mapping[str, str] | None = None) -> list[AnnotationRecord]:
    """Read one AnnotationRecord per data row, in file order.

    ``schema_map`` maps field names (``sys_ref``, ``orig_ref``, ``judge_id``,
    the three criteria, optionally ``system_tag``/``domain_tag``) to column
    headers. Rows are numbered from 0, excluding the header.
    """
    path = Path(path)
    schema = dict(DEFAULT_SCHEMA)
    if schema_map:
        schema.update(schema_map)
    with path.open("r", encoding="utf-8", newline="") as fh:
        header_line = fh.readline()
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=sniff_delimiter(header_line))
        columns = set(reader.fieldnames or ())
        for name in REQUIRED_FIELDS:
            if schema[name] not in columns:
                raise SchemaError(schema[name], path)
        optional = {n: schema[n] for n in OPTIONAL_FIELDS if schema.get(n) in columns}

        records = []
        for i, row in enumerate(reader):
            sys_ref = row[schema["sys_ref"]] or ""
            orig_ref = row[schema["orig_ref"]] or ""
            for name, text in (("sys_ref", sys_ref), ("orig_ref", orig_ref)):
                if not normalize_ws(text):
                    raise ValidationError(f"row {i}: empty {name}")
            ratings = {c: _parse_rating(row[schema[c]], schema[c], i) for c in CRITERIA}
            records.append(
                AnnotationRecord(
                    sys_ref=sys_ref,
                    orig_ref=orig_ref,
                    judge_id=str(row[schema["judge_id"]]),
                    system_tag=row.get(optional["system_tag"]) if "system_tag" in optional else None,
                    domain_tag=row.get(optional["domain_tag"]) if "domain_tag" in optional else None,
                    **ratings,
                )
            )
    return records


def lower_median(values: Iterable[int]) -> int:
    ordered = sorted(values)
    if not ordered:
        raise ValidationError("median of an empty group")
    return ordered[(len(ordered) - 1) // 2]


def aggregate(records: Sequence[AnnotationRecord]) -> list[RatedPair]:
    """Group records by normalized (sys_ref, orig_ref) and take per-criterion medians.

    With an even number of judges the lower median is used so labels stay
    integral. Groups come out in first-appearance order and keep the raw
    text of their first record.
    """
    if not records:
        raise ValidationError("no records to aggregate")
    groups: dict[tuple[str, str], list[AnnotationRecord]] = {}
    for rec in records:
        groups.setdefault(rec.key, []).append(rec)
    pairs = []
    for members in groups.values():
        first = members[0]
        labels = {c: lower_median(r.rating(c) for r in members) for c in CRITERIA}
        pairs.append(RatedPair(first.sys_ref, first.orig_ref, labels, len(members)))
    return pairs


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise ConfigError(f"ratios must be a (train, dev, test) triple, got {ratios!r}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"ratios must be non-negative, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)!r}")
    return tuple(float(r) for r in ratios)


def split_sizes(n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> tuple[int, int, int]:
    _, r_dev, r_test = _check_ratios(ratios)
    # The epsilon absorbs float products such as 0.1 * 30 -> 2.9999...
    n_dev = math.floor(r_dev * n + 1e-9)
    n_test = math.floor(r_test * n + 1e-9)
    return n - n_dev - n_test, n_dev, n_test


def split(pairs: Sequence[RatedPair], ratios: Sequence[float] = DEFAULT_RATIOS,
          seed: int = DEFAULT_SEED) -> DatasetSplit:
    """Shuffle with a seeded permutation and cut into train/dev/test.

    dev and test get ``floor(ratio * n)`` items each; train takes the rest.
    """
    ratios = _check_ratios(ratios)
    if not pairs:
        raise ValidationError("cannot split an empty pair list")
    n = len(pairs)
    n_train, n_dev, _ = split_sizes(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [pairs[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        dev=shuffled[n_train:n_train + n_dev],
        test=shuffled[n_train + n_dev:],
        seed=seed,
        ratios=ratios,
    )


def _majority(counts: Mapping[int, int]) -> int:
    # ties go to the larger label
    return max(counts, key=lambda lab: (counts[lab], lab))


def distribution(pairs: Sequence[RatedPair], criterion: str = "naturalness") -> LabelDistribution:
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    counts = {lab: 0 for lab in LABELS}
    for p in pairs:
        counts[p.label(criterion)] += 1
    total = sum(counts.values())
    if total == 0:
        raise ValidationError("distribution of an empty pair list")
    label = _majority(counts)
    return LabelDistribution(criterion, counts, total, label, counts[label] / total)


def format_distribution(dist: LabelDistribution) -> str:
    width = max(len(f"{c:,}") for c in dist.counts.values()) + 1
    head = f"{dist.criterion:<12}" + "".join(f"{lab:>{width}}" for lab in LABELS)
    row = f"{'data size':<12}" + "".join(f"{dist.counts[lab]:>{width},}" for lab in LABELS)
    rule = "-" * len(head)
    return "\n".join([
        head, rule, row, rule,
        f"{'total':<12}{dist.total:,}",
        f"{'majority':<12}{dist.majority_label} ({dist.majority_fraction:.3f})",
    ])


# -- persistence -------------------------------------------------------------

SPLIT_PARTS = ("train", "dev", "test")
MANIFEST = "manifest.json"
ALL_PAIRS = "pairs.jsonl"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_pairs(path: str | Path, pairs: Iterable[RatedPair]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_pairs(path: str | Path) -> list[RatedPair]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [RatedPair.from_json(json.loads(line)) for line in fh if line.strip()]


def save_split(out_dir: str | Path, data: DatasetSplit, all_pairs: Sequence[RatedPair] | None = None,
               source: str | Path | None = None) -> dict:
    """Write ``train/dev/test.jsonl`` plus a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in SPLIT_PARTS:
        target = out / f"{name}.jsonl"
        write_pairs(target, data.part(name))
        files[name] = {"file": target.name, "count": len(data.part(name)), "sha256": file_sha256(target)}
    if all_pairs is not None:
        write_pairs(out / ALL_PAIRS, all_pairs)
    manifest = {
        "seed": data.seed,
        "ratios": list(data.ratios),
        "counts": {name: files[name]["count"] for name in SPLIT_PARTS},
        "files": files,
        "input": None if source is None else {"path": str(source), "sha256": file_sha256(source)},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    data.manifest = manifest
    return manifest


def manifest_checksum(split_dir: str | Path) -> str:
    return file_sha256(Path(split_dir) / MANIFEST)


def load_split(split_dir: str | Path) -> DatasetSplit:
    d = Path(split_dir)
    manifest_path = d / MANIFEST
    if not manifest_path.exists():
        raise ConfigError(f"no split manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    parts = {name: read_pairs(d / manifest["files"][name]["file"]) for name in SPLIT_PARTS}
    return DatasetSplit(seed=manifest["seed"], ratios=tuple(manifest["ratios"]), manifest=manifest, **parts)


def load_all_pairs(split_dir: str | Path) -> list[RatedPair]:
    """Every aggregated pair of a prepared directory (falls back to the union of splits)."""
    d = Path(split_dir)
    if (d / ALL_PAIRS).exists():
        return read_pairs(d / ALL_PAIRS)
    s = load_split(d)
    return s.train + s.dev + s.test
