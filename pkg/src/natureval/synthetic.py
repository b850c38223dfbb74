"""Synthetic rating corpora for smoke runs when the real corpus is unavailable.

The naturalness of a candidate drops with the number of "disfluent" tokens it
contains, so the toy task is learnable; quality tracks naturalness loosely
and informativeness tracks how many reference slots the candidate repeats.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from natureval.dataset import AnnotationRecord

VENUES = ["zuni cafe", "la mar", "nopa", "the slanted door", "hotel nikko", "the fairmont", "bar tartine"]
SLOTS = ["expensive", "cheap", "moderately priced", "near the marina", "in soma", "kid friendly",
         "open late", "with free wifi", "good for dinner", "pet friendly"]
FLUENT = ["is", "a", "an", "restaurant", "hotel", "that", "and", "it", "offers", "place"]
DISFLUENT = ["is is", "the the", "a an", "and and", "restaurant hotel", "it it"]
SYSTEMS = ["RNNLG", "TGen", "LOLS"]
DOMAINS = ["SF Hotel", "SF Restaurant", "BAGEL"]

TOKENS = sorted({t for phrase in VENUES + SLOTS + FLUENT + DISFLUENT for t in phrase.split()}
                | {",", ".", "?", "how", "about", "one", "there", "which"})


def _sentence(rng, venue, slots, n_bad):
    parts = [venue, "is", rng.choice(["a", "an"]), rng.choice(["restaurant", "hotel", "place"])]
    for s in slots:
        parts += ["that is", s] if rng.random() < 0.5 else [",", s]
    for _ in range(n_bad):
        parts.insert(int(rng.integers(1, len(parts) + 1)), str(rng.choice(DISFLUENT)))
    return " ".join(parts) + " ."


def synthetic_records(n_pairs: int = 200, judges: int = 3, seed: int = 0) -> list[AnnotationRecord]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_pairs):
        venue = str(rng.choice(VENUES))
        k = int(rng.integers(1, 4))
        slots = [str(s) for s in rng.choice(SLOTS, size=k, replace=False)]
        ref = "how about " + venue + " , " + " and ".join(slots) + " ?"
        n_bad = int(rng.integers(0, 6))
        kept = slots[: int(rng.integers(1, k + 1))]
        # suffix keeps every candidate distinct so groups never merge by accident
        sys_ref = _sentence(rng, venue, kept, n_bad) + f" {i}"
        base_nat = 6 - n_bad
        coverage = len(kept) / k
        for j in range(judges):
            nat = int(np.clip(base_nat + rng.integers(-1, 2), 1, 6))
            qual = int(np.clip(base_nat + rng.integers(-2, 2), 1, 6))
            info = int(np.clip(round(1 + 5 * coverage) + rng.integers(-1, 2), 1, 6))
            out.append(AnnotationRecord(sys_ref, ref, str(j + 1), nat, qual, info,
                                        system_tag=SYSTEMS[i % 3], domain_tag=DOMAINS[(i // 3) % 3]))
    return out


def write_records_csv(records, path: str | Path, delimiter: str = ",", header: dict | None = None) -> None:
    """Write records with column names from ``header`` (field -> column; identity by default)."""
    names = ["sys_ref", "orig_ref", "judge_id", "naturalness", "quality", "informativeness",
             "system_tag", "domain_tag"]
    cols = [(header or {}).get(n, n) for n in names]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(cols)
        for r in records:
            w.writerow([getattr(r, n) for n in names])


def write_vocab(path: str | Path, extra: list[str] | None = None) -> list[str]:
    """A WordPiece vocab.txt covering the synthetic corpus."""
    words = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + TOKENS + [str(i) for i in range(10)] + [f"##{i}" for i in range(10)]
    words += [w for w in (extra or []) if w not in words]
    Path(path).write_text("\n".join(words) + "\n", encoding="utf-8")
    return words
