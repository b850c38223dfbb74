"""Model inputs: bag-of-words count blocks and [CLS]/[SEP] pair encodings."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from natureval.dataset import RatedPair
from natureval.errors import ConfigError, ValidationError

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

DEFAULT_MAX_LEN = 128
MIN_MAX_LEN = 5


def bow_tokenize(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class BowVocab:
    index: Mapping[str, int]

    @property
    def size(self) -> int:
        return len(self.index)

    def __len__(self):
        return len(self.index)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(dict(self.index), ensure_ascii=False, indent=0) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BowVocab":
        index = json.loads(Path(path).read_text(encoding="utf-8"))
        if sorted(index.values()) != list(range(len(index))):
            raise ValidationError(f"{path}: vocabulary indices are not a bijection onto [0, size)")
        return cls(index)


def build_bow_vocab(texts: Sequence[str]) -> BowVocab:
    """Vocabulary in first-appearance order. Build it from training texts only."""
    index: dict[str, int] = {}
    for text in texts:
        for tok in bow_tokenize(text):
            if tok not in index:
                index[tok] = len(index)
    if not index:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    return BowVocab(index)


def vocab_from_pairs(pairs: Sequence[RatedPair]) -> BowVocab:
    texts = []
    for p in pairs:
        texts.append(p.sys_ref)
        texts.append(p.orig_ref)
    return build_bow_vocab(texts)


def _count_block(text: str, vocab: BowVocab, out: np.ndarray, offset: int) -> None:
    for tok in bow_tokenize(text):
        idx = vocab.index.get(tok)
        if idx is not None:
            out[offset + idx] += 1


def bow_features(pair: RatedPair, vocab: BowVocab) -> np.ndarray:
    """Counts of length ``2 * vocab.size``: sys_ref block, then orig_ref block.

    Out-of-vocabulary tokens are dropped.
    """
    return bow_text_features(pair.sys_ref, pair.orig_ref, vocab)


def bow_text_features(sys_ref: str, orig_ref: str, vocab: BowVocab) -> np.ndarray:
    vec = np.zeros(2 * vocab.size, dtype=np.int64)
    _count_block(sys_ref, vocab, vec, 0)
    _count_block(orig_ref, vocab, vec, vocab.size)
    return vec


def bow_matrix(pairs: Sequence[RatedPair], vocab: BowVocab) -> sp.csr_matrix:
    """Sparse stack of :func:`bow_features` rows, for the SVM."""
    rows, cols, vals = [], [], []
    for i, p in enumerate(pairs):
        for offset, text in ((0, p.sys_ref), (vocab.size, p.orig_ref)):
            counts: dict[int, int] = {}
            for tok in bow_tokenize(text):
                idx = vocab.index.get(tok)
                if idx is not None:
                    counts[offset + idx] = counts.get(offset + idx, 0) + 1
            for col, c in counts.items():
                rows.append(i)
                cols.append(col)
                vals.append(c)
    return sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)), shape=(len(pairs), 2 * vocab.size))


# -- pair encoding -------------------------------------------------------------

@dataclass(frozen=True)
class EncodedPair:
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    max_len: int

    @property
    def length(self) -> int:
        return sum(self.attention_mask)


def truncate_longest_first(a: list, b: list, budget: int) -> tuple[list, list]:
    """Drop tokens from the end of whichever list is longer until ``len(a)+len(b) <= budget``.

    Equal lengths trim ``b`` first, so the candidate keeps the extra token.
    """
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def encode_ids(sys_ids: Sequence[int], ref_ids: Sequence[int], *, cls_id: int, sep_id: int,
               pad_id: int, max_len: int = DEFAULT_MAX_LEN) -> EncodedPair:
    if max_len < MIN_MAX_LEN:
        raise ConfigError(f"max_len={max_len} cannot hold [CLS], two [SEP]s and a token per sentence")
    if not sys_ids and not ref_ids:
        raise ValidationError("both sentences are empty after tokenization")
    s, r = truncate_longest_first(sys_ids, ref_ids, max_len - 3)
    ids = [cls_id, *s, sep_id, *r, sep_id]
    segments = [0] * (len(s) + 2) + [1] * (len(r) + 1)
    n_pad = max_len - len(ids)
    return EncodedPair(
        token_ids=tuple(ids + [pad_id] * n_pad),
        segment_ids=tuple(segments + [0] * n_pad),
        attention_mask=tuple([1] * len(ids) + [0] * n_pad),
        max_len=max_len,
    )


def encode_pair(sys_ref: str, orig_ref: str, tokenizer, max_len: int = DEFAULT_MAX_LEN) -> EncodedPair:
    """Lay out ``[CLS] sys [SEP] ref [SEP] pad...`` with the tokenizer's subword ids.

    ``tokenizer`` is any object with ``tokenize``, ``convert_tokens_to_ids`` and
    ``cls_token_id``/``sep_token_id``/``pad_token_id`` (a BERT tokenizer loaded
    from the encoder checkpoint qualifies).
    """
    if max_len < MIN_MAX_LEN:
        raise ConfigError(f"max_len={max_len} cannot hold [CLS], two [SEP]s and a token per sentence")
    sys_ids = tokenizer.convert_tokens_to_ids(tokenizer.tokenize(sys_ref))
    ref_ids = tokenizer.convert_tokens_to_ids(tokenizer.tokenize(orig_ref))
    return encode_ids(sys_ids, ref_ids, cls_id=tokenizer.cls_token_id, sep_id=tokenizer.sep_token_id,
                      pad_id=tokenizer.pad_token_id, max_len=max_len)


def encode_batch(pairs: Sequence[RatedPair], tokenizer, max_len: int = DEFAULT_MAX_LEN) -> dict[str, np.ndarray]:
    """Encode pairs into int64 arrays ``input_ids``, ``token_type_ids``, ``attention_mask``."""
    encoded = [encode_pair(p.sys_ref, p.orig_ref, tokenizer, max_len) for p in pairs]
    return stack_encoded(encoded)


def stack_encoded(encoded: Sequence[EncodedPair]) -> dict[str, np.ndarray]:
    return {
        "input_ids": np.asarray([e.token_ids for e in encoded], dtype=np.int64),
        "token_type_ids": np.asarray([e.segment_ids for e in encoded], dtype=np.int64),
        "attention_mask": np.asarray([e.attention_mask for e in encoded], dtype=np.int64),
    }


def load_tokenizer(path: str | Path):
    """BERT WordPiece tokenizer from a checkpoint directory or a bare ``vocab.txt``."""
    from transformers import BertTokenizer

    p = Path(path)
    vocab = p / "vocab.txt" if p.is_dir() else p
    if not vocab.exists():
        raise ConfigError(f"no vocab.txt at {p}")
    return BertTokenizer(str(vocab), do_lower_case=True)
