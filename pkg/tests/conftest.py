import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from natureval.dataset import aggregate, split  # noqa: E402
from natureval.features import load_tokenizer  # noqa: E402
from natureval.models import EncoderClassifier, _quiet_transformers  # noqa: E402
from natureval.synthetic import synthetic_records, write_records_csv, write_vocab  # noqa: E402

TINY_ENCODER = dict(hidden_size=64, num_hidden_layers=2, num_attention_heads=2, intermediate_size=128,
                    max_position_embeddings=128)

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def vocab_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("vocab")
    write_vocab(d / "vocab.txt")
    return d


@pytest.fixture(scope="session")
def tokenizer(vocab_dir):
    return load_tokenizer(vocab_dir)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, vocab_dir, tokenizer):
    """A saved 2-layer, 64-wide BERT stub with the synthetic vocabulary."""
    _quiet_transformers()
    d = tmp_path_factory.mktemp("tiny_bert")
    model = EncoderClassifier.from_config(seed=0, vocab_size=len(tokenizer), **TINY_ENCODER)
    model.encoder.save_pretrained(str(d))
    (d / "vocab.txt").write_text((vocab_dir / "vocab.txt").read_text())
    return d


def tiny_encoder(tokenizer, seed=0, **overrides):
    cfg = {**TINY_ENCODER, **overrides}
    return EncoderClassifier.from_config(seed=seed, vocab_size=len(tokenizer), **cfg)


@pytest.fixture(scope="session")
def toy_pairs():
    return aggregate(synthetic_records(120, seed=3))


@pytest.fixture(scope="session")
def toy_split(toy_pairs):
    return split(toy_pairs, (0.8, 0.1, 0.1), seed=0)


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "ratings.csv"
    write_records_csv(synthetic_records(60, seed=1), path)
    return path


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
