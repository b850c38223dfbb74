"""Write a synthetic ratings file and a tiny BERT-architecture checkpoint.

Lets the whole pipeline run without the public corpus or downloaded weights:

    python scripts/make_toy_corpus.py --out toy/
    python scripts/run_ladder.py --data toy/ratings.csv --checkpoint toy/tiny-bert --out runs/toy --config configs/toy.yaml
"""

import argparse
from pathlib import Path

from natureval.features import load_tokenizer
from natureval.models import EncoderClassifier, _quiet_transformers
from natureval.synthetic import synthetic_records, write_records_csv, write_vocab


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="toy")
    ap.add_argument("--pairs", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    ckpt = out / "tiny-bert"
    ckpt.mkdir(parents=True, exist_ok=True)
    write_records_csv(synthetic_records(args.pairs, seed=args.seed), out / "ratings.csv")
    write_vocab(ckpt / "vocab.txt")
    _quiet_transformers()
    tok = load_tokenizer(ckpt)
    model = EncoderClassifier.from_config(seed=args.seed, vocab_size=len(tok), hidden_size=64, num_hidden_layers=2,
                                          num_attention_heads=2, intermediate_size=128, max_position_embeddings=128)
    model.encoder.save_pretrained(str(ckpt))
    print(f"wrote {out / 'ratings.csv'} ({args.pairs} pairs x 3 judges) and {ckpt}")


if __name__ == "__main__":
    main()
