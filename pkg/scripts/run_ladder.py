"""Run the full model ladder on one ratings file and collect Table-4-style results.

Steps: prepare -> correlate -> majority, svm, bilstm, encoder, encoder+TLI,
encoder+TLQ, bleurt-tiny -> evaluate each -> merge curves.

    python scripts/run_ladder.py --data ratings.csv --out runs/full --config configs/reference.yaml \
        --checkpoint $NATUREVAL_CHECKPOINT_DIR/bert-base-uncased \
        --bleurt-checkpoint $NATUREVAL_CHECKPOINT_DIR/bleurt-tiny
"""

import argparse
import json
import sys
from pathlib import Path

from natureval.cli import main as cli

LADDER = [
    ("majority", "majority", None),
    ("svm", "svm", None),
    ("bilstm", "bilstm", None),
    ("bert", "encoder", None),
    ("bert_tli", "encoder", "informativeness"),
    ("bert_tlq", "encoder", "quality"),
    ("bleurt", "bleurt-tiny", None),
]


def step(argv):
    print("$ natureval " + " ".join(argv), flush=True)
    code = cli(argv)
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True, help="raw per-judge ratings file")
    ap.add_argument("--out", required=True)
    ap.add_argument("--config", help="YAML run config shared by every step")
    ap.add_argument("--checkpoint", help="BERT-base checkpoint dir (also supplies the Bi-LSTM vocabulary)")
    ap.add_argument("--bleurt-checkpoint")
    ap.add_argument("--only", nargs="+", help="subset of runs, e.g. majority svm")
    args = ap.parse_args()

    out = Path(args.out)
    prep = out / "prepared"
    cfg = ["--config", args.config] if args.config else []
    step(["prepare", *cfg, "--data", args.data, "--out", str(prep)])
    for a, b in (("naturalness", "quality"), ("naturalness", "informativeness")):
        step(["correlate", *cfg, "--data", str(prep), a, b, "--out", str(out / f"rho_{b}.json")])

    results = {}
    for name, kind, source in LADDER:
        if args.only and name not in args.only:
            continue
        ckpt = args.bleurt_checkpoint if kind == "bleurt-tiny" else args.checkpoint
        if kind in ("bilstm", "encoder", "bleurt-tiny") and not ckpt:
            print(f"skipping {name}: no checkpoint given")
            continue
        run = out / name
        argv = ["train", *cfg, "--data", str(prep), "--model", kind, "--out", str(run)]
        if ckpt and kind != "majority" and kind != "svm":
            argv += ["--checkpoint", ckpt]
        if source:
            argv += ["--transfer-source", source]
        step(argv)
        step(["evaluate", "--data", str(prep), "--checkpoint", str(run), "--out", str(run / "eval")])
        results[name] = json.loads((run / "eval" / "report.json").read_text())

    curve_runs = [n for n in ("bert", "bert_tli", "bert_tlq") if (out / n / "curve.jsonl").exists()]
    if curve_runs:
        step(["curves", *[str(out / n) for n in curve_runs], "--out", str(out / "curves"),
              "--labels", *curve_runs])

    rows = ["F1_score", "recall", "precision", "accuracy"]
    keys = ["macro_f1", "macro_recall", "macro_precision", "accuracy"]
    print("\n" + f"{'':<12}" + "".join(f"{n:>10}" for n in results))
    for row, key in zip(rows, keys):
        print(f"{row:<12}" + "".join(f"{r[key]:>10.2f}" for r in results.values()))
    (out / "summary.json").write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
