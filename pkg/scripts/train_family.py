#!/usr/bin/env python3
"""Train one architecture at every bitwidth of the study.

Example:
    python3 scripts/train_family.py --model MnistA --data /tmp/mnist --out ckpt --epochs 10
"""
import argparse
import time
from pathlib import Path

from qtransfer.checkpoint import save_checkpoint
from qtransfer.data import load_dataset
from qtransfer.quant import QuantConfig
from qtransfer.train import history_csv, recipe_for, train
from qtransfer.zoo import build_model, get_entry

BITS = (0, 1, 2, 4, 8, 12, 16)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", default="MnistA")
    ap.add_argument("--data", required=True, help="dataset directory or synthetic:... descriptor")
    ap.add_argument("--out", required=True, help="checkpoint directory")
    ap.add_argument("--bits", type=int, nargs="+", default=list(BITS))
    ap.add_argument("--epochs", type=int, default=None, help="defaults to the recipe's epoch count")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    tr, te = load_dataset(args.data)
    entry = get_entry(args.model)
    recipe = recipe_for(entry.dataset, epochs=args.epochs, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for bits in args.bits:
        start = time.perf_counter()
        model = build_model(entry, QuantConfig.uniform(bits), seed=args.seed)
        _, hist = train(model, recipe, tr, te)
        path = out / f"{entry.model_id}_{bits}.qntk"
        save_checkpoint(path, model, meta={"test_acc": hist[-1].test_acc, "epochs": recipe.epochs})
        path.with_suffix(".history.csv").write_text(history_csv(hist))
        print(f"{entry.model_id} bits={bits or 'FP'} acc={hist[-1].test_acc:.3f} "
              f"{time.perf_counter() - start:.0f}s -> {path}", flush=True)


if __name__ == "__main__":
    main()
