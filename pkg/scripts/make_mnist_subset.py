#!/usr/bin/env python3
"""Write the bundled 5000-digit MNIST sample as IDX files."""
import argparse

from qtransfer.data import load_mnist, write_mnist_subset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="target directory")
    ap.add_argument("--train", type=int, default=4000, help="digits in the train split")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    write_mnist_subset(args.out, n_train=args.train, seed=args.seed)
    tr, te = load_mnist(args.out)
    print(f"wrote {len(tr)} train / {len(te)} test digits to {args.out}")


if __name__ == "__main__":
    main()
