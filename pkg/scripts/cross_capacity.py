#!/usr/bin/env python3
"""Rank-correlate per-source Average columns of same-family and cross-capacity matrices."""
import argparse
from pathlib import Path

from qtransfer.transfer import rank_correlation, read_matrix_csv


def averages(path: Path):
    rows, _, grid = read_matrix_csv(path.read_text())
    return rows, grid[:, -1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("results", type=Path, help="directory written by run_study.sh")
    ap.add_argument("--attacks", nargs="+", default=["fgsm", "cw"])
    args = ap.parse_args()
    for attack in args.attacks:
        rows_a, same = averages(args.results / f"mnistA_{attack}.csv")
        rows_b, cross = averages(args.results / f"mnistAB_{attack}.csv")
        assert rows_a == rows_b, "source rows differ"
        print(f"{attack}: spearman={rank_correlation(same, cross):.3f}")


if __name__ == "__main__":
    main()
