"""Source x target transfer experiments.

For every (source, target) pair and repeat: pick samples both models classify
correctly, craft adversarial examples on the source, and measure how many the
target still classifies correctly (adversarial accuracy).
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .attacks import AdversarialBatch, AttackConfig, craft
from .data import Dataset, atomic_write
from .errors import DomainError, FormatError, SelectionError, ShapeError
from .nn import Model, predict

AVERAGE = "Average"
# attacks whose per-sample output does not depend on the run seed or on the
# other samples in the batch; they are crafted once per source
SEEDLESS = ("fgsm", "cw")
# attacks whose output depends on the whole sample set; crafted per pair
SET_LEVEL = ("uap",)


@dataclass(frozen=True)
class EvalPair:
    source: str
    target: str
    indices: tuple


def _correct_mask(model: Model, data: Dataset) -> np.ndarray:
    return predict(model, data.x) == data.y


def select_from_mask(joint: np.ndarray, data: Dataset, k: int, seed: int) -> np.ndarray:
    candidates = data.index[joint]
    if len(candidates) < k:
        raise SelectionError(k, len(candidates))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(candidates, size=k, replace=False))


def select_samples(source: Model, target: Model, data: Dataset, k: int = 1000, seed: int = 0) -> EvalPair:
    """``k`` samples drawn uniformly (without replacement) from those both models get right."""
    if source.input_shape != target.input_shape:
        raise ShapeError("source and target disagree on input shape")
    joint = _correct_mask(source, data)
    if target is not source:
        joint &= _correct_mask(target, data)
    return EvalPair(source.label, target.label, tuple(int(i) for i in select_from_mask(joint, data, k, seed)))


def adversarial_accuracy(target: Model, adv: AdversarialBatch) -> float:
    """Fraction of adversarial samples the target still labels correctly."""
    if len(adv) == 0:
        raise DomainError("no adversarial samples to evaluate")
    return float(np.mean(predict(target, adv.adversarial) == adv.labels))


@dataclass
class TransferMatrix:
    attack: dict
    rows: list
    cols: list
    values: np.ndarray  # (sources, targets, repeats)
    seed: int
    samples: int
    selections: dict = field(default_factory=dict)
    source_success: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def cells(self) -> np.ndarray:
        return self.values.mean(axis=2)

    @property
    def average(self) -> np.ndarray:
        return self.cells.mean(axis=1)

    @property
    def repeats(self) -> int:
        return self.values.shape[2]

    def grid(self) -> np.ndarray:
        """Cells with the Average column appended: (sources, targets + 1)."""
        return np.column_stack([self.cells, self.average])

    def diagonal(self) -> np.ndarray:
        """Cells where source and target carry the same label."""
        return np.array([self.cells[i, self.cols.index(r)] for i, r in enumerate(self.rows) if r in self.cols])

    def off_diagonal(self) -> np.ndarray:
        return np.array([self.cells[i, j] for i, r in enumerate(self.rows)
                         for j, c in enumerate(self.cols) if r != c])

    def to_csv(self) -> str:
        """Three-decimal cells; the Average column is the mean of the printed cells."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source"] + list(self.cols) + [AVERAGE])
        for label, row in zip(self.rows, self.cells):
            shown = [f"{v:.3f}" for v in row]
            avg = float(np.mean([float(s) for s in shown]))
            w.writerow([label] + shown + [f"{avg:.3f}"])
        return buf.getvalue()

    def manifest(self) -> dict:
        return {
            "attack": self.attack,
            "seed": self.seed,
            "repeats": self.repeats,
            "samples": self.samples,
            "rows": list(self.rows),
            "cols": list(self.cols),
            "cells": self.cells.tolist(),
            "average": self.average.tolist(),
            "repeat_values": self.values.tolist(),
            "selections": self.selections,
            "source_success": self.source_success,
            **self.meta,
        }

    def save(self, csv_path, manifest_path=None):
        atomic_write(csv_path, self.to_csv().encode("utf-8"))
        if manifest_path:
            text = json.dumps(self.manifest(), indent=1, sort_keys=True)
            atomic_write(manifest_path, text.encode("utf-8"))


def read_matrix_csv(text: str) -> tuple[list, list, np.ndarray]:
    """Parse a matrix CSV. Returns ``(row labels, column labels incl. Average, values)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or len(rows[0]) < 2:
        raise FormatError("matrix CSV has no header")
    header = rows[0][1:]
    labels, values = [], []
    for n, r in enumerate(rows[1:], 2):
        if not r:
            continue
        if len(r) != len(header) + 1:
            raise FormatError(f"matrix CSV line {n}: expected {len(header) + 1} fields, got {len(r)}")
        labels.append(r[0])
        try:
            values.append([float(v) for v in r[1:]])
        except ValueError as e:
            raise FormatError(f"matrix CSV line {n}: {e}") from None
    return labels, header, np.array(values, dtype=np.float64).reshape(len(labels), len(header))


def rank_correlation(m1, m2) -> float:
    """Spearman correlation between two matrices' per-source Average columns."""
    a = np.asarray(m1.average if isinstance(m1, TransferMatrix) else m1, dtype=np.float64)
    b = np.asarray(m2.average if isinstance(m2, TransferMatrix) else m2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"average columns differ in length: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise DomainError("rank correlation needs at least two sources")
    return float(spearmanr(a, b).statistic)


def model_labels(models) -> list:
    """Bitwidth labels when all models share one architecture, else full labels."""
    if len({m.model_id for m in models}) == 1:
        return [m.quant.label for m in models]
    return [m.label for m in models]


def _craft_job(args):
    model, x, y, idx, cfg, seed = args
    return craft(model, x, y, cfg, indices=idx, seed=seed)


def run_transfer(sources, targets, attack: AttackConfig, data: Dataset, samples: int = 1000,
                 repeats: int = 3, seed: int = 0, workers: int = 1, log=None,
                 row_labels=None, col_labels=None, on_batch=None) -> TransferMatrix:
    """Fill the (source, target) adversarial-accuracy matrix averaged over ``repeats``.

    Repeat ``r`` uses seed ``seed + r`` for sample selection and for the
    attack's random streams. Samples needed by several targets of one source
    are crafted once, so every pair sees the same adversarial image for a
    shared sample. ``on_batch(source_index, batch)`` is called once for every
    crafted batch, in a fixed order, e.g. to audit attack budgets.
    """
    sources, targets = list(sources), list(targets)
    if not sources or not targets:
        raise DomainError("need at least one source and one target")
    shapes = {m.input_shape for m in sources + targets}
    if len(shapes) != 1 or shapes != {data.input_shape}:
        raise ShapeError("all models and the data must share one input shape")
    rows = row_labels or model_labels(sources)
    cols = col_labels or model_labels(targets)
    say = log or (lambda msg: None)

    correct = {}
    for m in sources + targets:
        if id(m) not in correct:
            correct[id(m)] = _correct_mask(m, data)

    pairs = {}
    for r in range(repeats):
        for i, s in enumerate(sources):
            for j, t in enumerate(targets):
                joint = correct[id(s)] & correct[id(t)]
                pairs[i, j, r] = select_from_mask(joint, data, samples, seed + r)

    # crafting jobs: key -> (source index, sample indices, attack seed)
    jobs = {}
    for i in range(len(sources)):
        if attack.attack in SET_LEVEL:
            for j in range(len(targets)):
                for r in range(repeats):
                    jobs[i, j, r] = (i, pairs[i, j, r], seed + r)
        elif attack.attack in SEEDLESS:
            union = np.unique(np.concatenate([pairs[i, j, r] for j in range(len(targets))
                                              for r in range(repeats)]))
            jobs[i, None, None] = (i, union, seed)
        else:
            for r in range(repeats):
                union = np.unique(np.concatenate([pairs[i, j, r] for j in range(len(targets))]))
                jobs[i, None, r] = (i, union, seed + r)

    keys = sorted(jobs, key=lambda k: tuple(-1 if v is None else v for v in k))
    args = []
    for k in keys:
        i, idx, s = jobs[k]
        sub = data.by_index(idx)
        args.append((sources[i], sub.x, sub.y, sub.index, attack, s))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            crafted = dict(zip(keys, pool.map(_craft_job, args)))
    else:
        crafted = {}
        for k, a in zip(keys, args):
            crafted[k] = _craft_job(a)
            say(f"crafted {attack.attack} on {rows[k[0]]}: {len(crafted[k])} samples, "
                f"source success {crafted[k].success_rate:.3f}")

    if on_batch is not None:
        for k in keys:
            on_batch(k[0], crafted[k])

    def batch_for(i, j, r):
        for k in ((i, j, r), (i, None, r), (i, None, None)):
            if k in crafted:
                return crafted[k]
        raise KeyError((i, j, r))

    values = np.zeros((len(sources), len(targets), repeats))
    selections, success = {}, {}
    for (i, j, r), idx in sorted(pairs.items()):
        adv = batch_for(i, j, r).by_index(idx)
        values[i, j, r] = adversarial_accuracy(targets[j], adv)
        selections[f"{rows[i]}->{cols[j]}#{r}"] = [int(v) for v in idx]
        success[f"{rows[i]}->{cols[j]}#{r}"] = float(np.mean(adv.source_success))
    return TransferMatrix(attack.to_dict(), list(rows), list(cols), values, seed, samples,
                          selections, success)
