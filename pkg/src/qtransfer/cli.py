"""Command-line front end: ``qtransfer {train,attack,transfer,report}``.

Exit status: 0 on success, 2 on a usage or configuration error, 3 on a data
or file-format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .advset import save_advset
from .attacks import ATTACKS, AttackConfig, craft, load_config, make_config, override, preset_path
from .checkpoint import checkpoint_digest, load_checkpoint, save_checkpoint
from .data import load_dataset
from .errors import (ConfigError, DomainError, FormatError, RosterError, SelectionError,
                     ShapeError)
from .quant import QuantConfig, parse_bits
from .report import dump_pairs, write_heatmap
from .train import evaluate_accuracy, recipe_for, train, write_history
from .transfer import read_matrix_csv, run_transfer, select_samples
from .zoo import ROSTER, build_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
log = logging.getLogger("qtransfer")

# command-line flag -> parameter name, per attack
ATTACK_FLAGS = {
    "fgsm": {"eps": "eps"},
    "jsma": {"theta": "theta", "gamma": "gamma"},
    "uap": {"eps": "eps", "xi": "xi"},
    "ba": {"iters": "iters"},
    "cw": {"kappa": "kappa", "iters": "iters", "bsearch": "bsearch", "c_init": "c_init"},
}
ALL_FLAGS = ("eps", "theta", "gamma", "xi", "iters", "kappa", "bsearch", "c_init")


def _bits(text):
    try:
        return parse_bits(text)
    except DomainError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _load_data(descriptor, split="test"):
    train_set, test_set = load_dataset(descriptor)
    return train_set if split == "train" else test_set


def resolve_config_path(name) -> Path:
    """A file path, or the name of a shipped preset (``mnist``, ``cifar``)."""
    path = Path(name)
    if path.exists():
        return path
    if not path.suffix and "/" not in str(name):
        return preset_path(str(name))
    raise ConfigError(f"attack config {name} not found")


def attack_config_from_args(ns) -> AttackConfig:
    """Combine an optional ``--config`` file with per-attack flags (flags win)."""
    flags = {k: getattr(ns, k) for k in ALL_FLAGS if getattr(ns, k, None) is not None}
    known = ATTACK_FLAGS[ns.attack]
    stray = sorted(set(flags) - set(known))
    if stray:
        names = ", ".join("--" + s.replace("_", "-") for s in stray)
        raise ConfigError(f"{names} not used by {ns.attack}")
    values = {known[k]: v for k, v in flags.items()}
    if getattr(ns, "config", None):
        matching = [c for c in load_config(resolve_config_path(ns.config)) if c.attack == ns.attack]
        if not matching:
            raise ConfigError(f"{ns.config} has no settings for {ns.attack}")
        return override(matching[0], **values)
    return make_config(ns.attack, **values)


# -- subcommands ---------------------------------------------------------------

def cmd_train(ns) -> int:
    if ns.model not in ROSTER:
        raise RosterError(f"unknown model id {ns.model!r}; known: {', '.join(ROSTER)}")
    train_set, test_set = load_dataset(ns.data)
    if ns.train_limit:
        train_set = train_set.head(ns.train_limit)
    quant = QuantConfig.uniform(ns.bits)
    model = build_model(ns.model, quant, seed=ns.seed)
    cfg = recipe_for(model.dataset_id, epochs=ns.epochs, seed=ns.seed)
    if ns.batch_size:
        cfg = replace(cfg, batch_size=ns.batch_size)
    _, history = train(model, cfg, train_set, test_set, log=log.info)
    acc = evaluate_accuracy(model, test_set)
    digest = save_checkpoint(ns.out, model, meta={"train": cfg.to_dict(), "test_acc": acc,
                                                  "data": ns.data})
    history_path = ns.history or str(ns.out) + ".history.csv"
    write_history(history_path, history)
    print(f"{model.label}: test accuracy {acc:.4f}; saved {ns.out} (sha256 {digest[:12]})")
    return EXIT_OK


def cmd_attack(ns) -> int:
    cfg = attack_config_from_args(ns)
    model = load_checkpoint(ns.ckpt)
    data = _load_data(ns.data)
    pair = select_samples(model, model, data, k=ns.samples, seed=ns.seed)
    sub = data.by_index(pair.indices)
    batch = craft(model, sub.x, sub.y, cfg, indices=sub.index, seed=ns.seed)
    save_advset(ns.out, batch)
    if ns.dump_images:
        dump_pairs(ns.dump_images, batch.clean, batch.adversarial,
                   name=f"{cfg.attack}_{model.model_id}_{model.quant.label}")
    print(f"{cfg.attack} on {model.label}: {len(batch)} samples, source success "
          f"{batch.success_rate:.3f}, mean L2 {float(np.mean(batch.l2)) if len(batch) else 0:.3f}; "
          f"saved {ns.out}")
    return EXIT_OK


def _matrix_paths(out: Path, attack: str, several: bool):
    if several:
        out = out.with_name(f"{out.stem}_{attack}{out.suffix or '.csv'}")
    return out, out.with_suffix(".json")


def cmd_transfer(ns) -> int:
    configs = load_config(resolve_config_path(ns.attack_config))
    if ns.attack:
        configs = [c for c in configs if c.attack == ns.attack]
        if not configs:
            raise ConfigError(f"{ns.attack_config} has no settings for {ns.attack}")
    if ns.repeats < 1 or ns.samples < 1 or ns.workers < 1:
        raise ConfigError("--repeats, --samples and --workers must be positive")
    sources = [load_checkpoint(p) for p in ns.sources]
    targets = [load_checkpoint(p) for p in ns.targets]
    data = _load_data(ns.data)
    if ns.pool:
        data = data.head(ns.pool)
    digests = {str(p): checkpoint_digest(p) for p in dict.fromkeys(ns.sources + ns.targets)}
    out = Path(ns.out)
    for cfg in configs:
        matrix = run_transfer(sources, targets, cfg, data, samples=ns.samples, repeats=ns.repeats,
                              seed=ns.seed, workers=ns.workers, log=log.info)
        matrix.meta.update({"sources": list(ns.sources), "targets": list(ns.targets),
                            "checkpoints": digests, "data": ns.data, "pool": ns.pool})
        csv_path, manifest_path = _matrix_paths(out, cfg.attack, len(configs) > 1)
        matrix.save(csv_path, manifest_path)
        print(f"{cfg.attack}: wrote {csv_path}")
    return EXIT_OK


def cmd_report(ns) -> int:
    try:
        text = Path(ns.input).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{ns.input}: not UTF-8 ({e})") from None
    rows, cols, values = read_matrix_csv(text)
    write_heatmap(ns.heatmap, rows, cols, values, title=ns.title or Path(ns.input).stem)
    print(f"wrote {ns.heatmap} ({values.size} cells)")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtransfer", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model at one bitwidth")
    t.add_argument("--model", required=True, help="roster id: " + ", ".join(ROSTER))
    t.add_argument("--bits", type=_bits, default=0, help="FP (or 0), or 1..16")
    t.add_argument("--data", required=True, help="dataset directory or synthetic:k=v,...")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=None, help="default: the dataset recipe")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--train-limit", type=int, default=None, help="use the first N training samples")
    t.add_argument("--history", default=None, help="accuracy CSV (default: <out>.history.csv)")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="craft adversarial examples on one model")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--attack", required=True, choices=ATTACKS)
    a.add_argument("--data", required=True)
    a.add_argument("--config", default=None, help="config file or preset name; flags override it")
    a.add_argument("--eps", type=float)
    a.add_argument("--theta", type=float)
    a.add_argument("--gamma", type=float)
    a.add_argument("--xi", type=float)
    a.add_argument("--iters", type=int)
    a.add_argument("--kappa", type=float)
    a.add_argument("--bsearch", type=int)
    a.add_argument("--c-init", dest="c_init", type=float)
    a.add_argument("--samples", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True, help="adversarial-set file")
    a.add_argument("--dump-images", default=None, metavar="DIR", help="write clean/adversarial image grids")
    a.set_defaults(func=cmd_attack)

    x = sub.add_parser("transfer", help="source x target adversarial-accuracy matrix")
    x.add_argument("--sources", nargs="+", required=True, metavar="CKPT")
    x.add_argument("--targets", nargs="+", required=True, metavar="CKPT")
    x.add_argument("--attack-config", required=True, help="config file or preset name")
    x.add_argument("--attack", choices=ATTACKS, default=None, help="run only this attack from the config")
    x.add_argument("--data", required=True)
    x.add_argument("--pool", type=int, default=None, help="draw samples from the first N test images")
    x.add_argument("--repeats", type=int, default=3)
    x.add_argument("--samples", type=int, default=1000)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--out", required=True, help="matrix CSV; the manifest goes next to it as .json")
    x.set_defaults(func=cmd_transfer)

    r = sub.add_parser("report", help="render a matrix CSV as an SVG heatmap")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--heatmap", required=True)
    r.add_argument("--title", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        return ns.func(ns)
    except (ConfigError, RosterError) as e:
        print(f"qtransfer: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, SelectionError, ShapeError, FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError) as e:
        print(f"qtransfer: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
