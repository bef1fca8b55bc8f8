"""Attack hyperparameters and the line-oriented ``key = value`` config format.

A config file names one or more attacks and their parameters::

    # comment
    attack = fgsm, cw
    fgsm.eps = 0.25
    cw.kappa = 5

Undotted keys apply to every listed attack that has a field of that name,
so ``attack = fgsm`` plus ``eps = 0.25`` is the same as ``--attack fgsm --eps 0.25``
on the command line. Dotted keys win over undotted ones.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigError

ATTACKS = ("fgsm", "jsma", "uap", "ba", "cw")


@dataclass(frozen=True)
class FgsmParams:
    eps: float = 0.25

    def __post_init__(self):
        if self.eps < 0:
            raise ConfigError("fgsm: eps must be >= 0")


@dataclass(frozen=True)
class JsmaParams:
    """``theta``: change per chosen feature per step; ``gamma``: pixel budget in percent."""

    theta: float = 1.0
    gamma: float = 10.0

    def __post_init__(self):
        if self.theta == 0:
            raise ConfigError("jsma: theta must be non-zero")
        if not 0 < self.gamma <= 100:
            raise ConfigError("jsma: gamma must be in (0, 100]")


@dataclass(frozen=True)
class UapParams:
    """``eps``: inner FGSM step; ``xi``: L-inf cap; ``delta``: target fooling rate."""

    eps: float = 0.1
    xi: float = 0.6
    delta: float = 0.8
    max_epochs: int = 10

    def __post_init__(self):
        if self.eps < 0 or self.xi < 0:
            raise ConfigError("uap: eps and xi must be >= 0")
        if not 0 < self.delta <= 1:
            raise ConfigError("uap: delta must be in (0, 1]")
        if self.max_epochs < 0:
            raise ConfigError("uap: max_epochs must be >= 0")


@dataclass(frozen=True)
class BaParams:
    """Boundary attack.

    Each iteration spends at most ``queries`` model calls: orthogonal
    proposals in windows of ``window``, then contraction attempts.
    ``orth_step`` and ``src_step`` adapt by ``adapt_down`` when a window's
    acceptance rate is below ``low`` and by ``adapt_up`` above ``high``.
    """

    iters: int = 15
    queries: int = 50
    orth_step: float = 0.01
    src_step: float = 0.01
    window: int = 10
    low: float = 0.2
    high: float = 0.5
    adapt_down: float = 0.9
    adapt_up: float = 1.1
    init_trials: int = 100
    init_blend: bool = True
    blend_tol: float = 1e-3

    def __post_init__(self):
        if self.iters < 0:
            raise ConfigError("ba: iters must be >= 0")
        if self.queries < 2 or self.window < 1 or self.init_trials < 1:
            raise ConfigError("ba: queries >= 2, window >= 1 and init_trials >= 1 required")
        if not (0 < self.orth_step and 0 < self.src_step < 1):
            raise ConfigError("ba: orth_step > 0 and 0 < src_step < 1 required")


@dataclass(frozen=True)
class CwParams:
    """``kappa``: confidence; ``iters``: descent steps per round; ``bsearch``: rounds;
    ``c_init``: first trade-off constant; ``lr``: Adam step size."""

    kappa: float = 5.0
    iters: int = 25
    bsearch: int = 20
    c_init: float = 0.01
    lr: float = 0.01
    # keep the iterate and optimizer state across binary-search rounds
    warm_start: bool = True

    def __post_init__(self):
        if self.kappa < 0:
            raise ConfigError("cw: kappa must be >= 0")
        if self.bsearch < 1:
            raise ConfigError("cw: bsearch must be >= 1")
        if self.iters < 0 or self.c_init <= 0 or self.lr <= 0:
            raise ConfigError("cw: iters >= 0, c_init > 0 and lr > 0 required")


PARAM_TYPES = {"fgsm": FgsmParams, "jsma": JsmaParams, "uap": UapParams, "ba": BaParams, "cw": CwParams}


@dataclass(frozen=True)
class AttackConfig:
    attack: str
    params: object

    def __post_init__(self):
        if self.attack not in PARAM_TYPES:
            raise ConfigError(f"unknown attack {self.attack!r}; choose from {', '.join(ATTACKS)}")
        if not isinstance(self.params, PARAM_TYPES[self.attack]):
            raise ConfigError(f"{self.attack}: params must be {PARAM_TYPES[self.attack].__name__}")

    def to_dict(self) -> dict:
        return {"attack": self.attack, **{f.name: getattr(self.params, f.name) for f in fields(self.params)}}


def _coerce(cls, name: str, raw):
    for f in fields(cls):
        if f.name == name:
            kind = type(f.default)
            if isinstance(raw, kind):
                return raw
            text = str(raw).strip()
            try:
                if kind is bool:
                    if text.lower() in ("1", "true", "yes", "on"):
                        return True
                    if text.lower() in ("0", "false", "no", "off"):
                        return False
                    raise ValueError(text)
                if kind is int:
                    return int(text)
                return float(text)
            except ValueError:
                raise ConfigError(f"{name}: cannot parse {text!r} as {kind.__name__}") from None
    raise ConfigError(f"unknown parameter {name!r} for {cls.__name__}")


def make_config(attack: str, **values) -> AttackConfig:
    """Build an :class:`AttackConfig`; ``None`` values fall back to defaults."""
    attack = attack.strip().lower()
    if attack not in PARAM_TYPES:
        raise ConfigError(f"unknown attack {attack!r}; choose from {', '.join(ATTACKS)}")
    cls = PARAM_TYPES[attack]
    kwargs = {k.replace("-", "_"): _coerce(cls, k.replace("-", "_"), v)
              for k, v in values.items() if v is not None}
    return AttackConfig(attack, cls(**kwargs))


def parse_config_text(text: str) -> list[AttackConfig]:
    attacks, shared, dotted = None, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower().replace("-", "_"), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key == "attack":
            attacks = [a.strip().lower() for a in value.split(",") if a.strip()]
            continue
        if "." in key:
            name, _, field = key.partition(".")
            if name not in PARAM_TYPES:
                raise ConfigError(f"line {lineno}: unknown attack section {name!r}")
            _coerce(PARAM_TYPES[name], field, value)
            dotted.setdefault(name, {})[field] = value
        else:
            shared[key] = value
    if not attacks:
        raise ConfigError("config does not name an attack (add 'attack = <name>')")
    configs = []
    for name in attacks:
        if name not in PARAM_TYPES:
            raise ConfigError(f"unknown attack {name!r}; choose from {', '.join(ATTACKS)}")
        names = {f.name for f in fields(PARAM_TYPES[name])}
        values = {k: v for k, v in shared.items() if k in names}
        values.update(dotted.get(name, {}))
        configs.append(make_config(name, **values))
    stray = set(shared) - {f.name for a in attacks for f in fields(PARAM_TYPES[a])}
    if stray:
        raise ConfigError(f"parameters {sorted(stray)} match none of the attacks {attacks}")
    return configs


def load_config(path) -> list[AttackConfig]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path}: not valid UTF-8 ({e})") from None
    return parse_config_text(text)


def override(cfg: AttackConfig, **values) -> AttackConfig:
    vals = {k: _coerce(type(cfg.params), k, v) for k, v in values.items() if v is not None}
    return AttackConfig(cfg.attack, replace(cfg.params, **vals))


def preset_path(name: str) -> Path:
    """Path of a shipped preset (``mnist`` or ``cifar``)."""
    path = Path(__file__).resolve().parent.parent / "presets" / f"{name}.preset"
    if not path.exists():
        raise ConfigError(f"no preset named {name!r}")
    return path
