"""Layered run configuration: built-in defaults <- INI file <- command-line flags.

The resolved configuration is rendered back to INI text (``echo``) and stored
next to every artifact; feeding that file back in reproduces the run.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields

from .attack import AttackConfig
from .classifier import TrainConfig, VARIANTS
from .data_io import DatasetSpec
from .errors import InvalidArgumentError

ENV_CONFIG = "TOPOADV_CONFIG"

_TOPO_KEYS = ("alpha", "beta", "w", "K")
_ATTACK_SKIP = _TOPO_KEYS + ("record_deltas",)


@dataclass
class RunConfig:
    attack: AttackConfig = field(default_factory=AttackConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    variant: str = "pointwise"
    workers: int = 0

    def sections(self) -> dict:
        """Nested plain dict, section -> key -> value."""
        a = self.attack.to_dict()
        d = dataclasses.asdict(self.data)
        d["families"] = list(self.data.families)
        return {
            "attack": {k: v for k, v in a.items() if k not in _ATTACK_SKIP},
            "topo": {k: a[k] for k in _TOPO_KEYS},
            "train": {**dataclasses.asdict(self.train), "variant": self.variant},
            "data": d,
            "run": {"workers": self.workers},
        }

    def echo(self) -> str:
        """Resolved configuration as INI text (stable key order)."""
        lines = []
        for sec, items in self.sections().items():
            lines.append(f"[{sec}]")
            for k, v in items.items():
                lines.append(f"{k} = {_render(v)}")
            lines.append("")
        return "\n".join(lines)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(section, key, raw, default):
    """Parse ``raw`` text to the type of ``default``."""
    name = f"{section}.{key}"
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, (tuple, list)):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
                return tuple(float(p) for p in parts)
            return tuple(parts)
    except ValueError:
        raise InvalidArgumentError(f"{name}: cannot parse {text!r}") from None
    return text


def _defaults() -> dict:
    base = RunConfig()
    return base.sections()


def resolve(path=None, overrides=None) -> RunConfig:
    """Build a validated RunConfig from defaults, an optional INI file and
    ``overrides`` (a mapping of 'section.key' -> text)."""
    values = _defaults()
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is not None:
        if not os.path.exists(path):
            raise InvalidArgumentError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise InvalidArgumentError(f"config file {path}: {exc}") from None
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                _assign(values, sec, key, raw)
    for dotted, raw in (overrides or {}).items():
        if "." not in dotted:
            raise InvalidArgumentError(f"override {dotted!r} must look like section.key")
        sec, key = dotted.split(".", 1)
        _assign(values, sec, key, raw)
    return _build(values)


def _assign(values, sec, key, raw):
    if sec not in values:
        raise InvalidArgumentError(f"unknown config section [{sec}]")
    if key not in values[sec]:
        raise InvalidArgumentError(f"unknown config field {sec}.{key}")
    values[sec][key] = _coerce(sec, key, raw, values[sec][key])


def _build(values) -> RunConfig:
    a = dict(values["attack"])
    a.update(values["topo"])
    t = dict(values["train"])
    variant = t.pop("variant")
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"train.variant must be one of {VARIANTS}, got {variant!r}")
    d = dict(values["data"])
    d["families"] = tuple(d["families"])
    workers = int(values["run"]["workers"])
    if workers < 0:
        raise InvalidArgumentError("run.workers must be >= 0")
    try:
        return RunConfig(attack=AttackConfig(**_only(AttackConfig, a)),
                         train=TrainConfig(**_only(TrainConfig, t)),
                         data=DatasetSpec(**_only(DatasetSpec, d)),
                         variant=variant, workers=workers)
    except InvalidArgumentError:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(str(exc)) from None


def _only(cls, mapping):
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in mapping.items() if k in names}
