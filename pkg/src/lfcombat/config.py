"""Run configuration: YAML with one section per module, strict keys, stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
import types
import typing
from dataclasses import dataclass, field

import yaml

from .arena import ArenaConfig
from .errors import ConfigError
from .evalharness import EvalConfig
from .flightdyn import DynamicsConfig
from .hrl import ControllerConfig, HierarchyConfig, ModelConfig
from .lfmappo import TrainConfig
from .targeting import TargetingConfig


@dataclass
class RunSection:
    seed: int = 0
    run_id: str = ""  # empty: derived from the config hash and seed
    out_dir: str = "runs"


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    targeting: TargetingConfig = field(default_factory=TargetingConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> list[str]:
        errs = []
        errs += self.dynamics.validate()
        errs += self.arena.validate(self.dynamics.altitude_min)
        errs += self.targeting.validate()
        errs += self.hierarchy.validate()
        errs += self.controller.validate()
        errs += self.model.validate()
        errs += self.train.validate()
        errs += self.eval.validate()
        if self.run.seed < 0:
            errs.append("run.seed must be >= 0")
        return errs

    def check(self) -> "RunConfig":
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        """Digest of everything that shapes the environment and networks.

        Run bookkeeping (seed, ids, paths) and the training/evaluation schedule
        are excluded so checkpoints stay comparable across runs.
        """
        d = self.to_dict()
        keep = {k: d[k] for k in ("dynamics", "arena", "targeting", "hierarchy", "controller", "model")}
        keep["variant"] = d["train"]["variant"]
        blob = json.dumps(keep, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.run.run_id or f"{self.hash()[:8]}-s{self.run.seed}"

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


_ANGLE = re.compile(r"^\s*(-?)\s*(\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def parse_float(value, where: str) -> float:
    """Numbers, ``"pi/4"``, ``"2*pi"``, ``"-pi/6"`` or ``"45deg"``."""
    if isinstance(value, bool):
        raise ConfigError([f"{where}: expected a number, got {value!r}"])
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        s = value.strip().lower()
        if s.endswith("deg"):
            try:
                return math.radians(float(s[:-3]))
            except ValueError:
                pass
        m = _ANGLE.match(s)
        if m:
            sign, coef, den = m.groups()
            v = (float(coef) if coef not in ("", ".") else 1.0) * math.pi / (float(den) if den else 1.0)
            return -v if sign else v
        try:
            return float(s)
        except ValueError:
            pass
    raise ConfigError([f"{where}: cannot read {value!r} as a number"])


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if tp is float:
        return parse_float(value, where)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError([f"{where}: expected an integer, got {value!r}"])
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError([f"{where}: expected true/false, got {value!r}"])
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError([f"{where}: expected a string, got {value!r}"])
        return value
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError([f"{where}: expected a list, got {value!r}"])
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError([f"{where}: expected {len(args)} entries, got {len(value)}"])
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(args[0], value, where)
    return value


def build(cls, data, where: str = ""):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([f"{where or 'config'}: expected a mapping, got {type(data).__name__}"])
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    errs = [f"{where + '.' if where else ''}{k}: unknown key" for k in data if k not in names]
    kwargs = {}
    for k, v in data.items():
        if k in names:
            try:
                kwargs[k] = _convert(hints[k], v, f"{where + '.' if where else ''}{k}")
            except ConfigError as e:
                errs += e.messages
    if errs:
        raise ConfigError(errs)
    return cls(**kwargs)


def apply_override(data: dict, assignment: str) -> None:
    """``section.key=value`` with the value read as YAML."""
    if "=" not in assignment:
        raise ConfigError([f"override {assignment!r}: expected dotted.key=value"])
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"override {assignment!r}: {p} is not a section"])
    node[parts[-1]] = yaml.safe_load(raw)


def load_dict(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError([f"cannot read config {path}: {e.strerror}"]) from e
    except yaml.YAMLError as e:
        raise ConfigError([f"config {path} is not valid YAML: {e}"]) from e
    return data or {}


def load_config(path: str | None = None, overrides: typing.Sequence[str] = (), seed: int | None = None) -> RunConfig:
    data = load_dict(path)
    for o in overrides:
        apply_override(data, o)
    if seed is not None:
        data.setdefault("run", {})["seed"] = seed
    return build(RunConfig, data).check()


def from_dict(data: dict) -> RunConfig:
    return build(RunConfig, data).check()
