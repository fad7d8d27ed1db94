"""Run configuration and flat key=value config files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from socialref.corpus.generator import GenConfig
from socialref.datamodel import TaskKind
from socialref.errors import ConfigError
from socialref.fusion import ABLATIONS, PRESETS, ModelConfig, lr_map_for


def parse_kv(text, source="<config>"):
    """``key = value`` lines; ``#`` starts a comment; later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_kv(text, str(path))


def write_kv(mapping, path):
    lines = [f"{k} = {_render(v)}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple, frozenset, set)):
        return ",".join(sorted(map(str, v)))
    return "" if v is None else str(v)


def coerce(value, kind, key):
    if not isinstance(value, str):
        return value
    try:
        if kind is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None
    return value


def parse_ablation(value):
    if isinstance(value, str):
        items = [a.strip() for a in value.split(",") if a.strip()]
    else:
        items = list(value or ())
    bad = [a for a in items if a not in ABLATIONS]
    if bad:
        raise ConfigError(f"unknown ablation(s) {bad}; choose from {list(ABLATIONS)}")
    return frozenset(items)


@dataclass(frozen=True)
class RunConfig:
    task: TaskKind
    seed: int
    preset: str = "desk"
    context_n: int = 5
    frames: int = 8
    ablation: frozenset = frozenset()
    epochs: int = 20
    batch: int = 16
    language_lr: float = None
    rest_lr: float = None
    test_fraction: float = 0.2
    corpus: str = ""
    out: str = "runs"
    dtype: str = "float32"
    gen: dict = field(default_factory=dict)       # GenConfig overrides for an inline corpus
    model: dict = field(default_factory=dict)     # ModelConfig overrides

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind.parse(self.task))
        object.__setattr__(self, "ablation", parse_ablation(self.ablation))
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.context_n < 0:
            raise ConfigError("context_n must be >= 0")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        model_fields = {f.name for f in fields(ModelConfig)} - {"vocab_size", "head_size", "frames"}
        bad = set(self.model) - model_fields
        if bad:
            raise ConfigError(f"unknown model option(s) {sorted(bad)}")
        self.gen_config()  # validates generator overrides

    @property
    def lr_map(self):
        return lr_map_for(self.preset, self.language_lr, self.rest_lr)

    def gen_config(self):
        base = {"seed": self.seed}
        base.update(self.gen)
        return GenConfig.from_mapping(base)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_mapping(self):
        out = {}
        for f in fields(self):
            if f.name in ("gen", "model"):
                continue
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, TaskKind) else v
        for k, v in self.gen.items():
            out[f"gen.{k}"] = v
        for k, v in self.model.items():
            out[f"model.{k}"] = v
        return out

    def hash(self):
        m = {k: _render(v) for k, v in self.to_mapping().items() if k != "out"}
        return hashlib.sha256(json.dumps(m, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, mapping):
        kinds = {f.name: f.type for f in fields(cls)}
        values, gen, model = {}, {}, {}
        model_types = {f.name: f.type for f in fields(ModelConfig)}
        for key, value in mapping.items():
            if key.startswith("gen."):
                gen[key[4:]] = value
            elif key.startswith("model."):
                name = key[6:]
                kind = {"int": int, "float": float, "bool": bool}.get(str(model_types.get(name)), str)
                model[name] = coerce(value, kind, key)
            elif key in kinds:
                values[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        for key in ("seed", "context_n", "frames", "epochs", "batch"):
            if key in values:
                values[key] = coerce(values[key], int, key)
        for key in ("language_lr", "rest_lr", "test_fraction"):
            if key in values:
                values[key] = None if values[key] in ("", None) else coerce(values[key], float, key)
        if "seed" not in values:
            raise ConfigError("seed is mandatory")
        if "task" not in values:
            raise ConfigError("task is mandatory")
        return cls(**values, gen=gen, model=model)

    @classmethod
    def from_file(cls, path, **overrides):
        mapping = read_kv(path)
        mapping.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(mapping)


__all__ = ["RunConfig", "asdict", "coerce", "parse_ablation", "parse_kv", "read_kv", "write_kv"]
