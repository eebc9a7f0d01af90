"""Line-based ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


def _mapper(value):
    if value not in ("variance_softmax", "learned"):
        raise ValueError("expected 'variance_softmax' or 'learned'")
    return value


def _positive_int(value):
    n = int(value)
    if n < 1:
        raise ValueError("must be >= 1")
    return n


def _non_negative_int(value):
    n = int(value)
    if n < 0:
        raise ValueError("must be >= 0")
    return n


def _positive_float(value):
    x = float(value)
    if not x > 0:
        raise ValueError("must be > 0")
    return x


# key -> (parser, default)
SCHEMA = {
    "dataset.root": (str, "data"),
    "train.epochs": (_positive_int, 50),
    "train.batch_size": (_positive_int, 4),
    "train.seed": (int, 0),
    "fusion.mapper": (_mapper, "variance_softmax"),
    "fusion.ttt_steps": (_non_negative_int, 5),
    "fusion.ttt_lr": (_positive_float, 1e-5),
    "eval.test_count": (_positive_int, 30),
    "eval.repeats": (_positive_int, 3),
}


@dataclass
class RunConfig:
    values: dict
    explicit: set = field(default_factory=set)
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def dataset_root(self):
        root = Path(self.values["dataset.root"])
        return root if root.is_absolute() else self.base_dir / root

    def describe(self):
        """One line per key; keys not set in the file are marked as defaults."""
        lines = []
        for key in SCHEMA:
            tag = "" if key in self.explicit else "  (default)"
            lines.append(f"{key} = {self.values[key]}{tag}")
        return lines


def parse_config(text, base_dir="."):
    values = {k: default for k, (_, default) in SCHEMA.items()}
    explicit = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in explicit:
            raise ConfigError(f"key {key!r} is set twice", lineno)
        if not value:
            raise ConfigError(f"key {key!r} has no value", lineno)
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value {value!r} for {key}: {exc}", lineno) from None
        explicit.add(key)
    return RunConfig(values, explicit, Path(base_dir))


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8 ({exc})") from None
    return parse_config(text, base_dir=path.parent)
