"""Sectioned key-value experiment files: dataset, train, sweep and output."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from .config import TrainConfig
from .data import Dataset, RatioSplit, SyntheticConfig, generate_planted, load_dataset
from .exceptions import ConfigError

SECTIONS = ("dataset", "train", "sweep", "output")
_TRAIN_DEFAULTS = TrainConfig()
_SYNTH_DEFAULTS = SyntheticConfig()


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tuple(text, cast):
    return tuple(cast(v) for v in text.replace(" ", "").split(",") if v)


def parse_value(default, text: str):
    """Parse ``text`` to the type of ``default`` (``None`` defaults parse as optional floats)."""
    text = text.strip()
    if default is None:
        return None if text.lower() in ("", "none", "null") else float(text)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        cast = type(default[0]) if default else float
        return _tuple(text, cast)
    return text


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_train_field(name, text):
    if name not in TrainConfig.__dataclass_fields__:
        raise ConfigError(f"unknown training parameter {name!r}")
    try:
        return parse_value(getattr(_TRAIN_DEFAULTS, name), text)
    except ValueError as exc:
        raise ConfigError(f"[train] {name}: {exc}") from None


@dataclass(frozen=True)
class DatasetSpec:
    """Either generator parameters (``synthetic``) or three file paths."""

    synthetic: Optional[SyntheticConfig] = None
    seed: int = 0
    interactions: Optional[str] = None
    attributes: Optional[str] = None
    split: Optional[str] = None  # split file path, or three comma-separated ratios
    num_users: Optional[int] = None

    def __post_init__(self):
        has_paths = self.interactions is not None or self.attributes is not None
        if (self.synthetic is None) == (not has_paths):
            raise ConfigError("dataset needs exactly one of synthetic parameters or file paths")
        if has_paths and (self.interactions is None or self.attributes is None or self.split is None):
            raise ConfigError("dataset paths need interactions, attributes and split")

    def split_spec(self, base: Path):
        try:
            ratios = _tuple(self.split, float)
        except ValueError:
            return base / self.split
        if len(ratios) != 3:
            raise ConfigError("split ratios need three values (warm, val, test)")
        return RatioSplit(ratios, self.seed)

    def load(self, base: Path = Path(".")) -> Dataset:
        if self.synthetic is not None:
            return generate_planted(self.synthetic, self.seed)[0]
        for p in (self.interactions, self.attributes):
            if not (base / p).exists():
                raise ConfigError(f"dataset file not found: {base / p}")
        split = self.split_spec(base)
        if isinstance(split, Path) and not split.exists():
            raise ConfigError(f"split file not found: {split}")
        return load_dataset(base / self.interactions, base / self.attributes, split, self.num_users)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: Dict[str, Tuple] = field(default_factory=dict)
    output_dir: Optional[str] = None
    paired_seeds: bool = False
    base_dir: str = "."  # where relative dataset paths resolve; not serialized

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return (self.dataset, self.train, self.sweep, self.output_dir, self.paired_seeds) == \
               (other.dataset, other.train, other.sweep, other.output_dir, other.paired_seeds)

    def load_dataset(self) -> Dataset:
        return self.dataset.load(Path(self.base_dir))

    def with_train(self, **changes) -> "ExperimentConfig":
        return replace(self, train=self.train.replace(**changes))

    # --- text form -----------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        ds = {}
        if self.dataset.synthetic is not None:
            ds["synthetic"] = "true"
            for f in fields(SyntheticConfig):
                ds[f.name] = format_value(getattr(self.dataset.synthetic, f.name))
        else:
            for name in ("interactions", "attributes", "split", "num_users"):
                if getattr(self.dataset, name) is not None:
                    ds[name] = format_value(getattr(self.dataset, name))
        ds["seed"] = str(self.dataset.seed)
        cp["dataset"] = ds
        cp["train"] = {k: format_value(v) for k, v in self.train.to_dict().items()}
        cp["sweep"] = {k: format_value(v) for k, v in self.sweep.items()}
        out = {"paired_seeds": format_value(self.paired_seeds)}
        if self.output_dir is not None:
            out["dir"] = self.output_dir
        cp["output"] = out
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base_dir=".") -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        unknown = set(cp.sections()) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        if not cp.has_section("dataset"):
            raise ConfigError("config needs a [dataset] section")
        ds = dict(cp["dataset"])
        try:
            seed = int(ds.pop("seed", "0"))
            synthetic = _parse_bool(ds.pop("synthetic", "false"))
            if synthetic:
                values = {}
                for f in fields(SyntheticConfig):
                    if f.name in ds:
                        values[f.name] = parse_value(getattr(_SYNTH_DEFAULTS, f.name), ds.pop(f.name))
                if ds:
                    raise ConfigError(f"unknown [dataset] key(s): {', '.join(sorted(ds))}")
                spec = DatasetSpec(SyntheticConfig(**values), seed)
            else:
                num_users = ds.pop("num_users", None)
                spec = DatasetSpec(None, seed, ds.pop("interactions", None), ds.pop("attributes", None),
                                   ds.pop("split", None), int(num_users) if num_users else None)
                if ds:
                    raise ConfigError(f"unknown [dataset] key(s): {', '.join(sorted(ds))}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[dataset]: {exc}") from None

        train = {}
        if cp.has_section("train"):
            for k, v in cp["train"].items():
                train[k] = parse_train_field(k, v)
        sweep = {}
        if cp.has_section("sweep"):
            for k, v in cp["sweep"].items():
                if k in ("seed", "workers"):
                    raise ConfigError(f"cannot sweep {k!r}")
                if k not in TrainConfig.__dataclass_fields__:
                    raise ConfigError(f"cannot sweep unknown parameter {k!r}")
                default = getattr(_TRAIN_DEFAULTS, k)
                if isinstance(default, tuple):
                    raise ConfigError(f"cannot sweep list-valued parameter {k!r}")
                try:
                    sweep[k] = tuple(parse_value(default, item) for item in v.split(","))
                except ValueError as exc:
                    raise ConfigError(f"[sweep] {k}: {exc}") from None
        out_dir, paired = None, False
        if cp.has_section("output"):
            out = dict(cp["output"])
            out_dir = out.pop("dir", None)
            paired = _parse_bool(out.pop("paired_seeds", "false"))
            if out:
                raise ConfigError(f"unknown [output] key(s): {', '.join(sorted(out))}")
        return cls(spec, TrainConfig(**train), sweep, out_dir, paired, str(base_dir))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_ini(text, base_dir=path.parent)

