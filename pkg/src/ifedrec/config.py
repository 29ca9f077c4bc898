"""Training configuration shared by the client, server and orchestrator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from .exceptions import ConfigError
from .model import normalize_variant

# Alignment coefficient picked per variant when ``lam`` is left unset.
DEFAULT_LAMBDA = {"ncf": 1.0, "pfedrec": 10.0}


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "ncf"
    dim: int = 200
    rounds: int = 100
    client_ratio: float = 1.0
    server_epochs: int = 1
    local_epochs: int = 1
    batch_size: int = 256
    server_lr: float = 0.01
    lr_predictor: float = 0.01
    lr_item: float = 1.0
    lam: Optional[float] = None
    ldp_scale: float = 0.0
    neg_ratio: int = 5
    eval_every: int = 10
    ks: tuple = (20, 50, 100)
    select_k: int = 20
    ablation: str = "none"
    meta_batch_size: int = 0
    idcg_at_k: bool = False
    embedding_std: float = 0.1
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        object.__setattr__(self, "ablation", str(self.ablation).lower().replace("_", "-"))
        self.validate()

    def validate(self):
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        if self.rounds < 0:
            raise ConfigError("rounds must be non-negative")
        if not 0 < self.client_ratio <= 1:
            raise ConfigError(f"client_ratio must lie in (0, 1], got {self.client_ratio}")
        for name in ("server_epochs", "local_epochs", "batch_size", "neg_ratio", "eval_every", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("server_lr", "lr_predictor", "lr_item"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.lam is not None and not self.lam >= 0:
            raise ConfigError("lam must be non-negative")
        if not self.ldp_scale >= 0:
            raise ConfigError("ldp_scale must be non-negative")
        if self.ablation not in ("none", "no-iram"):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be positive integers")
        if self.meta_batch_size < 0:
            raise ConfigError("meta_batch_size must be >= 0")

    @property
    def effective_lam(self) -> float:
        if self.ablation == "no-iram":
            return 0.0
        return DEFAULT_LAMBDA[self.variant] if self.lam is None else float(self.lam)

    @property
    def trains_meta_network(self) -> bool:
        return self.ablation != "no-iram"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ks"] = list(self.ks)
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown training parameter(s): {', '.join(sorted(unknown))}")
        return cls(**values)

    def replace(self, **changes) -> "TrainConfig":
        known = {f.name for f in fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise ConfigError(f"unknown training parameter(s): {', '.join(sorted(unknown))}")
        return replace(self, **changes)

    def digest(self) -> str:
        """Stable hash of every setting except the worker count."""
        d = self.to_dict()
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]
