"""Client recommendation models (NCF and PFedRec wirings), the server-side
meta attribute network, and checkpoint serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .exceptions import ConfigError, DimensionError
from .nn import MlpParams, check_matrix, init_mlp, mlp_backward, mlp_logits, sigmoid

VARIANTS = ("ncf", "pfedrec")


def normalize_variant(variant: str) -> str:
    v = str(variant).lower().replace("-", "").replace("_", "")
    aliases = {"ncf": "ncf", "ifedncf": "ncf", "pfedrec": "pfedrec", "ipfedrec": "pfedrec"}
    if v not in aliases:
        raise ConfigError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
    return aliases[v]


def predictor_sizes(variant: str, dim: int):
    variant = normalize_variant(variant)
    if variant == "ncf":
        return [2 * dim, dim, max(dim // 2, 1), 1]
    return [dim, 1]


@dataclass
class ClientModel:
    """One user's recommendation model.

    ``item_embedding`` is the local copy of the warm item table (``None``
    between rounds); ``user_embedding`` exists only for the NCF wiring.
    """

    variant: str
    predictor: MlpParams
    user_embedding: Optional[np.ndarray] = None
    item_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        dim = self.dim
        if self.predictor.in_dim != (2 * dim if self.variant == "ncf" else dim):
            raise DimensionError(
                f"{self.variant} predictor input {self.predictor.in_dim} does not match embedding dim {dim}"
            )

    @property
    def dim(self) -> int:
        if self.variant == "ncf":
            if self.user_embedding is None:
                raise DimensionError("the NCF wiring requires a user embedding")
            return len(self.user_embedding)
        return self.predictor.in_dim

    def copy(self) -> "ClientModel":
        return replace(
            self,
            predictor=self.predictor.copy(),
            user_embedding=None if self.user_embedding is None else self.user_embedding.copy(),
            item_embedding=None if self.item_embedding is None else self.item_embedding.copy(),
        )


def init_client_model(variant, dim, rng: np.random.Generator, predictor=None,
                      embedding_std=0.1) -> ClientModel:
    """Fresh client model. Pass ``predictor`` to start from a shared template."""
    variant = normalize_variant(variant)
    if predictor is None:
        predictor = init_mlp(predictor_sizes(variant, dim), rng, output_activation="sigmoid")
    q = rng.normal(0.0, embedding_std, size=dim) if variant == "ncf" else None
    return ClientModel(variant, predictor.copy(), q)


def _predictor_input(model: ClientModel, item_rows: np.ndarray) -> np.ndarray:
    if model.variant == "ncf":
        q = np.broadcast_to(model.user_embedding, (item_rows.shape[0], model.dim))
        return np.hstack([q, item_rows])
    return item_rows


def predict_logits(model: ClientModel, item_rows) -> np.ndarray:
    item_rows = np.asarray(item_rows, dtype=np.float64)
    if item_rows.ndim != 2 or item_rows.shape[1] != model.dim:
        raise DimensionError(
            f"item rows of shape {item_rows.shape} do not match embedding dim {model.dim}"
        )
    return mlp_logits(model.predictor, _predictor_input(model, item_rows))[:, 0]


def predict(model: ClientModel, item_rows) -> np.ndarray:
    """Interaction probability for each item row."""
    p = sigmoid(predict_logits(model, item_rows))
    # keep saturated sigmoids strictly inside (0, 1)
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def score_backward(model: ClientModel, item_rows, grad_logits
                   ) -> Tuple[Dict[str, np.ndarray], Optional[np.ndarray], np.ndarray]:
    """Gradients of a loss given its gradient w.r.t. the score logits.

    Returns ``(predictor_grads, user_embedding_grad, item_rows_grad)``; the
    user-embedding gradient is ``None`` for the PFedRec wiring.
    """
    item_rows = np.asarray(item_rows, dtype=np.float64)
    g = np.asarray(grad_logits, dtype=np.float64).reshape(-1, 1)
    grads, g_in = mlp_backward(model.predictor, _predictor_input(model, item_rows), g,
                               wrt_logits=True)
    if model.variant == "ncf":
        d = model.dim
        return grads, g_in[:, :d].sum(axis=0), g_in[:, d:]
    return grads, None, g_in


@dataclass
class MetaAttributeNetwork:
    params: MlpParams

    @property
    def attr_dim(self) -> int:
        return self.params.in_dim

    @property
    def dim(self) -> int:
        return self.params.out_dim


def init_meta_network(attr_dim, dim, rng: np.random.Generator) -> MetaAttributeNetwork:
    return MetaAttributeNetwork(init_mlp([attr_dim, dim], rng, output_activation="identity"))


def attribute_representation(net: MetaAttributeNetwork, attributes) -> np.ndarray:
    x = check_matrix(attributes, "attribute rows")
    if x.shape[1] != net.attr_dim:
        raise DimensionError(
            f"attribute rows of shape {x.shape} do not match network input dim {net.attr_dim}"
        )
    if x.shape[0] == 0:
        return np.zeros((0, net.dim))
    return mlp_logits(net.params, x)


# --- checkpoints ---------------------------------------------------------------

_META_KEY = "__meta__"


def save_checkpoint(path, tensors: Dict[str, np.ndarray], meta: Optional[dict] = None):
    """Write named float64 tensors (``.npy`` records, each with its own shape
    header) plus a JSON metadata blob to an uncompressed ``.npz`` archive."""
    payload = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in tensors.items()}
    if _META_KEY in payload:
        raise ValueError(f"tensor name {_META_KEY!r} is reserved")
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    payload[_META_KEY] = np.frombuffer(blob, dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        tensors = {k: z[k] for k in z.files if k != _META_KEY}
        meta = json.loads(bytes(z[_META_KEY]).decode("utf-8")) if _META_KEY in z.files else {}
    return tensors, meta


def client_tensors(model: ClientModel, prefix: str) -> Dict[str, np.ndarray]:
    out = {f"{prefix}.predictor.{k}": v for k, v in model.predictor.parameters().items()}
    if model.user_embedding is not None:
        out[f"{prefix}.user_embedding"] = model.user_embedding
    return out


def client_from_tensors(variant, template: MlpParams, tensors, prefix) -> ClientModel:
    pre = f"{prefix}.predictor."
    values = {k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre)}
    q = tensors.get(f"{prefix}.user_embedding")
    return ClientModel(variant, template.with_parameters(values), q)
