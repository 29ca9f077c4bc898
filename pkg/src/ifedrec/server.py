"""Server side: client sampling, averaging of uploaded item tables, and
training of the meta attribute network against the global item table.

No function here accepts interaction records; the server only sees item
attributes and uploaded item tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Mapping, Sequence, Tuple, Union

import numpy as np

from .exceptions import AggregationError, ConfigError, DimensionError, TrainingError
from .model import MetaAttributeNetwork, attribute_representation
from .nn import check_matrix, mlp_backward, mse_loss_and_grad, sgd_step


@dataclass
class ServerState:
    item_embedding: np.ndarray  # global warm item table, (m, d)
    meta_net: MetaAttributeNetwork
    round: int = 0
    rng: np.random.Generator = field(repr=False, default_factory=np.random.default_rng)

    def __post_init__(self):
        self.item_embedding = check_matrix(self.item_embedding, "global item embedding",
                                           cols=self.meta_net.dim)


def init_server(num_warm, dim, meta_net: MetaAttributeNetwork, rng: np.random.Generator,
                embedding_std=0.1) -> ServerState:
    p = rng.normal(0.0, embedding_std, size=(num_warm, dim))
    return ServerState(p, meta_net, 0, rng)


def sample_clients(n, ratio, rng: np.random.Generator) -> np.ndarray:
    """ceil(ratio * n) distinct client ids, uniformly without replacement,
    returned in ascending order."""
    if not 0 < ratio <= 1:
        raise ConfigError(f"client sampling ratio must lie in (0, 1], got {ratio}")
    # guard against 0.1 * 5551 = 555.1000000000001 style round-up
    k = min(n, int(math.ceil(round(ratio * n, 9))))
    if k == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


Uploads = Union[Sequence[np.ndarray], Mapping[int, np.ndarray]]


def aggregate(uploads: Uploads) -> np.ndarray:
    """Element-wise mean of the uploads.

    A mapping is reduced in ascending client-id order, a sequence in the
    order given, so the result is bit-reproducible.
    """
    if isinstance(uploads, Mapping):
        items = [uploads[k] for k in sorted(uploads)]
    else:
        items = list(uploads)
    if not items:
        raise AggregationError("no uploads to aggregate")
    first = np.asarray(items[0], dtype=np.float64)
    total = first.copy()
    for arr in items[1:]:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != first.shape:
            raise DimensionError(f"upload shape {arr.shape} differs from {first.shape}")
        total += arr
    return total / len(items)


def meta_loss(net: MetaAttributeNetwork, warm_attributes, target) -> float:
    return mse_loss_and_grad(attribute_representation(net, warm_attributes), target)[0]


def train_meta_network(state: ServerState, warm_attributes, epochs=1, lr=0.01,
                       batch_size=0, rng=None) -> Tuple[MetaAttributeNetwork, List[float]]:
    """Gradient steps of the MSE between ``M(x_v)`` and the global item table.

    Full-batch by default (``batch_size=0``); the item table is never
    modified. Returns the new network and the per-epoch loss measured before
    each epoch's update.
    """
    x = check_matrix(warm_attributes, "warm attributes", cols=state.meta_net.attr_dim)
    target = state.item_embedding
    if x.shape[0] != target.shape[0]:
        raise DimensionError(f"{x.shape[0]} attribute rows for {target.shape[0]} warm items")
    if not lr > 0:
        raise ConfigError("meta network learning rate must be positive")
    params = state.meta_net.params
    m = x.shape[0]
    trace = []
    for epoch in range(epochs):
        if batch_size and batch_size < m:
            order = (rng if rng is not None else state.rng).permutation(m)
            chunks = [order[i:i + batch_size] for i in range(0, m, batch_size)]
        else:
            chunks = [slice(None)]
        epoch_loss = None
        for idx in chunks:
            xb, tb = x[idx], target[idx]
            out = attribute_representation(MetaAttributeNetwork(params), xb)
            loss, g = mse_loss_and_grad(out, tb)
            if not np.isfinite(loss):
                raise TrainingError("non-finite meta network loss", epoch=epoch)
            if epoch_loss is None:
                epoch_loss = loss
            grads, _ = mlp_backward(params, xb, g, wrt_logits=True)
            try:
                params = sgd_step(params, grads, lr)
            except TrainingError as exc:
                raise TrainingError(str(exc), epoch=epoch) from exc
        trace.append(float(epoch_loss))
    return MetaAttributeNetwork(params), trace


def cold_representations(state: ServerState, cold_attributes) -> np.ndarray:
    """Attribute representations for items with no interaction history."""
    return attribute_representation(state.meta_net, cold_attributes)
