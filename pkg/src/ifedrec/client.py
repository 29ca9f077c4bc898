"""Local client training: BCE on sampled negatives plus the alignment
penalty, optimised by alternating SGD on (user embedding, predictor) and the
local item table, with optional Laplace noise on the upload.

A client only ever sees its own warm interactions (as row indices into the
warm item table), the broadcast global item table and the broadcast warm
attribute representations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .config import TrainConfig
from .data import draw_negatives
from .exceptions import DimensionError, DomainError, TrainingError
from .model import ClientModel, score_backward, predict_logits
from .nn import bce_with_logits, laplace_sample, mse_loss_and_grad, sgd_step


@dataclass
class ClientState:
    user: int
    model: ClientModel
    positives: np.ndarray  # warm-table row indices of the user's interactions
    num_warm: int
    rng: np.random.Generator = field(repr=False, default_factory=np.random.default_rng)

    def __post_init__(self):
        self.positives = np.unique(np.asarray(self.positives, dtype=np.int64))
        if len(self.positives) and (self.positives[0] < 0 or self.positives[-1] >= self.num_warm):
            raise DimensionError(f"client {self.user} has positives outside the warm table")

    def negative_pool(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.num_warm), self.positives)


@dataclass
class LocalUpdateReport:
    user: int
    item_embedding: np.ndarray
    rec_loss: List[float]
    alignment: List[float]
    batches: int
    skipped_bce: bool = False

    def epoch_losses(self, epochs) -> np.ndarray:
        """Mean recommendation loss per local epoch."""
        if not self.rec_loss:
            return np.zeros(0)
        return np.asarray(self.rec_loss).reshape(epochs, -1).mean(axis=1)


@dataclass
class LocalLoss:
    total: float
    bce: float
    penalty: float
    grads: Dict[str, np.ndarray]


def alignment_penalty(item_embedding, representation):
    """Mean squared distance between local item rows and their attribute
    representations; the gradient is w.r.t. the item rows only."""
    p = np.asarray(item_embedding, dtype=np.float64)
    r = np.asarray(representation, dtype=np.float64)
    if p.shape != r.shape:
        raise DimensionError(f"item embedding {p.shape} vs representation {r.shape}")
    return mse_loss_and_grad(p, r)


def local_loss(state: ClientState, rows, labels, r_warm, lam, group="all") -> LocalLoss:
    """Total local loss on one batch and its gradients.

    ``rows`` index the warm table; ``labels`` are 1 for positives and 0 for
    sampled negatives. ``group`` restricts which gradients are assembled:
    ``"predictor"`` (user embedding and predictor), ``"item"`` (local item
    table) or ``"all"``.
    """
    if lam < 0:
        raise DomainError("alignment coefficient must be non-negative")
    model = state.model
    p = model.item_embedding
    rows = np.asarray(rows, dtype=np.int64)
    grads: Dict[str, np.ndarray] = {}
    bce = 0.0
    g_rows = None
    if len(rows):
        item_rows = p[rows]
        bce, g_logit = bce_with_logits(predict_logits(model, item_rows), labels)
        pred_grads, g_q, g_rows = score_backward(model, item_rows, g_logit)
        if group in ("all", "predictor"):
            for k, v in pred_grads.items():
                grads[f"predictor.{k}"] = v
            if g_q is not None:
                grads["user_embedding"] = g_q
    penalty = 0.0
    if group in ("all", "item"):
        g_p = np.zeros_like(p)
        if g_rows is not None:
            np.add.at(g_p, rows, g_rows)
        if lam > 0:
            penalty, g_align = alignment_penalty(p, r_warm)
            g_p += lam * g_align
        grads["item_embedding"] = g_p
    elif lam > 0:
        penalty = alignment_penalty(p, r_warm)[0]
    total = bce + lam * penalty
    if not np.isfinite(total):
        raise TrainingError("non-finite local loss", client=state.user)
    return LocalLoss(total, bce, penalty, grads)


def _apply(model: ClientModel, grads, lr, client):
    try:
        if "user_embedding" in grads:
            model.user_embedding = sgd_step(
                {"user_embedding": model.user_embedding}, grads, lr)["user_embedding"]
        pred = {k[len("predictor."):]: v for k, v in grads.items() if k.startswith("predictor.")}
        if pred:
            model.predictor = sgd_step(model.predictor, pred, lr)
        if "item_embedding" in grads:
            model.item_embedding = sgd_step(
                {"item_embedding": model.item_embedding}, grads, lr)["item_embedding"]
    except TrainingError as exc:
        raise TrainingError(str(exc), client=client) from exc


def apply_ldp(item_embedding, scale, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. zero-mean Laplace noise of the given scale."""
    p = np.asarray(item_embedding, dtype=np.float64)
    if not scale >= 0:
        raise DomainError(f"noise scale must be non-negative, got {scale}")
    if scale == 0:
        return p.copy()
    return p + laplace_sample(rng, scale, p.shape)


def client_update(state: ClientState, global_p, r_warm, config: TrainConfig) -> LocalUpdateReport:
    """One round of local training; returns the (possibly noised) item table.

    ``state`` keeps its user embedding and predictor for the next round.
    """
    global_p = np.asarray(global_p, dtype=np.float64)
    r_warm = np.asarray(r_warm, dtype=np.float64)
    if global_p.shape != (state.num_warm, state.model.dim):
        raise DimensionError(
            f"global item table {global_p.shape} does not match ({state.num_warm}, {state.model.dim})"
        )
    if r_warm.shape != global_p.shape:
        raise DimensionError(f"warm representations {r_warm.shape} vs item table {global_p.shape}")
    model = state.model
    model.item_embedding = global_p.copy()
    lam = config.effective_lam
    rng = state.rng

    negatives = draw_negatives(state.negative_pool(), len(state.positives), config.neg_ratio, rng)
    skip_bce = len(state.positives) == 0 or len(negatives) == 0
    if skip_bce:
        batches = [(np.zeros(0, dtype=np.int64), np.zeros(0))]
    else:
        rows = np.concatenate([state.positives, negatives])
        labels = np.concatenate([np.ones(len(state.positives)), np.zeros(len(negatives))])
        order = rng.permutation(len(rows))
        rows, labels = rows[order], labels[order]
        batches = [(rows[i:i + config.batch_size], labels[i:i + config.batch_size])
                   for i in range(0, len(rows), config.batch_size)]

    rec_trace, align_trace = [], []
    for _ in range(config.local_epochs):
        for b_rows, b_labels in batches:
            if len(b_rows):
                step = local_loss(state, b_rows, b_labels, r_warm, lam, group="predictor")
                rec_trace.append(step.bce)
                _apply(model, step.grads, config.lr_predictor, state.user)
            step = local_loss(state, b_rows, b_labels, r_warm, lam, group="item")
            align_trace.append(step.penalty)
            _apply(model, step.grads, config.lr_item, state.user)

    upload = apply_ldp(model.item_embedding, config.ldp_scale, rng)
    model.item_embedding = None
    return LocalUpdateReport(
        user=state.user,
        item_embedding=upload,
        rec_loss=rec_trace,
        alignment=align_trace,
        batches=len(batches) * config.local_epochs,
        skipped_bce=skip_bce,
    )
