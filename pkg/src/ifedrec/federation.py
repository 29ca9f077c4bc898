"""Round-based orchestration of warm-item training and cold-item inference."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .client import ClientState, client_update
from .config import TrainConfig
from .data import Dataset
from .exceptions import ConfigError, TrainingError, UnknownIdError
from .metrics import MetricsReport, evaluate_users
from .model import (
    MetaAttributeNetwork,
    attribute_representation,
    client_from_tensors,
    client_tensors,
    init_client_model,
    init_meta_network,
    load_checkpoint,
    predict_logits,
    predictor_sizes,
    save_checkpoint,
)
from .nn import init_mlp
from .server import ServerState, aggregate, cold_representations, sample_clients, train_meta_network

log = logging.getLogger(__name__)

# spawn keys for the independent random streams of one run
_SERVER_INIT, _SAMPLING, _CLIENT, _TEMPLATE = 0, 1, 2, 3


def _rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class EvalRecord:
    round: int
    split: str
    report: MetricsReport

    def rows(self):
        return [dict(round=self.round, split=self.split, **row) for row in self.report.as_rows()]


@dataclass
class TrainedSystem:
    server: ServerState
    clients: List[ClientState]
    config: TrainConfig
    attributes: np.ndarray  # server-held attribute matrix over all items
    warm_items: np.ndarray
    history: List[EvalRecord] = field(default_factory=list)
    round_losses: List[float] = field(default_factory=list)
    best_round: Optional[int] = None

    def metric(self, name="recall", k=None, split="val"):
        """``[(round, value)]`` for one metric across the history."""
        k = k or self.config.select_k
        return [(r.round, getattr(r.report, name)[k]) for r in self.history if r.split == split]


def init_system(dataset: Dataset, config: TrainConfig) -> TrainedSystem:
    d = config.dim
    server_rng = _rng(config.seed, _SERVER_INIT)
    meta = init_meta_network(dataset.attr_dim, d, server_rng)
    server = ServerState(
        server_rng.normal(0.0, config.embedding_std, size=(dataset.num_warm, d)),
        meta,
        0,
        _rng(config.seed, _SAMPLING),
    )
    # every client starts its predictor from one shared template
    template = init_mlp(predictor_sizes(config.variant, d), _rng(config.seed, _TEMPLATE),
                        output_activation="sigmoid")
    clients = []
    for u in range(dataset.num_users):
        rng = _rng(config.seed, _CLIENT, u)
        model = init_client_model(config.variant, d, rng, predictor=template,
                                  embedding_std=config.embedding_std)
        clients.append(ClientState(u, model, dataset.warm_positives(u), dataset.num_warm, rng))
    return TrainedSystem(server, clients, config, dataset.attributes, dataset.warm_items)


def infer_cold(system: TrainedSystem, cold_ids, users=None) -> Dict[int, List[int]]:
    """Rank ``cold_ids`` for every user (or the given ``users``).

    The server maps the cold attributes once; each client scores them with
    its private predictor. Ties go to the smaller item id.
    """
    cold_ids = np.asarray(cold_ids, dtype=np.int64)
    if len(cold_ids) and (cold_ids.min() < 0 or cold_ids.max() >= len(system.attributes)):
        raise UnknownIdError("cold item id without an attribute row")
    r_cold = cold_representations(system.server, system.attributes[cold_ids])
    users = range(len(system.clients)) if users is None else users
    out = {}
    for u in users:
        if len(cold_ids) == 0:
            out[u] = []
            continue
        # ranking by logits preserves the probability order without saturation ties
        logits = predict_logits(system.clients[u].model, r_cold)
        order = np.lexsort((cold_ids, -logits))
        out[u] = cold_ids[order].tolist()
    return out


def evaluate(system: TrainedSystem, dataset: Dataset, split="test", ks=None) -> MetricsReport:
    """Cold-item metrics over users with warm history and a relevant item in ``split``."""
    items = dataset.cold_split(split)
    users = [u for u in range(dataset.num_users)
             if len(system.clients[u].positives) and dataset.relevant_items(u, items)]
    rankings = infer_cold(system, items, users)
    relevants = {u: dataset.relevant_items(u, items) for u in users}
    return evaluate_users(rankings, relevants, ks or system.config.ks, system.config.idcg_at_k)


def _snapshot(system: TrainedSystem):
    return (
        system.server.item_embedding.copy(),
        MetaAttributeNetwork(system.server.meta_net.params.copy()),
        [c.model.copy() for c in system.clients],
    )


def _restore(system: TrainedSystem, snap):
    p, meta, models = snap
    system.server.item_embedding = p
    system.server.meta_net = meta
    for c, m in zip(system.clients, models):
        c.model = m


def run_training(dataset: Dataset, config: TrainConfig,
                 callback: Optional[Callable[[TrainedSystem, EvalRecord], None]] = None
                 ) -> TrainedSystem:
    """Train on warm items for ``config.rounds`` rounds.

    Each round: fit the meta network to the round-start global table, map the
    warm attributes, sample clients, run their local updates in parallel and
    average the uploads. Validation metrics are recorded every
    ``eval_every`` rounds (and at rounds 0 and T); the returned system is
    restored to the round with the best validation Recall@``select_k``.
    """
    system = init_system(dataset, config)
    server = system.server
    x_warm = dataset.attributes[dataset.warm_items]
    has_val = len(dataset.cold_val_items) > 0
    best = (-np.inf, None)
    snap = None

    def record(t):
        nonlocal best, snap
        if not has_val:
            return
        rec = EvalRecord(t, "val", evaluate(system, dataset, "val"))
        system.history.append(rec)
        if callback is not None:
            callback(system, rec)
        score = rec.report.recall.get(config.select_k)
        if score is None:
            score = rec.report.recall[rec.report.ks[0]]
        if score > best[0]:
            best = (score, t)
            snap = _snapshot(system)

    record(0)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for t in range(1, config.rounds + 1):
            server.round = t
            if config.trains_meta_network:
                try:
                    server.meta_net, _ = train_meta_network(
                        server, x_warm, config.server_epochs, config.server_lr,
                        config.meta_batch_size)
                except TrainingError as exc:
                    raise TrainingError(str(exc), round=t) from exc
            r_warm = attribute_representation(server.meta_net, x_warm)
            selected = sample_clients(dataset.num_users, config.client_ratio, server.rng)
            global_p = server.item_embedding
            global_p.setflags(write=False)

            def work(u):
                try:
                    return client_update(system.clients[u], global_p, r_warm, config)
                except TrainingError as exc:
                    raise TrainingError(str(exc), round=t, client=int(u)) from exc

            if pool is None:
                reports = [work(u) for u in selected]
            else:
                reports = list(pool.map(work, selected))
            uploads = {rep.user: rep.item_embedding for rep in reports}
            server.item_embedding = aggregate(uploads)
            losses = [np.mean(rep.rec_loss) for rep in reports if rep.rec_loss]
            system.round_losses.append(float(np.mean(losses)) if losses else float("nan"))
            if t % config.eval_every == 0 or t == config.rounds:
                record(t)
    finally:
        if pool is not None:
            pool.shutdown()

    if snap is not None:
        system.best_round = best[1]
        if best[1] != config.rounds:
            _restore(system, snap)
    else:
        system.best_round = config.rounds
    return system


# --- sweeps -------------------------------------------------------------------

def derive_seed(seed, cell: Mapping) -> int:
    blob = json.dumps({k: cell[k] for k in sorted(cell)}, sort_keys=True, default=str)
    h = int.from_bytes(hashlib.sha256(blob.encode("utf-8")).digest()[:4], "big")
    return (int(seed) + h) % (2**31)


def sweep_cells(sweep: Mapping[str, Sequence]) -> List[Dict]:
    names = list(sweep)
    return [dict(zip(names, values)) for values in itertools.product(*(sweep[n] for n in names))]


def run_experiment_grid(dataset: Dataset, base_config: TrainConfig,
                        sweep: Optional[Mapping[str, Sequence]] = None,
                        paired_seeds=False, workers=1, on_error="raise") -> List[Dict]:
    """Train once per cell of the Cartesian product of ``sweep``.

    Cells get ``seed + hash(cell)`` as their seed unless ``paired_seeds`` is
    set or there is a single cell, in which case the base seed is used. Each
    row holds the swept values, the seed, the best round and test metrics.
    """
    sweep = dict(sweep or {})
    allowed = set(base_config.to_dict())
    for name in sweep:
        if name not in allowed or name in ("seed", "workers"):
            raise ConfigError(f"cannot sweep unknown parameter {name!r}")
    cells = sweep_cells(sweep)
    single = len(cells) == 1

    def run(cell):
        seed = base_config.seed if (paired_seeds or single) else derive_seed(base_config.seed, cell)
        row = dict(cell)
        row.update(seed=seed, config_hash=None, best_round=None)
        try:
            cfg = base_config.replace(seed=seed, **cell)
            row["config_hash"] = cfg.digest()
            system = run_training(dataset, cfg)
            row["best_round"] = system.best_round
            report = evaluate(system, dataset, "test")
            for m in report.as_rows():
                for name in ("recall", "precision", "ndcg"):
                    row[f"{name}@{m['k']}"] = m[name]
            row["status"] = "ok"
        except Exception as exc:
            if on_error == "raise":
                raise
            log.warning("sweep cell %s failed: %s", cell, exc)
            row["status"] = f"error: {exc}"
        return row

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(run, cells))
    return [run(c) for c in cells]


# --- checkpoints ----------------------------------------------------------------

def save_system(path, system: TrainedSystem):
    tensors = {"server.item_embedding": system.server.item_embedding}
    for k, v in system.server.meta_net.params.parameters().items():
        tensors[f"server.meta.{k}"] = v
    for c in system.clients:
        tensors.update(client_tensors(c.model, f"client.{c.user}"))
    meta = {
        "config": system.config.to_dict(),
        "round": system.server.round,
        "best_round": system.best_round,
        "num_clients": len(system.clients),
        "history": [dict(round=r.round, split=r.split, **r.report.to_dict()) for r in system.history],
    }
    save_checkpoint(path, tensors, meta)


def load_system(path, dataset: Dataset) -> TrainedSystem:
    """Rebuild a trained system; private positives come from ``dataset``."""
    tensors, meta = load_checkpoint(path)
    config = TrainConfig.from_dict(meta["config"])
    system = init_system(dataset, config)
    if meta["num_clients"] != len(system.clients):
        raise ConfigError("checkpoint and dataset disagree on the number of users")
    system.server.item_embedding = tensors["server.item_embedding"]
    pre = "server.meta."
    system.server.meta_net = MetaAttributeNetwork(system.server.meta_net.params.with_parameters(
        {k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre)}))
    system.server.round = meta["round"]
    for c in system.clients:
        c.model = client_from_tensors(config.variant, c.model.predictor, tensors, f"client.{c.user}")
    system.best_round = meta["best_round"]
    for h in meta["history"]:
        ks = tuple(h["ks"])
        rows = {row["k"]: row for row in h["metrics"]}
        rep = MetricsReport(ks, {k: rows[k]["recall"] for k in ks},
                            {k: rows[k]["precision"] for k in ks},
                            {k: rows[k]["ndcg"] for k in ks}, h["num_users"])
        system.history.append(EvalRecord(h["round"], h["split"], rep))
    return system
