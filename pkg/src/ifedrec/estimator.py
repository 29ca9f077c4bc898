"""Scikit-learn style wrapper around the federated training loop."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import TrainConfig
from .data import Dataset
from .exceptions import DataError
from .federation import evaluate, infer_cold, load_system, run_training, save_system
from .server import cold_representations


class IFedRec(BaseEstimator):
    """Federated recommender that ranks items it never saw interactions for.

    ``fit`` takes a :class:`~ifedrec.data.Dataset` and runs the full
    round-based protocol. ``transform`` maps raw attribute rows to item
    representations through the server's meta network, and ``predict``
    returns each user's ranking of a set of cold items.

    Parameters mirror :class:`~ifedrec.config.TrainConfig`.
    """

    def __init__(self, variant="ncf", dim=200, rounds=100, client_ratio=1.0, server_epochs=1,
                 local_epochs=1, batch_size=256, server_lr=0.01, lr_predictor=0.01, lr_item=1.0,
                 lam=None, ldp_scale=0.0, neg_ratio=5, eval_every=10, ks=(20, 50, 100),
                 select_k=20, ablation="none", meta_batch_size=0, idcg_at_k=False,
                 embedding_std=0.1, workers=1, seed=0):
        self.variant = variant
        self.dim = dim
        self.rounds = rounds
        self.client_ratio = client_ratio
        self.server_epochs = server_epochs
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.server_lr = server_lr
        self.lr_predictor = lr_predictor
        self.lr_item = lr_item
        self.lam = lam
        self.ldp_scale = ldp_scale
        self.neg_ratio = neg_ratio
        self.eval_every = eval_every
        self.ks = ks
        self.select_k = select_k
        self.ablation = ablation
        self.meta_batch_size = meta_batch_size
        self.idcg_at_k = idcg_at_k
        self.embedding_std = embedding_std
        self.workers = workers
        self.seed = seed

    @classmethod
    def from_config(cls, config: TrainConfig) -> "IFedRec":
        params = config.to_dict()
        params["ks"] = tuple(params["ks"])
        return cls(**params)

    def to_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, X: Dataset, y=None, callback=None):
        if not isinstance(X, Dataset):
            raise DataError(f"fit expects a Dataset, got {type(X).__name__}")
        self.system_ = run_training(X, self.to_config(), callback=callback)
        self.n_users_ = X.num_users
        self.n_features_in_ = X.attr_dim
        self.best_round_ = self.system_.best_round
        return self

    def transform(self, X) -> np.ndarray:
        """Item representations for attribute rows ``X`` (n, attr_dim)."""
        check_is_fitted(self, "system_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        return cold_representations(self.system_.server, X)

    def predict(self, cold_ids, users=None) -> np.ndarray:
        """Ranked cold ids, one row per user (best first, ties to the smaller id)."""
        check_is_fitted(self, "system_")
        cold_ids = np.asarray(cold_ids, dtype=np.int64).ravel()
        users = list(range(self.n_users_)) if users is None else [int(u) for u in users]
        ranked = infer_cold(self.system_, cold_ids, users)
        return np.array([ranked[u] for u in users], dtype=np.int64).reshape(len(users), len(cold_ids))

    def score(self, X: Dataset, y=None, split="test", k=None) -> float:
        """Mean Recall@``k`` (``select_k`` by default) on a cold split of ``X``."""
        check_is_fitted(self, "system_")
        k = k or self.select_k
        return evaluate(self.system_, X, split, ks=(k,)).recall[k]

    def evaluate(self, X: Dataset, split="test"):
        check_is_fitted(self, "system_")
        return evaluate(self.system_, X, split)

    def save(self, path):
        check_is_fitted(self, "system_")
        save_system(path, self.system_)

    @classmethod
    def load(cls, path, dataset: Dataset) -> "IFedRec":
        system = load_system(path, dataset)
        est = cls.from_config(system.config)
        est.system_ = system
        est.n_users_ = dataset.num_users
        est.n_features_in_ = dataset.attr_dim
        est.best_round_ = system.best_round
        return est
