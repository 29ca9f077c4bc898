"""Top-k ranking metrics with binary relevance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence


from .exceptions import EvaluationError, IntegrityError


def _check(ranked, relevant, k):
    ranked = list(ranked)
    if len(set(ranked)) != len(ranked):
        raise IntegrityError("ranked list contains duplicate ids")
    if not relevant:
        raise EvaluationError("relevant set is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    return ranked


def _hits(ranked, relevant, k):
    return sum(1 for i in ranked[:k] if i in relevant)


def recall_at_k(ranked, relevant, k) -> float:
    ranked = _check(ranked, relevant, k)
    return _hits(ranked, relevant, k) / len(relevant)


def precision_at_k(ranked, relevant, k) -> float:
    ranked = _check(ranked, relevant, k)
    return _hits(ranked, relevant, k) / k


def ndcg_at_k(ranked, relevant, k, idcg_at_k=False) -> float:
    """Binary-relevance NDCG with a log2(rank + 1) discount.

    The ideal DCG counts ``min(k, |relevant|)`` hits; ``idcg_at_k`` switches
    to counting ``k`` ideal positions.
    """
    ranked = _check(ranked, relevant, k)
    dcg = sum(1.0 / math.log2(i + 2) for i, item in enumerate(ranked[:k]) if item in relevant)
    n_ideal = k if idcg_at_k else min(k, len(relevant))
    idcg = sum(1.0 / math.log2(i + 2) for i in range(n_ideal))
    return dcg / idcg


@dataclass
class MetricsReport:
    ks: tuple
    recall: Dict[int, float]
    precision: Dict[int, float]
    ndcg: Dict[int, float]
    num_users: int

    def as_rows(self):
        """One ``{k, recall, precision, ndcg}`` dict per cut-off."""
        return [
            {"k": k, "recall": self.recall[k], "precision": self.precision[k], "ndcg": self.ndcg[k]}
            for k in self.ks
        ]

    def to_dict(self):
        return {"ks": list(self.ks), "num_users": self.num_users, "metrics": self.as_rows()}


def evaluate_users(rankings: Mapping[int, Sequence[int]], relevants: Mapping[int, Iterable[int]],
                   ks=(20, 50, 100), idcg_at_k=False) -> MetricsReport:
    """Average per-user metrics over the users with at least one relevant item."""
    if set(rankings) != set(relevants):
        raise EvaluationError("rankings and relevance sets cover different users")
    ks = tuple(int(k) for k in ks)
    sums = {name: {k: 0.0 for k in ks} for name in ("recall", "precision", "ndcg")}
    n = 0
    for user in sorted(rankings):
        rel = frozenset(relevants[user])
        if not rel:
            continue
        ranked = list(rankings[user])
        n += 1
        for k in ks:
            sums["recall"][k] += recall_at_k(ranked, rel, k)
            sums["precision"][k] += precision_at_k(ranked, rel, k)
            sums["ndcg"][k] += ndcg_at_k(ranked, rel, k, idcg_at_k)
    if n == 0:
        raise EvaluationError("no user has a relevant item to evaluate against")
    means = {name: {k: v / n for k, v in d.items()} for name, d in sums.items()}
    return MetricsReport(ks, means["recall"], means["precision"], means["ndcg"], n)


def random_recall(k, num_candidates) -> float:
    """Expected Recall@k of a uniformly random ranking over the candidates."""
    return min(k, num_candidates) / num_candidates
