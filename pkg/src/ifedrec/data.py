"""Datasets: file I/O, warm/cold item splits, negative sampling and a
planted-factor synthetic generator.

File formats (UTF-8 text, 0-based integer ids):

* interactions: one ``user_id<TAB>item_id`` pair per line;
* attributes: header ``num_items num_dims`` then one whitespace-separated
  row of reals per item;
* split (optional): three lines ``warm:``, ``val:``, ``test:`` each followed
  by comma-separated item ids.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple, Union

import numpy as np

from .exceptions import ConfigError, DataError, IntegrityError, ParseError, UnknownIdError


def _as_ids(ids) -> np.ndarray:
    return np.asarray(sorted(int(i) for i in ids), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable interaction + attribute data with a warm/cold item split.

    ``interactions[u]`` holds user ``u``'s sorted item ids over all items;
    only the warm part is ever used for training.
    """

    num_users: int
    attributes: np.ndarray
    warm_items: np.ndarray
    cold_val_items: np.ndarray
    cold_test_items: np.ndarray
    interactions: Tuple[np.ndarray, ...]
    warm_position: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        attrs = np.asarray(self.attributes, dtype=np.float64)
        if attrs.ndim != 2:
            raise DataError(f"attribute matrix must be 2-D, got {attrs.shape}")
        attrs.setflags(write=False)
        object.__setattr__(self, "attributes", attrs)
        for name in ("warm_items", "cold_val_items", "cold_test_items"):
            arr = _as_ids(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        inter = []
        for ids in self.interactions:
            arr = np.asarray(ids, dtype=np.int64)
            arr = np.sort(arr)
            arr.setflags(write=False)
            inter.append(arr)
        object.__setattr__(self, "interactions", tuple(inter))
        self._validate()
        pos = np.full(self.num_items, -1, dtype=np.int64)
        pos[self.warm_items] = np.arange(len(self.warm_items))
        pos.setflags(write=False)
        object.__setattr__(self, "warm_position", pos)

    def _validate(self):
        n_items = self.num_items
        if len(self.interactions) != self.num_users:
            raise IntegrityError(
                f"{len(self.interactions)} interaction lists for {self.num_users} users"
            )
        if len(self.warm_items) == 0:
            raise ConfigError("the warm item set is empty")
        groups = (self.warm_items, self.cold_val_items, self.cold_test_items)
        seen = np.zeros(n_items, dtype=bool)
        for g in groups:
            if len(g) and (g[0] < 0 or g[-1] >= n_items):
                raise IntegrityError("split references an item without an attribute row")
            if len(np.unique(g)) != len(g) or np.any(seen[g]):
                raise IntegrityError("warm/val/test item sets are not pairwise disjoint")
            seen[g] = True
        for u, ids in enumerate(self.interactions):
            if len(ids) == 0:
                continue
            if ids[0] < 0 or ids[-1] >= n_items:
                raise IntegrityError(f"user {u} interacts with an unknown item")
            if np.any(np.diff(ids) == 0):
                raise IntegrityError(f"user {u} has duplicate interactions")
            if not np.all(seen[ids]):
                raise IntegrityError(f"user {u} interacts with an item outside the split")

    @property
    def num_items(self) -> int:
        return self.attributes.shape[0]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    @property
    def num_warm(self) -> int:
        return len(self.warm_items)

    def _check_user(self, u):
        if not 0 <= u < self.num_users:
            raise UnknownIdError(f"unknown user {u}")

    def warm_interactions(self, u) -> np.ndarray:
        """Item ids of user ``u``'s warm interactions."""
        self._check_user(u)
        ids = self.interactions[u]
        return ids[self.warm_position[ids] >= 0]

    def warm_positives(self, u) -> np.ndarray:
        """Row indices into the warm block (``warm_items`` order) for user ``u``."""
        return self.warm_position[self.warm_interactions(u)]

    def cold_split(self, split) -> np.ndarray:
        if split in ("val", "validation"):
            return self.cold_val_items
        if split == "test":
            return self.cold_test_items
        raise ValueError(f"unknown cold split {split!r}")

    def relevant_items(self, u, items) -> FrozenSet[int]:
        self._check_user(u)
        return frozenset(np.intersect1d(self.interactions[u], items).tolist())

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_users == other.num_users
            and np.array_equal(self.attributes, other.attributes)
            and np.array_equal(self.warm_items, other.warm_items)
            and np.array_equal(self.cold_val_items, other.cold_val_items)
            and np.array_equal(self.cold_test_items, other.cold_test_items)
            and len(self.interactions) == len(other.interactions)
            and all(np.array_equal(a, b) for a, b in zip(self.interactions, other.interactions))
        )

    __hash__ = None


@dataclass(frozen=True)
class ExplicitSplit:
    warm: Tuple[int, ...]
    val: Tuple[int, ...] = ()
    test: Tuple[int, ...] = ()


@dataclass(frozen=True)
class RatioSplit:
    ratios: Tuple[float, float, float] = (0.8, 0.06, 0.14)
    seed: int = 0

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        if len(r) != 3 or any(x < 0 for x in r) or not math.isclose(sum(r), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {self.ratios}")
        object.__setattr__(self, "ratios", r)


SplitSpec = Union[ExplicitSplit, RatioSplit, str, os.PathLike]


def ratio_split(num_items, ratios, seed) -> ExplicitSplit:
    """Random warm/val/test split; val and test counts round down, the
    remainder goes to warm."""
    spec = RatioSplit(tuple(ratios), seed)
    n_val = int(math.floor(spec.ratios[1] * num_items + 1e-9))
    n_test = int(math.floor(spec.ratios[2] * num_items + 1e-9))
    perm = np.random.default_rng(seed).permutation(num_items)
    val = perm[:n_val]
    test = perm[n_val:n_val + n_test]
    warm = perm[n_val + n_test:]
    return ExplicitSplit(tuple(sorted(warm.tolist())), tuple(sorted(val.tolist())),
                         tuple(sorted(test.tolist())))


# --- file I/O ---------------------------------------------------------------

def _lines(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def read_interactions(path):
    pairs = []
    for no, line in enumerate(_lines(path), start=1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(path, no, "expected 'user_id<TAB>item_id'")
        try:
            u, i = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(path, no, f"non-integer id in {line!r}") from None
        if u < 0 or i < 0:
            raise ParseError(path, no, "ids must be non-negative")
        pairs.append((u, i, no))
    return pairs


def read_attributes(path) -> np.ndarray:
    lines = _lines(path)
    if not lines:
        raise ParseError(path, 1, "missing 'num_items num_dims' header")
    try:
        n, d = (int(x) for x in lines[0].split())
    except ValueError:
        raise ParseError(path, 1, "malformed header, expected 'num_items num_dims'") from None
    if len(lines) - 1 != n:
        raise ParseError(path, len(lines) + 1, f"header declares {n} rows, found {len(lines) - 1}")
    out = np.empty((n, d), dtype=np.float64)
    for row, line in enumerate(lines[1:]):
        fields = line.split()
        if len(fields) != d:
            raise ParseError(path, row + 2, f"expected {d} values, found {len(fields)}")
        try:
            out[row] = [float(x) for x in fields]
        except ValueError:
            raise ParseError(path, row + 2, "non-numeric attribute value") from None
    if not np.all(np.isfinite(out)):
        raise DataError(f"{path}: attribute matrix contains non-finite values")
    return out


def read_split(path) -> ExplicitSplit:
    groups = {}
    for no, line in enumerate(_lines(path), start=1):
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or key not in ("warm", "val", "test") or key in groups:
            raise ParseError(path, no, "expected one of 'warm:', 'val:', 'test:'")
        rest = rest.strip()
        try:
            groups[key] = tuple(int(x) for x in rest.split(",")) if rest else ()
        except ValueError:
            raise ParseError(path, no, "non-integer item id") from None
    if set(groups) != {"warm", "val", "test"}:
        raise ParseError(path, len(groups) + 1, "split file needs warm, val and test lines")
    return ExplicitSplit(groups["warm"], groups["val"], groups["test"])


def _fmt(x):
    return format(float(x), ".17g")


def write_interactions(path, dataset: Dataset):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, ids in enumerate(dataset.interactions):
            for i in ids:
                fh.write(f"{u}\t{int(i)}\n")


def write_attributes(path, attributes):
    attributes = np.asarray(attributes, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{attributes.shape[0]} {attributes.shape[1]}\n")
        for row in attributes:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")


def write_split(path, dataset: Dataset):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, ids in (("warm", dataset.warm_items), ("val", dataset.cold_val_items),
                         ("test", dataset.cold_test_items)):
            fh.write(f"{key}:" + ",".join(str(int(i)) for i in ids) + "\n")


def load_dataset(interactions_path, attributes_path, split_spec: SplitSpec,
                 num_users: Optional[int] = None) -> Dataset:
    """Read and validate a dataset.

    ``split_spec`` is an :class:`ExplicitSplit`, a :class:`RatioSplit`, or the
    path of a split file. ``num_users`` defaults to the largest user id + 1.
    """
    attributes = read_attributes(attributes_path)
    pairs = read_interactions(interactions_path)
    n_items = attributes.shape[0]
    if num_users is None:
        num_users = max((u for u, _, _ in pairs), default=-1) + 1
    per_user = [set() for _ in range(num_users)]
    for u, i, no in pairs:
        if u >= num_users:
            raise IntegrityError(f"{interactions_path}:{no}: unknown user {u}")
        if i >= n_items:
            raise IntegrityError(f"{interactions_path}:{no}: unknown item {i}")
        if i in per_user[u]:
            raise IntegrityError(f"{interactions_path}:{no}: duplicate interaction ({u}, {i})")
        per_user[u].add(i)
    if isinstance(split_spec, RatioSplit):
        split = ratio_split(n_items, split_spec.ratios, split_spec.seed)
    elif isinstance(split_spec, ExplicitSplit):
        split = split_spec
    else:
        split = read_split(split_spec)
    return Dataset(
        num_users=num_users,
        attributes=attributes,
        warm_items=split.warm,
        cold_val_items=split.val,
        cold_test_items=split.test,
        interactions=tuple(sorted(s) for s in per_user),
    )


# --- negatives ----------------------------------------------------------------

@dataclass(frozen=True)
class NegativeSampleBatch:
    user: int
    positives: np.ndarray
    negatives: np.ndarray
    exhausted: bool = False  # no uninteracted warm item was available


def uninteracted_items(dataset: Dataset, u) -> FrozenSet[int]:
    """Warm items user ``u`` never interacted with."""
    interacted = dataset.warm_interactions(u)
    return frozenset(np.setdiff1d(dataset.warm_items, interacted).tolist())


def draw_negatives(pool: np.ndarray, n_positive: int, ratio: int, rng: np.random.Generator):
    if ratio < 1:
        raise ConfigError(f"negative sampling ratio must be >= 1, got {ratio}")
    n = min(int(ratio) * int(n_positive), len(pool))
    if n == 0:
        return pool[:0].copy()
    return rng.choice(pool, size=n, replace=False)


def sample_negatives(dataset: Dataset, u, ratio, rng: np.random.Generator) -> NegativeSampleBatch:
    positives = dataset.warm_interactions(u)
    pool = np.setdiff1d(dataset.warm_items, positives)
    negatives = draw_negatives(pool, len(positives), ratio, rng)
    return NegativeSampleBatch(
        user=int(u),
        positives=positives.copy(),
        negatives=np.asarray(negatives, dtype=np.int64),
        exhausted=len(pool) == 0 and len(positives) > 0,
    )


# --- synthetic data -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 200
    n_items: int = 400
    latent_dim: int = 8
    attr_dim: int = 32
    noise: float = 0.1
    interactions_per_user: int = 20
    cold_relevant_per_user: int = 5
    split: Tuple[float, float, float] = (0.75, 0.075, 0.175)


@dataclass(frozen=True, eq=False)
class PlantedModel:
    user_factors: np.ndarray  # (n_users, k)
    item_factors: np.ndarray  # (n_items, k)
    attribute_map: np.ndarray  # (k, attr_dim)

    def scores(self) -> np.ndarray:
        return self.user_factors @ self.item_factors.T

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.user_factors, self.item_factors, self.attribute_map):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def _top(scores_row, items, q):
    q = min(q, len(items))
    if q == 0:
        return items[:0]
    order = np.lexsort((items, -scores_row[items]))
    return items[order[:q]]


def generate_planted(config: SyntheticConfig, seed) -> Tuple[Dataset, PlantedModel]:
    """Synthetic dataset whose attributes are a noisy linear image of planted
    item factors, so attribute-to-preference transfer is learnable."""
    c = config
    if c.latent_dim > c.attr_dim:
        raise ConfigError(f"latent dim {c.latent_dim} exceeds attribute dim {c.attr_dim}")
    if c.noise < 0:
        raise ConfigError("attribute noise must be non-negative")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((c.n_users, c.latent_dim))
    V = rng.standard_normal((c.n_items, c.latent_dim))
    A = rng.standard_normal((c.latent_dim, c.attr_dim)) / np.sqrt(c.latent_dim)
    X = V @ A
    if c.noise > 0:
        X = X + c.noise * rng.standard_normal(X.shape)
    split = ratio_split(c.n_items, c.split, int(rng.integers(2**63)))
    warm = np.asarray(split.warm, dtype=np.int64)
    if c.interactions_per_user > len(warm):
        raise ConfigError(
            f"{c.interactions_per_user} interactions per user but only {len(warm)} warm items"
        )
    val = np.asarray(split.val, dtype=np.int64)
    test = np.asarray(split.test, dtype=np.int64)
    S = U @ V.T
    interactions = []
    for u in range(c.n_users):
        ids = np.concatenate([
            _top(S[u], warm, c.interactions_per_user),
            _top(S[u], val, c.cold_relevant_per_user),
            _top(S[u], test, c.cold_relevant_per_user),
        ])
        interactions.append(np.sort(ids))
    ds = Dataset(
        num_users=c.n_users,
        attributes=X,
        warm_items=warm,
        cold_val_items=val,
        cold_test_items=test,
        interactions=tuple(interactions),
    )
    return ds, PlantedModel(U, V, A)


def generate_synthetic(config: SyntheticConfig = SyntheticConfig(), seed=0) -> Dataset:
    return generate_planted(config, seed)[0]
