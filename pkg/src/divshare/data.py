"""Dataset ingestion, synthetic generators and heterogeneous partitioning."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, DegenerateError, EmptyDatasetError, ParseError


@dataclass(frozen=True)
class RatingsDataset:
    """Ratings triples with a fixed train/test membership mask."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    n_users: int
    n_items: int
    is_test: np.ndarray

    def __len__(self):
        return len(self.ratings)

    @property
    def train(self) -> np.ndarray:
        return np.flatnonzero(~self.is_test)

    @property
    def test(self) -> np.ndarray:
        return np.flatnonzero(self.is_test)

    def train_mean(self) -> float:
        return float(self.ratings[~self.is_test].mean())


@dataclass(frozen=True)
class LocalDataset:
    node: int
    samples: np.ndarray  # indices into the global sample arrays

    def __len__(self):
        return len(self.samples)


def _split(n: int, test_fraction: float, rng: np.random.Generator) -> np.ndarray:
    is_test = np.zeros(n, dtype=bool)
    is_test[rng.permutation(n)[: int(round(test_fraction * n))]] = True
    return is_test


def load_movielens(path, rng: np.random.Generator | None = None, test_fraction: float = 0.1) -> RatingsDataset:
    """Parse a MovieLens ``u.data`` file (user, item, rating, timestamp; tab separated).

    Ids in the file are 1-based and are shifted to 0-based. The train/test
    split is drawn from ``rng``, which should be the partitioning stream.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"MovieLens ratings file not found: {path}")
    rows = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
            try:
                user, item, rating = int(parts[0]), int(parts[1]), float(parts[2])
                int(parts[3])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not 1 <= rating <= 5:
                raise ParseError(f"rating {rating} outside [1, 5]", lineno)
            if user < 1 or item < 1:
                raise ParseError("user and item ids are 1-based", lineno)
            if (user, item) in seen:
                raise ParseError(f"duplicate rating for user {user}, item {item}", lineno)
            seen.add((user, item))
            rows.append((user - 1, item - 1, rating))
    if not rows:
        raise EmptyDatasetError(f"no ratings in {path}")
    arr = np.array(rows)
    users, items = arr[:, 0].astype(np.intp), arr[:, 1].astype(np.intp)
    rng = rng if rng is not None else np.random.default_rng(0)
    return RatingsDataset(
        users=users,
        items=items,
        ratings=arr[:, 2],
        n_users=int(users.max()) + 1,
        n_items=int(items.max()) + 1,
        is_test=_split(len(rows), test_fraction, rng),
    )


def synth_ratings(
    n_users: int,
    n_items: int,
    rng: np.random.Generator,
    rank: int = 4,
    per_user: int = 40,
    noise: float = 0.5,
    test_fraction: float = 0.1,
) -> RatingsDataset:
    """Low-rank integer ratings in [1, 5], a stand-in for MovieLens at desk scale."""
    per_user = min(per_user, n_items)
    P = rng.normal(0.0, 1.0, size=(n_users, rank)) / rank**0.25
    Q = rng.normal(0.0, 1.0, size=(n_items, rank)) / rank**0.25
    user_bias = rng.normal(0.0, 0.3, size=n_users)
    item_bias = rng.normal(0.0, 0.5, size=n_items)
    users = np.repeat(np.arange(n_users), per_user)
    items = np.concatenate([rng.choice(n_items, per_user, replace=False) for _ in range(n_users)])
    raw = 3.5 + user_bias[users] + item_bias[items] + np.einsum("ij,ij->i", P[users], Q[items])
    raw += rng.normal(0.0, noise, size=raw.size)
    ratings = np.clip(np.rint(raw), 1, 5)
    return RatingsDataset(users, items, ratings, n_users, n_items, _split(len(ratings), test_fraction, rng))


def partition_shards(labels, n: int, shards_per_node: int, rng: np.random.Generator) -> list[LocalDataset]:
    """Label-sorted shard partitioning.

    Samples are sorted by label (stable), the remainder that does not fill
    ``n * shards_per_node`` equal shards is dropped from the tail, and shards
    are dealt to nodes uniformly at random.
    """
    if shards_per_node < 1:
        raise ConfigError("shards_per_node", "must be >= 1")
    labels = np.asarray(labels)
    n_shards = n * shards_per_node
    shard_size = len(labels) // n_shards
    if shard_size == 0:
        raise ConfigError("shards_per_node", f"{n_shards} shards requested for {len(labels)} samples")
    order = np.argsort(labels, kind="stable")[: n_shards * shard_size]
    shards = order.reshape(n_shards, shard_size)
    assignment = rng.permutation(n_shards).reshape(n, shards_per_node)
    return [LocalDataset(i, np.sort(shards[assignment[i]].ravel())) for i in range(n)]


def partition_by_user(ds: RatingsDataset, n: int, rng: np.random.Generator) -> list[LocalDataset]:
    """Deal shuffled users round-robin; a node gets every train rating of its users."""
    if n > ds.n_users:
        raise ConfigError("n", f"cannot split {ds.n_users} users across {n} nodes")
    owner = np.empty(ds.n_users, dtype=np.intp)
    owner[rng.permutation(ds.n_users)] = np.arange(ds.n_users) % n
    train = ds.train
    node_of = owner[ds.users[train]]
    return [LocalDataset(i, train[node_of == i]) for i in range(n)]


def partition_random(ds: RatingsDataset, n: int, rng: np.random.Generator) -> list[LocalDataset]:
    """IID alternative: train ratings shuffled and dealt round-robin."""
    train = rng.permutation(ds.train)
    return [LocalDataset(i, np.sort(train[i::n])) for i in range(n)]


@dataclass(frozen=True)
class QuadraticObjective:
    """Per-node least-squares data and the minimizer of the summed objective."""

    A: list[np.ndarray]
    b: list[np.ndarray]
    x_star: np.ndarray
    x_true: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return sum(0.5 * float(np.sum((A @ x - b) ** 2)) for A, b in zip(self.A, self.b))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return sum(A.T @ (A @ x - b) for A, b in zip(self.A, self.b))

    @property
    def optimum(self) -> float:
        return self.value(self.x_star)


def synth_quadratic(
    n: int,
    d: int,
    m: int,
    rng: np.random.Generator,
    noise: float = 0.1,
    max_tries: int = 5,
) -> QuadraticObjective:
    """Random least-squares problem split across ``n`` nodes, ``m`` rows each.

    ``x*`` solves the normal equations of ``sum_i 0.5 * |A_i x - b_i|**2``.
    """
    for _ in range(max_tries):
        A = [rng.standard_normal((m, d)) for _ in range(n)]
        gram = sum(a.T @ a for a in A)
        if np.linalg.matrix_rank(gram) < d or np.linalg.cond(gram) > 1e12:
            continue
        x_true = rng.standard_normal(d)
        b = [a @ x_true + noise * rng.standard_normal(m) for a in A]
        x_star = np.linalg.solve(gram, sum(a.T @ bi for a, bi in zip(A, b)))
        return QuadraticObjective(A, b, x_star, x_true)
    raise DegenerateError(f"normal matrix singular after {max_tries} draws (n*m={n * m}, d={d})")


@dataclass(frozen=True)
class ClassificationData:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    is_test: np.ndarray

    @property
    def train(self) -> np.ndarray:
        return np.flatnonzero(~self.is_test)

    @property
    def test(self) -> np.ndarray:
        return np.flatnonzero(self.is_test)


def synth_classification(
    n_samples: int,
    n_features: int,
    n_classes: int,
    rng: np.random.Generator,
    separation: float = 2.0,
    test_fraction: float = 0.1,
) -> ClassificationData:
    """Gaussian blobs, one per class, with unit-variance features."""
    centers = separation * rng.standard_normal((n_classes, n_features)) / np.sqrt(n_features)
    y = rng.integers(0, n_classes, size=n_samples)
    X = centers[y] + rng.standard_normal((n_samples, n_features))
    return ClassificationData(X, y, n_classes, _split(n_samples, test_fraction, rng))
