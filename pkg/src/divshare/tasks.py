"""Turn the ``dataset`` block of a config into per-node objectives and an evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from . import data
from .core import ConfigError, data_stream
from .learn import MatrixFactorization, Objective, Quadratic, Softmax

DATASET_KINDS: dict[str, dict[str, Any]] = {
    "quadratic": {"m": 10, "d": 20, "noise": 0.1},
    "movielens": {"path": None, "rank": 16, "reg": 0.01, "partition": "user"},
    "synthetic_mf": {
        "users": 320,
        "items": 200,
        "true_rank": 4,
        "per_user": 40,
        "noise": 0.5,
        "rank": 16,
        "reg": 0.01,
        "partition": "user",
    },
    "classification": {
        "samples": 4000,
        "features": 10,
        "classes": 4,
        "separation": 2.0,
        "shards_per_node": 2,
        "reg": 1e-4,
    },
}

# metric name -> whether reaching the target means going below (True) or above it
METRIC_DECREASING = {
    "test_mse": True,
    "train_loss": True,
    "suboptimality": True,
    "grad_norm": True,
    "test_accuracy": False,
    "node_test_accuracy": False,
}


@dataclass
class Task:
    kind: str
    objectives: list[Objective]
    dim: int
    evaluate: Callable[[np.ndarray], dict[str, float]]
    primary_metric: str
    init_scale: float | None = None  # overrides the config's init_scale when set
    extras: dict[str, Any] = field(default_factory=dict)

    def evaluate_nodes(self, models: np.ndarray) -> dict[str, float]:
        """Metrics that need every node's model rather than the mean model."""
        if self.kind != "classification":
            return {}
        accs = [self.evaluate(m)["test_accuracy"] for m in models]
        return {"node_test_accuracy": float(np.mean(accs))}


def dataset_params(block: Mapping[str, Any]) -> dict[str, Any]:
    kind = block["kind"]
    if kind not in DATASET_KINDS:
        raise ConfigError("dataset.kind", f"unknown dataset kind {kind!r}")
    params = dict(DATASET_KINDS[kind])
    for key, value in block.items():
        if key == "kind":
            continue
        if key not in params:
            raise ConfigError(f"dataset.{key}", f"unknown parameter for dataset kind {kind!r}")
        params[key] = value
    return params


def build_task(cfg) -> Task:
    """Materialize the dataset and objectives described by ``cfg.dataset``.

    All randomness comes from the partitioning stream, so every protocol run
    with the same seed sees identical data, splits and partitions.
    """
    params = dataset_params(cfg.dataset)
    kind = cfg.dataset["kind"]
    rng = data_stream(cfg)
    if kind == "quadratic":
        return _quadratic_task(cfg, params, rng)
    if kind in ("movielens", "synthetic_mf"):
        return _mf_task(cfg, kind, params, rng)
    return _classification_task(cfg, params, rng)


def _quadratic_task(cfg, params, rng) -> Task:
    problem = data.synth_quadratic(cfg.n, params["d"], params["m"], rng, noise=params["noise"])
    objectives = [Quadratic(A, b) for A, b in zip(problem.A, problem.b)]
    f_star = problem.optimum

    def evaluate(x):
        value = problem.value(x)
        return {
            "train_loss": value,
            "suboptimality": value - f_star,
            "grad_norm": float(np.linalg.norm(problem.gradient(x))),
        }

    return Task("quadratic", objectives, params["d"], evaluate, "suboptimality", init_scale=0.0,
                extras={"problem": problem})


def _mf_task(cfg, kind, params, rng) -> Task:
    if kind == "movielens":
        if params["path"] is None:
            raise ConfigError("dataset.path", "movielens needs the path of u.data")
        ds = data.load_movielens(params["path"], rng)
    else:
        ds = data.synth_ratings(
            params["users"], params["items"], rng,
            rank=params["true_rank"], per_user=params["per_user"], noise=params["noise"],
        )
    if params["partition"] == "user":
        parts = data.partition_by_user(ds, cfg.n, rng)
    elif params["partition"] == "random":
        parts = data.partition_random(ds, cfg.n, rng)
    else:
        raise ConfigError("dataset.partition", "must be 'user' or 'random'")
    mean = ds.train_mean()
    centered = ds.ratings - mean
    objectives = [
        MatrixFactorization(ds.users[p.samples], ds.items[p.samples], centered[p.samples],
                            ds.n_users, ds.n_items, rank=params["rank"], reg=params["reg"])
        for p in parts
    ]
    test = ds.test
    scorer = objectives[0]

    def evaluate(x):
        pred = mean + scorer.predict(x, ds.users[test], ds.items[test])
        return {"test_mse": float(np.mean((ds.ratings[test] - pred) ** 2))}

    return Task(kind, objectives, objectives[0].dim, evaluate, "test_mse",
                extras={"dataset": ds, "partition": parts})


def _classification_task(cfg, params, rng) -> Task:
    ds = data.synth_classification(params["samples"], params["features"], params["classes"], rng,
                                   separation=params["separation"])
    train = ds.train
    parts = data.partition_shards(ds.y[train], cfg.n, params["shards_per_node"], rng)
    objectives = [Softmax(ds.X[train[p.samples]], ds.y[train[p.samples]], ds.n_classes, reg=params["reg"])
                  for p in parts]
    test = ds.test
    scorer = objectives[0]

    def evaluate(x):
        pred = scorer.predict(x, ds.X[test])
        return {"test_accuracy": float(np.mean(pred == ds.y[test])), "train_loss": float(
            np.mean([o.loss(x, o.full_batch()) for o in objectives]))}

    return Task("classification", objectives, objectives[0].dim, evaluate, "test_accuracy",
                extras={"dataset": ds, "partition": parts})
