"""Metrics over run traces, time-to-target extraction and parameter sweeps.

Sweep reports are plain CSV with a fixed column set (``SWEEP_COLUMNS``).
``final_metric_last3_mean`` is the mean of the primary metric over the last
three snapshots; ``time_to_target`` is empty when the target was never
reached.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import SWEEP_KEYS, ConfigError, DivergenceError, ValidatedConfig, derived_seed, validate_config
from .netsim import RunTrace, run_simulation
from .tasks import METRIC_DECREASING, Task, build_task

UNREACHED = math.inf


@dataclass(frozen=True)
class MetricSeries:
    metric: str
    times: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.times)

    def final(self, last: int = 3) -> float:
        """Mean of the last ``last`` values."""
        return float(np.mean(self.values[-last:]))


def evaluate_mean_model(trace: RunTrace, task: Task, metric: str | None = None) -> MetricSeries:
    """Evaluate ``metric`` on the coordinate-wise network mean at every snapshot."""
    metric = metric or task.primary_metric
    if len(trace.snapshot_times) == 0:
        raise ValueError("trace has no snapshots")
    values = []
    for mean in trace.mean_models():
        result = task.evaluate(mean)
        if metric not in result:
            raise KeyError(f"task {task.kind!r} has no metric {metric!r}; available: {sorted(result)}")
        values.append(result[metric])
    return MetricSeries(metric, np.asarray(trace.snapshot_times, dtype=float), np.asarray(values, dtype=float))


def evaluate_all(trace: RunTrace, task: Task) -> dict[str, MetricSeries]:
    """Every metric the task reports, including per-node averaged ones."""
    per_time: list[dict[str, float]] = []
    for mean, models in zip(trace.mean_models(), trace.snapshots):
        row = dict(task.evaluate(mean))
        row.update(task.evaluate_nodes(models))
        per_time.append(row)
    times = np.asarray(trace.snapshot_times, dtype=float)
    return {name: MetricSeries(name, times, np.array([row[name] for row in per_time]))
            for name in per_time[0]}


def time_to_target(series: MetricSeries, target: float, direction: str = "<=") -> float:
    """First snapshot time at which the metric reaches ``target``; ``UNREACHED`` (inf) otherwise.

    ``direction`` is ``"<="`` for losses and ``">="`` for accuracies.
    """
    if len(series) == 0:
        raise ValueError("empty metric series")
    if direction == "<=":
        hit = series.values <= target
    elif direction == ">=":
        hit = series.values >= target
    else:
        raise ValueError(f"direction must be '<=' or '>=', got {direction!r}")
    idx = np.flatnonzero(hit)
    return float(series.times[idx[0]]) if idx.size else UNREACHED


def metric_direction(metric: str) -> str:
    return "<=" if METRIC_DECREASING[metric] else ">="


METRICS_COLUMNS = ("time", "metric", "value", "protocol", "seed")


def metrics_rows(series: Mapping[str, MetricSeries], protocol: str, seed: int) -> list[dict[str, Any]]:
    rows = []
    for name in sorted(series):
        s = series[name]
        for t, v in zip(s.times, s.values):
            rows.append({"time": float(t), "metric": name, "value": float(v), "protocol": protocol, "seed": seed})
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return ""
        return repr(value)
    return str(value)


def write_csv(rows: Iterable[Mapping[str, Any]], columns: Sequence[str], path=None) -> str:
    """Render ``rows`` as CSV text (floats via ``repr`` so they parse back exactly); write to ``path`` if given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(col)) for col in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


SWEEP_COLUMNS = (
    "grid_index",
    "replicate",
    "seed",
    "protocol",
    "omega",
    "straggling_factor",
    "straggler_count",
    "metric",
    "final_metric_last3_mean",
    "target",
    "time_to_target",
    "end_time",
    "drops_total",
    "drops_mean_per_round",
    "drops_max_node_total",
    "error",
)


def expand_grid(grid: Mapping[str, Sequence]) -> list[dict[str, Any]]:
    """Cartesian product of the grid, keys in ``SWEEP_KEYS`` order, last key varying fastest."""
    if not grid:
        raise ConfigError("sweep_grid", "grid must not be empty")
    for key, values in grid.items():
        if key not in SWEEP_KEYS:
            raise ConfigError(f"sweep_grid.{key}", f"sweepable keys are {SWEEP_KEYS}")
        if isinstance(values, (str, bytes)) or not len(values):
            raise ConfigError(f"sweep_grid.{key}", "must be a non-empty list")
    keys = [k for k in SWEEP_KEYS if k in grid]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def run_point(cfg: ValidatedConfig, target: float | None = None, metric: str | None = None) -> dict[str, Any]:
    """Run one configuration and summarize it as a sweep row (without the grid bookkeeping)."""
    row: dict[str, Any] = {
        "seed": cfg.seed, "protocol": cfg.protocol, "omega": cfg.omega,
        "straggling_factor": cfg.straggling_factor, "straggler_count": cfg.straggler_count,
        "target": target,
    }
    task = build_task(cfg)
    metric = metric or task.primary_metric
    row["metric"] = metric
    try:
        trace = run_simulation(cfg, task=task)
    except DivergenceError as exc:
        row["error"] = f"DivergenceError: {exc}"
        return row
    series = evaluate_mean_model(trace, task, metric)
    row["final_metric_last3_mean"] = series.final(3)
    if target is not None:
        row["time_to_target"] = time_to_target(series, target, metric_direction(metric))
    row["end_time"] = trace.end_time
    row["drops_total"] = int(trace.drops.sum())
    row["drops_mean_per_round"] = float(trace.drops.mean())
    row["drops_max_node_total"] = int(trace.drops.sum(axis=1).max())
    row["error"] = ""
    return row


def _run_job(job):
    index, replicate, cfg_dict, target, metric = job
    row = run_point(validate_config(cfg_dict), target, metric)
    row["grid_index"] = index
    row["replicate"] = replicate
    return row


def sweep(
    base: ValidatedConfig,
    grid: Mapping[str, Sequence] | None = None,
    replicates: int = 1,
    target: float | None = None,
    metric: str | None = None,
    workers: int | None = None,
) -> list[dict[str, Any]]:
    """Run every grid point ``replicates`` times and return rows ordered by (grid index, replicate).

    Replicate ``r`` uses the seed ``derived_seed(base.seed, r)`` at every grid
    point, so points are compared on the same data and initial models.
    Runs are independent; with ``workers > 1`` they execute in worker
    processes, and row order is unaffected.
    """
    grid = grid if grid is not None else base.sweep_grid
    if grid is None:
        raise ConfigError("sweep_grid", "no sweep grid given")
    if replicates < 1:
        raise ConfigError("replicates", "must be >= 1")
    target = target if target is not None else base.target
    jobs = []
    for index, point in enumerate(expand_grid(grid)):
        for r in range(replicates):
            cfg = base.replace(**point, seed=derived_seed(base.seed, r), sweep_grid=None)
            jobs.append((index, r, cfg.to_dict(), target, metric))
    if workers is None or workers <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def write_sweep_csv(rows, path=None) -> str:
    return write_csv(rows, SWEEP_COLUMNS, path)


def read_csv(path_or_text) -> list[dict[str, str]]:
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else path_or_text
    return list(csv.DictReader(io.StringIO(text)))
