"""Configuration schema, validation, error types and seeded RNG streams."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class DivShareError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DivShareError, ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class ParseError(DivShareError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EmptyDatasetError(DivShareError, OSError):
    pass


class FormatError(DivShareError, ValueError):
    pass


class DegenerateError(DivShareError, ArithmeticError):
    pass


class DivergenceError(DivShareError, ArithmeticError):
    def __init__(self, step: int, message: str = "non-finite parameters"):
        self.step = step
        super().__init__(f"{message} after local step {step}")


class ProtocolError(DivShareError, ValueError):
    pass


class LivelockError(DivShareError, RuntimeError):
    pass


class NumericalError(DivShareError, ArithmeticError):
    def __init__(self, message: str, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class DomainError(DivShareError, ValueError):
    pass


PROTOCOLS = ("divshare", "adpsgd")
INIT_MODES = ("independent", "shared")
SWEEP_KEYS = ("straggling_factor", "straggler_count", "omega", "protocol")

# 0.5 MiB/s; the source gives the straggler std without a unit.
DEFAULT_STRAGGLER_STD = 0.5 * 2**20


@dataclass(frozen=True)
class SimConfig:
    n: int = 16
    omega: float = 0.1
    j_fanout: int = 4
    eta: float = 0.05
    h_steps: int = 1
    batch_size: int = 32
    rounds: int = 100
    compute_time: float = 1.0
    bytes_per_param: int = 4
    fragment_header_bytes: int = 64
    fast_bandwidth: float = 25e6
    fast_latency: float = 0.001
    straggler_count: int = 0
    straggling_factor: float = 1.0
    straggler_bw_std: float = DEFAULT_STRAGGLER_STD
    protocol: str = "divshare"
    seed: int = 0
    dataset: Mapping[str, Any] = field(default_factory=lambda: {"kind": "quadratic"})
    snapshot_interval: float = 5.0
    init: str = "independent"
    init_scale: float = 0.05
    network_matrix: str | None = None
    node_regions: tuple[str, ...] | None = None
    target: float | None = None
    sweep_grid: Mapping[str, Any] | None = None

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(SimConfig)}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        kwargs = dict(raw)
        if kwargs.get("node_regions") is not None:
            kwargs["node_regions"] = tuple(kwargs["node_regions"])
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(SimConfig):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, Mapping):
                value = dict(value)
            out[f.name] = value
        return out

    def replace(self, **changes) -> "ValidatedConfig":
        raw = self.to_dict()
        raw.update(changes)
        return validate_config(raw)


@dataclass(frozen=True)
class ValidatedConfig(SimConfig):
    """A :class:`SimConfig` whose invariants have been checked.

    ``n_fragments`` is derived from ``omega``. Fragment sizes depend on the
    model dimension, which comes from the dataset, so they are computed on
    demand by :meth:`fragment_sizes`.
    """

    n_fragments: int = 1

    def fragment_sizes(self, d: int) -> list[int]:
        nf = self.n_fragments
        if d < nf:
            raise ConfigError("omega", f"{nf} fragments requested for a {d}-parameter model")
        base, extra = divmod(d, nf)
        return [base + 1] * extra + [base] * (nf - extra)

    def fragment_bytes(self, n_params: int) -> int:
        return n_params * self.bytes_per_param + self.fragment_header_bytes

    def model_bytes(self, d: int) -> int:
        return self.fragment_bytes(d)


def fragment_count(omega: float) -> int:
    """ceil(1/omega), robust to the representation error of values like 1/3."""
    return max(1, math.ceil(1.0 / omega - 1e-9))


def _positive(cfg: SimConfig, name: str, strict: bool = True):
    value = getattr(cfg, name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if not math.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ConfigError(name, f"must be {'> 0' if strict else '>= 0'}, got {value!r}")


def _integer(cfg: SimConfig, name: str, lo: int, hi: int | None = None):
    value = getattr(cfg, name)
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if value < lo or (hi is not None and value > hi):
        bound = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
        raise ConfigError(name, f"must be in {bound}, got {value}")


def validate_config(raw: SimConfig | Mapping[str, Any]) -> ValidatedConfig:
    """Check every invariant of a raw configuration and return the validated form.

    Accepts a mapping (for instance a parsed JSON document), a
    :class:`SimConfig`, or an already validated config, in which case the
    result compares equal to the input.
    """
    if isinstance(raw, Mapping):
        raw = SimConfig.from_dict(raw)
    cfg = raw

    _integer(cfg, "n", 2)
    omega = cfg.omega
    if isinstance(omega, bool) or not isinstance(omega, (int, float)) or not (0 < omega <= 1):
        raise ConfigError("omega", f"must lie in (0, 1], got {omega!r}")
    _integer(cfg, "j_fanout", 1)
    if cfg.j_fanout >= cfg.n:
        raise ConfigError("j_fanout", f"must be at most n-1 = {cfg.n - 1}, got {cfg.j_fanout}")
    _positive(cfg, "eta", strict=False)
    _integer(cfg, "h_steps", 1)
    _integer(cfg, "batch_size", 1)
    _integer(cfg, "rounds", 1)
    for name in ("compute_time", "fast_bandwidth", "snapshot_interval", "straggler_bw_std"):
        _positive(cfg, name)
    _positive(cfg, "fast_latency", strict=False)
    _integer(cfg, "bytes_per_param", 1)
    _integer(cfg, "fragment_header_bytes", 0)
    _integer(cfg, "straggler_count", 0)
    if cfg.straggler_count > cfg.n:
        raise ConfigError("straggler_count", f"must be at most n = {cfg.n}, got {cfg.straggler_count}")
    _positive(cfg, "straggling_factor")
    if cfg.straggling_factor < 1:
        raise ConfigError("straggling_factor", f"must be >= 1, got {cfg.straggling_factor}")
    if cfg.protocol not in PROTOCOLS:
        raise ConfigError("protocol", f"must be one of {PROTOCOLS}, got {cfg.protocol!r}")
    _integer(cfg, "seed", 0, 2**64 - 1)
    if cfg.init not in INIT_MODES:
        raise ConfigError("init", f"must be one of {INIT_MODES}, got {cfg.init!r}")
    _positive(cfg, "init_scale", strict=False)
    if not isinstance(cfg.dataset, Mapping) or "kind" not in cfg.dataset:
        raise ConfigError("dataset", "must be an object with a 'kind' entry")
    if cfg.node_regions is not None and len(cfg.node_regions) != cfg.n:
        raise ConfigError("node_regions", f"needs one region per node ({cfg.n}), got {len(cfg.node_regions)}")
    if cfg.node_regions is not None and cfg.network_matrix is None:
        raise ConfigError("node_regions", "only meaningful together with network_matrix")
    if cfg.target is not None:
        _positive(cfg, "target", strict=False)
    if cfg.sweep_grid is not None:
        if not isinstance(cfg.sweep_grid, Mapping) or not cfg.sweep_grid:
            raise ConfigError("sweep_grid", "must be a non-empty object")
        for key, values in cfg.sweep_grid.items():
            if key not in SWEEP_KEYS:
                raise ConfigError(f"sweep_grid.{key}", f"sweepable keys are {SWEEP_KEYS}")
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigError(f"sweep_grid.{key}", "must be a non-empty list")

    from .tasks import DATASET_KINDS, dataset_params

    if cfg.dataset["kind"] not in DATASET_KINDS:
        raise ConfigError("dataset.kind", f"must be one of {sorted(DATASET_KINDS)}, got {cfg.dataset['kind']!r}")
    dataset_params(cfg.dataset)

    fields = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(SimConfig)}
    fields["omega"] = float(omega)
    fields["dataset"] = dict(cfg.dataset)
    return ValidatedConfig(**fields, n_fragments=fragment_count(omega))


def load_config(path: str | Path) -> ValidatedConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "top level must be a JSON object")
    # relative file references are resolved against the config's directory
    base = Path(path).resolve().parent
    if isinstance(raw.get("network_matrix"), str):
        raw["network_matrix"] = str(base / raw["network_matrix"])
    dataset = raw.get("dataset")
    if isinstance(dataset, dict) and isinstance(dataset.get("path"), str):
        raw["dataset"] = dict(dataset, path=str(base / dataset["path"]))
    return validate_config(raw)


def derive_stream(master_seed: int, stream_id: int) -> np.random.Generator:
    """Independent generator for ``stream_id`` under ``master_seed``.

    Uses numpy's ``SeedSequence`` spawn keys, so distinct ids (or seeds)
    give statistically independent streams and the same pair always
    reproduces the same sequence.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(seq))


def node_stream(cfg: SimConfig, node: int) -> np.random.Generator:
    return derive_stream(cfg.seed, node)


def network_stream(cfg: SimConfig) -> np.random.Generator:
    return derive_stream(cfg.seed, cfg.n + 1)


def data_stream(cfg: SimConfig) -> np.random.Generator:
    return derive_stream(cfg.seed, cfg.n + 2)


_SWEEP_KEY = 0x5EED_5EED


def derived_seed(base_seed: int, index: int) -> int:
    """64-bit seed for replicate ``index`` of a sweep rooted at ``base_seed``."""
    # spawn-key prefix keeps sweep seeds apart from the per-node streams
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(_SWEEP_KEY, int(index)))
    state = seq.generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
