"""Deterministic discrete-event simulation of the network and the node protocols.

Time is virtual (seconds). Each node has one serial uplink: a message
occupies it for ``latency + bytes / bandwidth`` and arrives at the
destination when that interval ends. Receives are never contended. Events
sharing a timestamp run in the order they were scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import FormatError, LivelockError, network_stream, node_stream, derive_stream
from .protocol import AdpsgdNode, DivShareNode, init_model
from .tasks import Task, build_task


class LinkSpec(NamedTuple):
    src: int
    dst: int
    latency: float
    bandwidth: float


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Directed latency (s) and bandwidth (bytes/s) for every ordered node pair.

    The diagonal is unused.
    """

    latency: np.ndarray
    bandwidth: np.ndarray
    source: str = "two-group"
    stragglers: tuple[int, ...] = ()
    regions: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return self.latency.shape[0]

    def link(self, src: int, dst: int) -> LinkSpec:
        return LinkSpec(src, dst, float(self.latency[src, dst]), float(self.bandwidth[src, dst]))

    def link_classes(self) -> dict[tuple[str, str], set[tuple[float, float]]]:
        """(region, region) -> the distinct (latency, bandwidth) pairs among its links."""
        if self.regions is None:
            raise ValueError("network has no region assignment")
        out: dict[tuple[str, str], set[tuple[float, float]]] = {}
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    key = (self.regions[i], self.regions[j])
                    out.setdefault(key, set()).add((float(self.latency[i, j]), float(self.bandwidth[i, j])))
        return out


def transfer_duration(link: LinkSpec, nbytes: int) -> float:
    if nbytes <= 0:
        raise ValueError("a transfer carries at least one byte")
    return link.latency + nbytes / link.bandwidth


def build_straggler_network(cfg, rng: np.random.Generator) -> NetworkSpec:
    """Two-group network: fast nodes plus ``straggler_count`` slow uplinks.

    Straggler uplinks draw from Normal(fast_bandwidth / f_s, straggler_bw_std),
    clamped below at 5% of that mean. With ``f_s == 1`` nobody is slowed.
    Downlinks are unconstrained, so a link's bandwidth is its source uplink.
    """
    n = cfg.n
    stragglers = np.sort(rng.choice(n, size=cfg.straggler_count, replace=False))
    uplink = np.full(n, float(cfg.fast_bandwidth))
    if cfg.straggling_factor > 1 and len(stragglers):
        mean = cfg.fast_bandwidth / cfg.straggling_factor
        draws = rng.normal(mean, cfg.straggler_bw_std, size=len(stragglers))
        uplink[stragglers] = np.maximum(draws, 0.05 * mean)
    bandwidth = np.repeat(uplink[:, None], n, axis=1)
    latency = np.full((n, n), float(cfg.fast_latency))
    return NetworkSpec(latency, bandwidth, "two-group", tuple(int(s) for s in stragglers))


def read_region_matrix(path) -> dict[tuple[str, str], tuple[float, float]]:
    """Read ``src_region,dst_region,latency_ms,bandwidth_mbps`` rows.

    Returns seconds and bytes/second; bandwidth is in megabits per second.
    """
    table = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"src_region", "dst_region", "latency_ms", "bandwidth_mbps"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise FormatError(f"{path}: header must be {sorted(expected)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                latency = float(row["latency_ms"]) / 1000
                bandwidth = float(row["bandwidth_mbps"]) * 1e6 / 8
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if latency < 0 or bandwidth <= 0:
                raise FormatError(f"{path}:{lineno}: latency must be >= 0 and bandwidth > 0")
            key = (row["src_region"], row["dst_region"])
            if key in table:
                raise FormatError(f"{path}:{lineno}: duplicate pair {key}")
            table[key] = (latency, bandwidth)
    if not table:
        raise FormatError(f"{path}: no rows")
    return table


def matrix_regions(table) -> list[str]:
    return sorted({r for pair in table for r in pair})


def assign_regions(regions: list[str], n: int, rng: np.random.Generator) -> tuple[str, ...]:
    """Place nodes in regions at random, as evenly as possible."""
    slots = [regions[k % len(regions)] for k in range(n)]
    return tuple(slots[k] for k in rng.permutation(n))


def load_network_matrix(path, assignment) -> NetworkSpec:
    """Per-node-pair links from a region matrix and a node -> region assignment."""
    table = read_region_matrix(path)
    assignment = tuple(assignment)
    n = len(assignment)
    latency = np.zeros((n, n))
    bandwidth = np.ones((n, n))
    for i, ri in enumerate(assignment):
        for j, rj in enumerate(assignment):
            if i == j:
                continue
            if (ri, rj) not in table:
                raise FormatError(f"{path}: no entry for region pair ({ri}, {rj})")
            latency[i, j], bandwidth[i, j] = table[(ri, rj)]
    return NetworkSpec(latency, bandwidth, f"matrix:{path}", (), assignment)


def build_network(cfg) -> NetworkSpec:
    rng = network_stream(cfg)
    if cfg.network_matrix is None:
        return build_straggler_network(cfg, rng)
    assignment = cfg.node_regions
    if assignment is None:
        assignment = assign_regions(matrix_regions(read_region_matrix(cfg.network_matrix)), cfg.n, rng)
    return load_network_matrix(cfg.network_matrix, assignment)


class TraceEvent(NamedTuple):
    kind: str  # "compute", "send" or "arrive"
    time: float
    src: int
    dst: int
    nbytes: int = 0
    round: int = 0
    dropped: int = 0
    duration: float = 0.0


@dataclass
class RunTrace:
    protocol: str
    seed: int
    events: list[TraceEvent]
    snapshot_times: np.ndarray
    snapshots: np.ndarray  # (snapshots, nodes, d)
    drops: np.ndarray  # (nodes, rounds): queued entries dropped at each flush
    final_models: np.ndarray
    end_time: float
    in_flight_at_end: int
    extras: dict = field(default_factory=dict)

    def mean_models(self) -> np.ndarray:
        return self.snapshots.mean(axis=1)

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    def records(self):
        """Newline-delimited JSON records, events then snapshots."""
        for e in self.events:
            rec = {"kind": e.kind, "time": e.time, "src": e.src, "dst": e.dst, "bytes": e.nbytes, "round": e.round}
            if e.kind == "compute":
                rec["dropped"] = e.dropped
            elif e.kind == "send":
                rec["duration"] = e.duration
            yield json.dumps(rec, sort_keys=True)
        for t, models in zip(self.snapshot_times, self.snapshots):
            mean = np.ascontiguousarray(models.mean(axis=0))
            digest = hashlib.sha256(mean.tobytes()).hexdigest()
            yield json.dumps({"kind": "snapshot", "time": float(t), "mean_sha256": digest}, sort_keys=True)

    def to_ndjson(self) -> str:
        return "".join(line + "\n" for line in self.records())

    def write_ndjson(self, path):
        Path(path).write_text(self.to_ndjson())


COMPUTE_DONE, TRANSFER_ARRIVE, SEND_SLOT_FREE = 0, 1, 2


def make_nodes(cfg, task: Task) -> list:
    scale = cfg.init_scale if task.init_scale is None else task.init_scale
    cls = DivShareNode if cfg.protocol == "divshare" else AdpsgdNode
    rngs = [node_stream(cfg, i) for i in range(cfg.n)]
    if cfg.init == "shared":
        shared = init_model(task.dim, derive_stream(cfg.seed, cfg.n + 3), scale)
        models = [shared] * cfg.n
    else:
        models = [init_model(task.dim, rngs[i], scale) for i in range(cfg.n)]
    return [cls(i, models[i], task.objectives[i], cfg, rngs[i]) for i in range(cfg.n)]


def run_simulation(cfg, net: NetworkSpec | None = None, task: Task | None = None) -> RunTrace:
    """Simulate ``cfg.rounds`` local rounds on every node and return the trace.

    Every node finishes a local round each ``compute_time`` seconds. At the
    end of round ``k`` the node runs its round handler (for DivShare:
    aggregate, train, fragment, refill the send queue), then keeps its uplink
    busy sending queued messages one at a time. The run stops once every
    node has completed its last round; messages still in transit at that
    point are counted in ``in_flight_at_end``.

    Model snapshots are taken at multiples of ``snapshot_interval`` and hold
    the state after every event at or before the snapshot time.
    """
    task = task if task is not None else build_task(cfg)
    net = net if net is not None else build_network(cfg)
    if net.n != cfg.n:
        raise ValueError(f"network has {net.n} nodes, config has {cfg.n}")
    if cfg.protocol == "divshare":
        cfg.fragment_sizes(task.dim)  # raises ConfigError when d < ceil(1/omega)
    n, c = cfg.n, cfg.compute_time
    nodes = make_nodes(cfg, task)
    divshare = cfg.protocol == "divshare"

    heap: list = []
    seq = itertools.count()
    events: list[TraceEvent] = []
    busy = [False] * n
    drops = np.zeros((n, cfg.rounds), dtype=np.int64)
    snap_times: list[float] = []
    snaps: list[np.ndarray] = []
    interval = cfg.snapshot_interval
    snap_k = 0

    def schedule(t, kind, payload):
        heapq.heappush(heap, (t, next(seq), kind, payload))

    def snapshot(t):
        snap_times.append(t)
        snaps.append(np.stack([node.model for node in nodes]))

    def try_send(i, t):
        node = nodes[i]
        entry = node.next_send()
        if entry is None:
            busy[i] = False
            return
        dest = entry[0]
        nbytes = node.message_bytes(entry)
        dur = transfer_duration(net.link(i, dest), nbytes)
        busy[i] = True
        rnd = entry.fragment.round if divshare else node.round
        events.append(TraceEvent("send", t, i, dest, nbytes, rnd, 0, dur))
        schedule(t + dur, TRANSFER_ARRIVE, (i, dest, entry[1], nbytes, rnd))
        schedule(t + dur, SEND_SLOT_FREE, i)

    for i in range(n):
        schedule(c, COMPUTE_DONE, i)
    finished = 0
    end_time = None
    while heap:
        t, _, kind, payload = heapq.heappop(heap)
        while snap_k * interval < t:
            snapshot(snap_k * interval)
            snap_k += 1
        if kind == COMPUTE_DONE:
            i = payload
            node = nodes[i]
            dropped = node.begin_local_round()
            drops[i, node.round - 1] = dropped
            events.append(TraceEvent("compute", t, i, i, 0, node.round, dropped))
            if node.round < cfg.rounds:
                schedule(t + c, COMPUTE_DONE, i)
            else:
                finished += 1
            if not busy[i]:
                try_send(i, t)
            if finished == n:
                end_time = t
                break
        elif kind == TRANSFER_ARRIVE:
            src, dst, message, nbytes, rnd = payload
            events.append(TraceEvent("arrive", t, src, dst, nbytes, rnd))
            if divshare:
                nodes[dst].on_receive_fragment(message, src)
            else:
                nodes[dst].on_receive_model(message)
                if not busy[dst]:
                    try_send(dst, t)
        else:
            nodes[payload].finish_send()
            try_send(payload, t)
    if end_time is None:
        raise LivelockError(f"event queue exhausted with {n - finished} nodes unfinished")
    while snap_k * interval <= end_time:
        snapshot(snap_k * interval)
        snap_k += 1
    in_flight = sum(1 for item in heap if item[2] == TRANSFER_ARRIVE)
    return RunTrace(
        protocol=cfg.protocol,
        seed=cfg.seed,
        events=events,
        snapshot_times=np.array(snap_times),
        snapshots=np.stack(snaps),
        drops=drops,
        final_models=np.stack([node.model for node in nodes]),
        end_time=end_time,
        in_flight_at_end=in_flight,
        extras={"stragglers": net.stragglers},
    )
