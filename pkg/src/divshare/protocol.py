"""Node state machines: DivShare and the AD-PSGD bilateral-averaging baseline.

Handlers are synchronous and mutate the node in place; the discrete-event
simulator decides when each one runs.
"""

from __future__ import annotations

from typing import Mapping, NamedTuple

import numpy as np

from .core import ProtocolError
from .fragment import Fragment, OutQueueEntry, build_outqueue, fragment_model
from .learn import Objective, local_sgd, sample_batch


class InQueue:
    """Per-sender receive buffer; a later value for the same coordinate replaces the earlier one."""

    def __init__(self, d: int):
        self.d = d
        self._values: dict[int, np.ndarray] = {}
        self._held: dict[int, np.ndarray] = {}

    @classmethod
    def from_mapping(cls, d: int, mapping: Mapping[int, Mapping[int, float]]) -> "InQueue":
        q = cls(d)
        for sender, entries in mapping.items():
            idx = np.fromiter(entries.keys(), dtype=np.intp, count=len(entries))
            val = np.fromiter(entries.values(), dtype=float, count=len(entries))
            q.put(sender, idx, val)
        return q

    def put(self, sender: int, indices: np.ndarray, values: np.ndarray):
        if sender not in self._values:
            self._values[sender] = np.zeros(self.d)
            self._held[sender] = np.zeros(self.d, dtype=bool)
        self._values[sender][indices] = values
        self._held[sender][indices] = True

    def clear(self):
        self._values.clear()
        self._held.clear()

    def senders(self) -> list[int]:
        return sorted(self._values)

    def __len__(self):
        return len(self._values)

    def as_dict(self) -> dict[int, dict[int, float]]:
        out = {}
        for sender in self.senders():
            idx = np.flatnonzero(self._held[sender])
            out[sender] = dict(zip(idx.tolist(), self._values[sender][idx].tolist()))
        return out

    def items(self):
        for sender in self.senders():
            yield sender, self._values[sender], self._held[sender]


def aggregate(own: np.ndarray, in_queue: InQueue) -> np.ndarray:
    """Parameter-wise uniform average of the own model and every buffered value.

    Coordinate ``i`` becomes ``(own[i] + sum of held values at i) / (1 + R_i)``
    where ``R_i`` counts the senders holding ``i``; each sender counts once.
    """
    total = np.array(own, dtype=float, copy=True)
    count = np.ones(len(total))
    for _, values, held in in_queue.items():
        total[held] += values[held]
        count += held
    return total / count


def init_model(d: int, rng: np.random.Generator, scale: float) -> np.ndarray:
    """Uniform draw in ``[-scale, scale]``; ``scale == 0`` gives zeros."""
    if scale == 0:
        return np.zeros(d)
    return rng.uniform(-scale, scale, size=d)


class DivShareNode:
    """One DivShare participant.

    ``begin_local_round`` runs the whole compute block of a local round:
    aggregate the buffer, clear it, train ``h_steps`` SGD steps on a fresh
    mini-batch, fragment the result and replace the send queue. Entries that
    were still queued are dropped; a fragment already in flight is not
    touched.
    """

    def __init__(self, node_id: int, model: np.ndarray, objective: Objective, cfg, rng: np.random.Generator):
        self.id = node_id
        self.model = np.array(model, dtype=float)
        self.objective = objective
        self.cfg = cfg
        self.rng = rng
        self.round = 0
        self.in_queue = InQueue(len(self.model))
        self.out_queue: list[OutQueueEntry] = []
        self.in_flight: OutQueueEntry | None = None

    @property
    def d(self) -> int:
        return len(self.model)

    def on_receive_fragment(self, frag: Fragment, sender: int):
        if sender == self.id:
            raise ProtocolError(f"node {self.id} received its own fragment")
        if len(frag.indices) and (frag.indices.min() < 0 or frag.indices.max() >= self.d):
            raise ProtocolError(f"fragment from {sender} has indices outside [0, {self.d})")
        self.in_queue.put(sender, frag.indices, frag.values)

    def begin_local_round(self) -> int:
        """Run one local round; returns the number of queued entries dropped by the flush."""
        cfg = self.cfg
        self.round += 1
        self.model = aggregate(self.model, self.in_queue)
        self.in_queue.clear()
        batch = sample_batch(self.objective.n_samples, cfg.batch_size, self.rng)
        self.model = local_sgd(self.objective, self.model, batch, cfg.eta, cfg.h_steps)
        frags = fragment_model(self.model, cfg.omega, self.round, self.id, self.rng)
        dropped = len(self.out_queue)
        self.out_queue = build_outqueue(frags, cfg.j_fanout, cfg.n, self.rng)
        return dropped

    def next_send(self) -> OutQueueEntry | None:
        if self.in_flight is not None:
            raise ProtocolError(f"node {self.id} already has a fragment in flight")
        if not self.out_queue:
            return None
        self.in_flight = self.out_queue.pop(0)
        return self.in_flight

    def finish_send(self):
        self.in_flight = None

    def message_bytes(self, entry: OutQueueEntry) -> int:
        return self.cfg.fragment_bytes(len(entry.fragment))


class ModelMessage(NamedTuple):
    """Full-model payload of the AD-PSGD handshake."""

    kind: str  # "request" or "reply"
    source: int
    model: np.ndarray


class AdpsgdNode:
    """AD-PSGD participant realized as a non-blocking two-message handshake.

    After its local update an idle node sends its model to one uniformly
    random peer. The peer replaces its own model by the pairwise mean and
    sends that mean back; the initiator adopts it on receipt. While a
    request is outstanding the node keeps training but starts no new
    exchange.
    """

    def __init__(self, node_id: int, model: np.ndarray, objective: Objective, cfg, rng: np.random.Generator):
        self.id = node_id
        self.model = np.array(model, dtype=float)
        self.objective = objective
        self.cfg = cfg
        self.rng = rng
        self.round = 0
        self.pending = False
        self.out_queue: list[tuple[int, ModelMessage]] = []
        self.in_flight: tuple[int, ModelMessage] | None = None

    @property
    def d(self) -> int:
        return len(self.model)

    def begin_local_round(self) -> int:
        cfg = self.cfg
        self.round += 1
        batch = sample_batch(self.objective.n_samples, cfg.batch_size, self.rng)
        self.model = local_sgd(self.objective, self.model, batch, cfg.eta, cfg.h_steps)
        if not self.pending:
            peer = int(self.rng.integers(cfg.n - 1))
            peer += peer >= self.id
            self.pending = True
            self.out_queue.append((peer, ModelMessage("request", self.id, self.model.copy())))
        return 0

    def on_receive_model(self, msg: ModelMessage):
        if msg.source == self.id:
            raise ProtocolError(f"node {self.id} received its own model")
        if msg.kind == "request":
            self.model = (self.model + msg.model) / 2
            self.out_queue.append((msg.source, ModelMessage("reply", self.id, self.model.copy())))
        elif msg.kind == "reply":
            self.model = msg.model.copy()
            self.pending = False
        else:
            raise ProtocolError(f"unknown message kind {msg.kind!r}")

    def next_send(self):
        if self.in_flight is not None:
            raise ProtocolError(f"node {self.id} already has a message in flight")
        if not self.out_queue:
            return None
        self.in_flight = self.out_queue.pop(0)
        return self.in_flight

    def finish_send(self):
        self.in_flight = None

    def message_bytes(self, entry) -> int:
        return self.cfg.model_bytes(self.d)
