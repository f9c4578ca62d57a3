"""Randomized model fragmentation and send-queue construction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import fragment_count


@dataclass(frozen=True, eq=False)
class Fragment:
    """A disjoint slice of one node's model, stamped with its source and round.

    ``indices`` are strictly increasing parameter positions and ``values`` the
    matching parameter values.
    """

    source: int
    round: int
    indices: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.indices)

    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))


class OutQueueEntry(NamedTuple):
    dest: int
    fragment: Fragment


def fragment_model(x: np.ndarray, omega: float, round: int, source: int, rng: np.random.Generator) -> list[Fragment]:
    """Cut ``x`` into ``ceil(1/omega)`` random disjoint fragments of balanced size.

    A uniform permutation of the parameter indices is split into contiguous
    blocks whose sizes differ by at most one; each block, sorted, becomes a
    fragment.
    """
    x = np.asarray(x)
    nf = fragment_count(omega)
    if len(x) < nf:
        raise ValueError(f"cannot cut {len(x)} parameters into {nf} non-empty fragments")
    perm = rng.permutation(len(x))
    out = []
    for block in np.array_split(perm, nf):
        idx = np.sort(block)
        out.append(Fragment(source, round, idx, x[idx].copy()))
    return out


def build_outqueue(frags: list[Fragment], j_fanout: int, n: int, rng: np.random.Generator) -> list[OutQueueEntry]:
    """Pick ``j_fanout`` distinct recipients per fragment, then shuffle the queue.

    Recipients are drawn uniformly without replacement from the ``n - 1``
    nodes other than the fragment's source, independently per fragment.
    """
    if not 1 <= j_fanout <= n - 1:
        raise ValueError(f"j_fanout must lie in [1, {n - 1}], got {j_fanout}")
    queue = []
    for frag in frags:
        others = np.delete(np.arange(n), frag.source)
        for dest in rng.choice(others, size=j_fanout, replace=False):
            queue.append(OutQueueEntry(int(dest), frag))
    rng.shuffle(queue)  # Fisher-Yates on the node's own stream
    return queue
