"""Mixing constants of the asynchronous fragment-sharing analysis.

The analysis follows one scalar parameter across the whole network through
a sliding window that stacks, for every node ``i``, its last ``K_i`` values.
One global round maps the window through a random row-stochastic matrix
``W``: the first slot of node ``i`` receives the uniform average of its own
value and the values of the senders that reached it (with their delays),
and the other slots shift by one. Senders share with each receiver
independently with probability ``J / (n - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DomainError, NumericalError
from .netsim import NetworkSpec, transfer_duration


def alpha_coeffs(n: int, j_fanout: int) -> tuple[float, float]:
    """Expected self weight ``alpha1`` and expected weight ``alpha`` of one peer.

    ``alpha1 = E[1 / (1 + R)]`` with ``R ~ Bin(n - 1, J / (n - 1))``, and
    ``alpha = (1 - alpha1) / (n - 1)``.
    """
    if n < 2 or not 1 <= j_fanout <= n - 1:
        raise ValueError(f"need n >= 2 and 1 <= J <= n-1, got n={n}, J={j_fanout}")
    p = j_fanout / (n - 1)
    alpha1 = (n - 1) / (j_fanout * n) * (1 - (1 - p) ** n)
    return alpha1, (1 - alpha1) / (n - 1)


@dataclass(frozen=True, eq=False)
class DelayMatrix:
    """Integer delays in global rounds; ``k[j, i]`` is the delay from sender j to receiver i."""

    k: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError("delay matrix must be square")
        if not np.issubdtype(k.dtype, np.integer):
            if not np.all(np.isfinite(k)) or not np.all(k == np.round(k)):
                raise ValueError("delays must be finite integers")
            k = k.astype(np.int64)
        if np.any(k < 1):
            raise ValueError("delays must be >= 1")
        if np.any(np.diag(k) != 1):
            raise ValueError("self delays must equal 1")
        object.__setattr__(self, "k", k)

    @classmethod
    def synchronous(cls, n: int) -> "DelayMatrix":
        return cls(np.ones((n, n), dtype=np.int64))

    @property
    def n(self) -> int:
        return self.k.shape[0]

    @property
    def K_j(self) -> np.ndarray:
        return self.k.max(axis=1)

    @property
    def K(self) -> int:
        return int(self.K_j.max())

    @property
    def T(self) -> int:
        return int(self.K_j.sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.K_j)[:-1]])

    def slot(self, i: int, k_i: int) -> int:
        """Window position of node ``i``'s value from ``k_i`` rounds ago (1-based ``k_i``)."""
        if not 1 <= k_i <= self.K_j[i]:
            raise IndexError(f"node {i} has {self.K_j[i]} window slots, asked for {k_i}")
        return int(self.offsets[i] + k_i - 1)

    def window_labels(self) -> list[tuple[int, int]]:
        return [(i, k) for i in range(self.n) for k in range(1, int(self.K_j[i]) + 1)]


def random_delays(n: int, max_delay: int, rng: np.random.Generator) -> DelayMatrix:
    k = rng.integers(1, max_delay + 1, size=(n, n))
    np.fill_diagonal(k, 1)
    return DelayMatrix(k)


def delays_from_network(net: NetworkSpec, model_bytes: int, compute_time: float) -> DelayMatrix:
    """Round full-model transfer times up to whole compute periods (at least one)."""
    n = net.n
    k = np.ones((n, n), dtype=np.int64)
    for j in range(n):
        for i in range(n):
            if i != j:
                dur = transfer_duration(net.link(j, i), model_bytes)
                k[j, i] = max(1, math.ceil(dur / compute_time - 1e-12))
    return DelayMatrix(k)


def assumption4_lhs(n: int, j_fanout: int, T: float) -> float:
    a1, a = alpha_coeffs(n, j_fanout)
    return (T - n) * ((a * n) ** 2 / T + a1**2)


def assumption4_check(n: int, j_fanout: int, delays: DelayMatrix | int) -> tuple[float, bool]:
    """Left-hand side of the straggling/communication balance and whether it is below 1.

    ``delays`` may be a :class:`DelayMatrix` or directly the total delay ``T``.
    """
    T = delays.T if isinstance(delays, DelayMatrix) else delays
    lhs = assumption4_lhs(n, j_fanout, T)
    return lhs, lhs < 1


def t_hat(n: int, j_fanout: int) -> float:
    """Largest total delay ``T`` for which the balance can hold (positive root of LHS(T) = 1)."""
    a1, a = alpha_coeffs(n, j_fanout)
    b = n * a1**2 + 1 - (n * a) ** 2
    return (b + math.sqrt(b * b + 4 * a**2 * a1**2 * n**3)) / (2 * a1**2)


def _pairs(delays: DelayMatrix):
    n = delays.n
    off = delays.offsets
    recv = np.array([i for i in range(n) for j in range(n) if j != i])
    send = np.array([j for i in range(n) for j in range(n) if j != i])
    rows = off[recv]
    cols = off[send] + delays.k[send, recv] - 1
    return recv, send, rows, cols


def _shift_slots(delays: DelayMatrix):
    rows, cols = [], []
    for i in range(delays.n):
        for k in range(2, int(delays.K_j[i]) + 1):
            rows.append(delays.slot(i, k))
            cols.append(delays.slot(i, k - 1))
    return np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp)


def sample_W(n: int, j_fanout: int, delays: DelayMatrix, rng: np.random.Generator, size: int | None = None):
    """Draw communication matrices for one global round.

    Each ordered pair (sender j, receiver i) shares independently with
    probability ``J / (n - 1)``. With ``R_i`` senders reaching ``i``, the
    first window slot of ``i`` takes weight ``1 / (1 + R_i)`` on its own
    latest value and on each sharing sender's value delayed by ``k[j, i]``;
    every later slot copies the previous one. Rows sum to one.

    Returns a ``T x T`` matrix, or a ``size x T x T`` stack when ``size`` is given.
    """
    if delays.n != n:
        raise ValueError("delay matrix size does not match n")
    T = delays.T
    m = 1 if size is None else size
    recv, send, rows, cols = _pairs(delays)
    shared = rng.random((m, len(recv))) < j_fanout / (n - 1)
    R = np.zeros((m, n))
    np.add.at(R, (slice(None), recv), shared)
    W = np.zeros((m, T, T))
    self_slots = delays.offsets
    W[:, self_slots, self_slots] = 1.0 / (1.0 + R)
    W[:, rows, cols] = shared / (1.0 + R[:, recv])
    srow, scol = _shift_slots(delays)
    W[:, srow, scol] = 1.0
    return W[0] if size is None else W


def expected_W(n: int, j_fanout: int, delays: DelayMatrix, convention: str = "stochastic") -> np.ndarray:
    """Closed-form expectation of :func:`sample_W`.

    ``convention="stochastic"`` is the exact mean: ``alpha1`` on the self
    slot, ``alpha`` on each delayed peer slot, ``1`` on the shift entries.
    ``convention="alpha_shift"`` is a non-stochastic variant with ``alpha`` on
    every first-slot entry, self included, and ``alpha1`` on the shift
    entries. Its disagreement-space Frobenius norm obeys the balance bound,
    which the exact mean does not once delays exceed one round.
    """
    a1, a = alpha_coeffs(n, j_fanout)
    T = delays.T
    M = np.zeros((T, T))
    _, _, rows, cols = _pairs(delays)
    M[rows, cols] = a
    off = delays.offsets
    srow, scol = _shift_slots(delays)
    if convention == "stochastic":
        M[off, off] = a1
        M[srow, scol] = 1.0
    elif convention == "alpha_shift":
        M[off, off] = a
        M[srow, scol] = a1
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return M


def disagreement_projector(T: int) -> np.ndarray:
    return np.eye(T) - np.full((T, T), 1.0 / T)


def lambda2(expected_w: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000, x0: np.ndarray | None = None) -> float:
    """Spectral norm of ``E[W]`` restricted to the disagreement space.

    Power iteration on ``M^T M`` with ``M = E[W] (I - 11^T / T)``, stopped
    when the Rayleigh quotient changes by less than ``tol`` relatively.
    """
    E = np.asarray(expected_w, dtype=float)
    T = E.shape[0]
    M = E @ disagreement_projector(T)
    G = M.T @ M
    if not np.any(np.abs(G) > 1e-300):
        return 0.0
    v = np.random.default_rng(12345).standard_normal(T) if x0 is None else np.asarray(x0, dtype=float)
    v /= np.linalg.norm(v)
    est = float(v @ G @ v)
    for _ in range(max_iter):
        w = G @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(v @ G @ v)
        if abs(new - est) <= tol * abs(new):
            return math.sqrt(max(new, 0.0))
        est = new
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations", last_iterate=v)


def k_rho(rho: float, T: int, alpha: float, lam2: float) -> float:
    """Rounds after which the expected windowed disagreement shrinks by ``(1 - rho)``."""
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if lam2 >= 1:
        raise DomainError(f"lambda2 = {lam2:.6g} >= 1: mixing is not established")
    if lam2 == 0:
        return 0.0
    log_l = math.log(lam2)
    base = 2 * math.log(T) * (1 - alpha) / alpha
    root = math.sqrt(base) + math.sqrt(base + 8 * log_l * math.log(1 - rho))
    return (root / (2 * abs(log_l))) ** 2


def rate_constant(T: int, alpha: float, lam2: float) -> float:
    """The delay-dependent constant ``(alpha |log l2| + (1 - alpha) log T) / (alpha log(l2)^2)``."""
    if not 0 < lam2 < 1:
        raise DomainError(f"lambda2 = {lam2:.6g} outside (0, 1)")
    log_l = abs(math.log(lam2))
    return (alpha * log_l + (1 - alpha) * math.log(T)) / (alpha * log_l**2)


@dataclass(frozen=True)
class ContractionResult:
    ratio: float
    stderr: float
    k_tilde: int
    lambda2: float
    trials: int


def contraction_check(
    n: int,
    j_fanout: int,
    delays: DelayMatrix,
    rho: float,
    trials: int,
    rng: np.random.Generator,
    x: np.ndarray | None = None,
    chunk: int = 2000,
    lam2: float | None = None,
    max_rounds: int = 10_000,
) -> ContractionResult:
    """Monte-Carlo estimate of ``E|W^(k) X - mean(X)|^2 / ((1 - rho)^2 |X - mean(X)|^2)``.

    ``k`` is ``ceil(k_rho)`` (at least one round) and the product uses i.i.d.
    draws of :func:`sample_W`. ``X`` defaults to a random unit vector
    orthogonal to the constants. Returns the ratio and its standard error.
    ``lam2`` replaces the spectral constant used for ``k`` (diagnostics only).
    Raises DomainError when ``k`` exceeds ``max_rounds``.
    """
    a1, a = alpha_coeffs(n, j_fanout)
    T = delays.T
    lam = lambda2(expected_W(n, j_fanout, delays)) if lam2 is None else lam2
    k_tilde = max(1, math.ceil(k_rho(rho, T, a, lam) - 1e-12))
    if k_tilde > max_rounds:
        raise DomainError(f"k = {k_tilde} rounds exceeds max_rounds = {max_rounds}")
    if x is None:
        x = rng.standard_normal(T)
        x -= x.mean()
    x = np.asarray(x, dtype=float)
    xbar = x.mean()
    denom = (1 - rho) ** 2 * float(np.sum((x - xbar) ** 2))
    vals = []
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        Y = np.repeat(x[None, :], m, axis=0)
        for _ in range(k_tilde):
            W = sample_W(n, j_fanout, delays, rng, size=m)
            Y = np.einsum("mij,mj->mi", W, Y)
        vals.append(np.sum((Y - xbar) ** 2, axis=1))
        done += m
    vals = np.concatenate(vals) / denom
    return ContractionResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
                             k_tilde, lam, trials)


DEFAULT_RHOS = (0.1, 0.25, 0.5, 0.75, 0.9)


@dataclass
class TheoryReport:
    n: int
    j_fanout: int
    T: int
    K: int
    alpha1: float
    alpha: float
    assumption4_lhs: float
    assumption4_holds: bool
    t_hat: float
    lambda2: float
    lambda2_alpha_shift: float
    k_rho: dict[str, float | None] = field(default_factory=dict)
    rate_constant: float | None = None
    contraction_empirical: float | None = None
    contraction_stderr: float | None = None
    sharing_model: str = "independent Bernoulli(J/(n-1)) per ordered pair"
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("n", self.n), ("J", self.j_fanout), ("T (total delay)", self.T), ("K (max delay)", self.K),
            ("alpha1", self.alpha1), ("alpha", self.alpha),
            ("balance LHS", self.assumption4_lhs), ("balance holds", self.assumption4_holds),
            ("T_hat", self.t_hat), ("lambda2", self.lambda2),
            ("lambda2 (alpha-shift matrix)", self.lambda2_alpha_shift),
            ("rate constant", self.rate_constant),
            ("contraction ratio", self.contraction_empirical),
        ]
        rows += [(f"k_rho(rho={r})", v) for r, v in self.k_rho.items()]
        width = max(len(name) for name, _ in rows)
        lines = []
        for name, value in rows:
            text = "n/a" if value is None else (f"{value:.6g}" if isinstance(value, float) else str(value))
            lines.append(f"{name:<{width}}  {text}")
        lines += [f"note: {note}" for note in self.notes]
        return "\n".join(lines)


def theory_report(
    n: int,
    j_fanout: int,
    delays: DelayMatrix,
    rng: np.random.Generator | None = None,
    rhos=DEFAULT_RHOS,
    contraction_trials: int = 0,
    contraction_rho: float = 0.5,
) -> TheoryReport:
    a1, a = alpha_coeffs(n, j_fanout)
    lhs, holds = assumption4_check(n, j_fanout, delays)
    T = delays.T
    lam = lambda2(expected_W(n, j_fanout, delays))
    lam_f = lambda2(expected_W(n, j_fanout, delays, convention="alpha_shift"))
    report = TheoryReport(n, j_fanout, T, delays.K, a1, a, lhs, bool(holds), t_hat(n, j_fanout), lam, lam_f)
    if lam < 1:
        report.k_rho = {str(r): k_rho(r, T, a, lam) for r in rhos}
        if lam > 0:
            report.rate_constant = rate_constant(T, a, lam)
        if contraction_trials:
            try:
                res = contraction_check(n, j_fanout, delays, contraction_rho, contraction_trials,
                                        rng if rng is not None else np.random.default_rng(0))
                report.contraction_empirical, report.contraction_stderr = res.ratio, res.stderr
            except DomainError as exc:
                report.notes.append(f"contraction check skipped: {exc}")
    else:
        report.k_rho = {str(r): None for r in rhos}
        report.notes.append("lambda2 >= 1 for the row-stochastic expectation; k_rho is undefined")
    return report
