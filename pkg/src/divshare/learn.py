"""Local objectives, exact gradients and the H-step local SGD update.

Every objective works on one flat parameter vector, so fragmentation can
treat all variants identically. Mini-batches are integer index arrays into
the objective's local samples; the loss of a batch is the mean per-sample
loss.
"""

from __future__ import annotations

import numpy as np

from .core import DivergenceError


class Objective:
    """Interface shared by the local objectives."""

    dim: int
    n_samples: int

    def loss(self, x: np.ndarray, batch: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def full_batch(self) -> np.ndarray:
        return np.arange(self.n_samples)


def _check_batch(batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.intp)
    if batch.size == 0:
        raise ValueError("mini-batch must contain at least one sample")
    return batch


class Quadratic(Objective):
    """Least squares on one node's rows: per-row loss ``0.5 * (a.x - b)**2``."""

    def __init__(self, A: np.ndarray, b: np.ndarray):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.n_samples, self.dim = self.A.shape

    def loss(self, x, batch):
        batch = _check_batch(batch)
        r = self.A[batch] @ x - self.b[batch]
        return 0.5 * float(r @ r) / batch.size

    def grad(self, x, batch):
        batch = _check_batch(batch)
        A = self.A[batch]
        return A.T @ (A @ x - self.b[batch]) / batch.size

    def smoothness(self, batch: np.ndarray | None = None) -> float:
        """Largest eigenvalue of the batch Hessian (full batch by default)."""
        A = self.A if batch is None else self.A[_check_batch(batch)]
        return float(np.linalg.eigvalsh(A.T @ A / len(A))[-1])


class MatrixFactorization(Objective):
    """Regularized matrix factorization over a node's (user, item, rating) triples.

    Parameters are packed as all user factors followed by all item factors,
    each row-major with ``rank`` columns. Sample loss is
    ``(r - p_u.q_v)**2 + reg * (|p_u|**2 + |q_v|**2)``.
    """

    def __init__(self, users, items, ratings, n_users: int, n_items: int, rank: int = 16, reg: float = 0.01):
        self.users = np.asarray(users, dtype=np.intp)
        self.items = np.asarray(items, dtype=np.intp)
        self.ratings = np.asarray(ratings, dtype=float)
        self.n_users = n_users
        self.n_items = n_items
        self.rank = rank
        self.reg = reg
        self.n_samples = len(self.ratings)
        self.dim = (n_users + n_items) * rank

    def factors(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        split = self.n_users * self.rank
        return x[:split].reshape(self.n_users, self.rank), x[split:].reshape(self.n_items, self.rank)

    def loss(self, x, batch):
        batch = _check_batch(batch)
        P, Q = self.factors(x)
        p, q = P[self.users[batch]], Q[self.items[batch]]
        err = self.ratings[batch] - np.einsum("ij,ij->i", p, q)
        per = err**2 + self.reg * (np.sum(p * p, axis=1) + np.sum(q * q, axis=1))
        return float(per.mean())

    def grad(self, x, batch):
        batch = _check_batch(batch)
        P, Q = self.factors(x)
        u, v = self.users[batch], self.items[batch]
        p, q = P[u], Q[v]
        err = self.ratings[batch] - np.einsum("ij,ij->i", p, q)
        scale = 2.0 / batch.size
        g = np.zeros_like(x)
        gP, gQ = self.factors(g)
        np.add.at(gP, u, scale * (self.reg * p - err[:, None] * q))
        np.add.at(gQ, v, scale * (self.reg * q - err[:, None] * p))
        return g

    def predict(self, x, users, items) -> np.ndarray:
        P, Q = self.factors(x)
        return np.einsum("ij,ij->i", P[users], Q[items])


class Softmax(Objective):
    """Multinomial logistic regression with weight decay ``0.5 * reg * |W|**2``.

    Parameters: a ``classes x (features + 1)`` matrix, bias in the last column.
    """

    def __init__(self, X, y, n_classes: int, reg: float = 1e-4):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=np.intp)
        self.n_classes = n_classes
        self.reg = reg
        self.n_samples, self.n_features = self.X.shape
        self.dim = n_classes * (self.n_features + 1)

    def _weights(self, x):
        return x.reshape(self.n_classes, self.n_features + 1)

    def _probs(self, W, X):
        logits = X @ W[:, :-1].T + W[:, -1]
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True), logits

    def loss(self, x, batch):
        batch = _check_batch(batch)
        W = self._weights(x)
        _, logits = self._probs(W, self.X[batch])
        lse = np.log(np.exp(logits).sum(axis=1))
        nll = lse - logits[np.arange(batch.size), self.y[batch]]
        return float(nll.mean() + 0.5 * self.reg * x @ x)

    def grad(self, x, batch):
        batch = _check_batch(batch)
        W = self._weights(x)
        X = self.X[batch]
        probs, _ = self._probs(W, X)
        probs[np.arange(batch.size), self.y[batch]] -= 1.0
        probs /= batch.size
        g = np.empty_like(W)
        g[:, :-1] = probs.T @ X
        g[:, -1] = probs.sum(axis=0)
        return g.ravel() + self.reg * x

    def predict(self, x, X) -> np.ndarray:
        probs, _ = self._probs(self._weights(x), np.asarray(X, dtype=float))
        return probs.argmax(axis=1)


def loss(obj: Objective, x: np.ndarray, batch: np.ndarray) -> float:
    return obj.loss(x, batch)


def grad(obj: Objective, x: np.ndarray, batch: np.ndarray) -> np.ndarray:
    return obj.grad(x, batch)


def sample_batch(n_samples: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of one mini-batch, drawn without replacement."""
    if n_samples <= batch_size:
        return np.arange(n_samples)
    return rng.choice(n_samples, size=batch_size, replace=False)


def local_sgd(obj: Objective, x0: np.ndarray, batch: np.ndarray, eta: float, h_steps: int) -> np.ndarray:
    """Run ``h_steps`` SGD steps on a single fixed mini-batch, starting from ``x0``.

    Raises
    ------
    DivergenceError
        If the parameters become non-finite; ``step`` is the 1-based index of
        the offending step.
    """
    if h_steps < 1:
        raise ValueError("h_steps must be >= 1")
    x = np.array(x0, dtype=float, copy=True)
    for h in range(1, h_steps + 1):
        x -= eta * obj.grad(x, batch)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(h)
    return x
