"""Local objective oracles with sector-bounded gradients.

Decision variables are row vectors; stacked states have shape ``(n, d)``
and the stacked gradient maps row ``i`` through agent ``i``'s oracle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import Callable

import numpy as np

EMBED_DEGREE = 6
EMBED_DIM = (EMBED_DEGREE + 1) * (EMBED_DEGREE + 2) // 2  # 28


class DatasetError(ValueError):
    """Malformed dataset content."""


class ReferenceSolveError(RuntimeError):
    """Centralized solver hit its iteration cap."""


@dataclass(frozen=True)
class SectorBound:
    mu: float
    big_l: float

    def __post_init__(self):
        if not (0 < self.mu <= self.big_l):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.big_l}")

    @property
    def kappa(self) -> float:
        return self.big_l / self.mu

    @classmethod
    def normalized(cls, kappa: float) -> "SectorBound":
        """Unit-Lipschitz sector with condition ratio ``kappa``.

        Certifying against this sector with step ``alpha'`` is equivalent to
        certifying any ``(mu, L)`` with ``L/mu = kappa`` and ``alpha = alpha'/L``.
        """
        return cls(1.0 / kappa, 1.0)


@dataclass(eq=False)
class ObjectiveSet:
    """Per-agent gradient oracles for ``sum_i f_i``.

    ``grad_fn`` maps a stacked ``(n, d)`` array to the stacked gradients.
    """

    n: int
    d: int
    grad_fn: Callable[[np.ndarray], np.ndarray]
    sector: SectorBound
    x_opt: np.ndarray | None = None
    value_fn: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return self.grad_fn(np.asarray(X, dtype=float).reshape(self.n, self.d))

    def total_gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_i f_i`` at a single point ``x``."""
        X = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, self.d), (self.n, self.d))
        return self.gradient(X).sum(axis=0)

    def values(self, X: np.ndarray) -> np.ndarray:
        if self.value_fn is None:
            raise NotImplementedError("objective has no value oracle")
        return self.value_fn(np.asarray(X, dtype=float).reshape(self.n, self.d))


def make_quadratic(Qs, centers) -> ObjectiveSet:
    """``f_i(x) = 1/2 (x - c_i) Q_i (x - c_i)^T`` with SPD ``Q_i``."""
    Qs = np.array([np.atleast_2d(np.asarray(Q, dtype=float)) for Q in Qs])
    cs = np.array([np.atleast_1d(np.asarray(c, dtype=float)) for c in centers])
    n, d, _ = Qs.shape
    if cs.shape != (n, d):
        raise ValueError(f"centers shape {cs.shape} does not match ({n}, {d})")
    eigs = []
    for i, Q in enumerate(Qs):
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError(f"Q_{i} is not symmetric")
        ev = np.linalg.eigvalsh(Q)
        if ev[0] <= 0:
            raise ValueError(f"Q_{i} is not positive definite (min eigenvalue {ev[0]:.3g})")
        eigs.append(ev)
    mu = min(ev[0] for ev in eigs)
    big_l = max(ev[-1] for ev in eigs)
    # row-vector convention: grad f_i(x) = (x - c_i) Q_i
    x_opt = np.linalg.solve(Qs.sum(axis=0), np.einsum("id,ide->e", cs, Qs))

    def grad(X):
        return np.einsum("id,ide->ie", X - cs, Qs)

    def value(X):
        D = X - cs
        return 0.5 * np.einsum("id,ide,ie->i", D, Qs, D)

    return ObjectiveSet(n, d, grad, SectorBound(mu, big_l), x_opt, value, "quadratic",
                        {"Q": Qs, "c": cs})


def random_quadratic(n: int, d: int, mu: float, big_l: float, rng, spread: float = 1.0) -> ObjectiveSet:
    """Random quadratics whose curvatures fill ``[mu, L]`` (both endpoints used)."""
    Qs = []
    for i in range(n):
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        ev = rng.uniform(mu, big_l, size=d)
        if i == 0:
            ev[0] = mu
        if i == n - 1:
            ev[-1] = big_l
        Qs.append(U @ np.diag(ev) @ U.T)
        Qs[-1] = 0.5 * (Qs[-1] + Qs[-1].T)
    cs = spread * rng.standard_normal((n, d))
    return make_quadratic(Qs, cs)


def polynomial_embed(point) -> np.ndarray:
    """All monomials ``d1^a d2^b`` with ``a + b <= 6``.

    Ordered by total degree, and within a degree by descending power of d1.
    """
    d1, d2 = float(point[0]), float(point[1])
    out = np.empty(EMBED_DIM)
    k = 0
    for deg in range(EMBED_DEGREE + 1):
        for b in range(deg + 1):
            out[k] = d1 ** (deg - b) * d2 ** b
            k += 1
    return out


def embed_all(points) -> np.ndarray:
    return np.array([polynomial_embed(p) for p in points]).reshape(-1, EMBED_DIM)


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray   # (count, 2)
    labels: np.ndarray   # (count,), entries in {-1, +1}

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        lab = np.asarray(self.labels, dtype=float).reshape(-1)
        if len(pts) != len(lab):
            raise DatasetError(f"{len(pts)} points but {len(lab)} labels")
        if not np.all(np.isin(lab, (-1.0, 1.0))):
            raise DatasetError("labels must be -1 or +1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.labels)


def load_dataset(path) -> Dataset:
    """Read ``d1,d2,label`` rows; a non-numeric first row is taken as a header."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    pts, labs = [], []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                d1, d2, lab = (float(c.replace("−", "-")) for c in row)
            except ValueError:
                if lineno == 1 and not pts:
                    continue
                raise DatasetError(f"{path}:{lineno}: cannot parse {row!r}") from None
            if lab not in (-1.0, 1.0):
                raise DatasetError(f"{path}:{lineno}: label {lab:g} not in {{-1, 1}}")
            pts.append((d1, d2))
            labs.append(lab)
    if not pts:
        raise DatasetError(f"{path}: no data rows")
    return Dataset(np.array(pts), np.array(labs))


def synth_dataset(seed: int, count: int, noise: float = 0.05) -> Dataset:
    """Points in ``[-1, 1]^2``, labelled +1 inside a tilted ellipse, with label noise."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(count, 2))
    x, y = pts[:, 0], pts[:, 1]
    inside = (x / 0.8) ** 2 + (y / 0.6) ** 2 + 0.5 * x * y + 0.3 * x ** 3 < 1.0
    labels = np.where(inside, 1.0, -1.0)
    flip = rng.random(count) < noise
    labels[flip] *= -1
    return Dataset(pts, labels)


def partition_blocks(count: int, n: int) -> list[np.ndarray]:
    """Contiguous index blocks; the last ``count % n`` agents get one extra point."""
    if n < 1 or count < n:
        raise ValueError(f"cannot split {count} points across {n} agents")
    base, extra = divmod(count, n)
    sizes = [base + (1 if i >= n - extra else 0) for i in range(n)]
    it = iter(range(count))
    return [np.fromiter(islice(it, s), dtype=int) for s in sizes]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logaddexp0(z):
    return np.logaddexp(0.0, z)


def make_logistic(dataset: Dataset, n: int, parts: list[np.ndarray] | None = None) -> ObjectiveSet:
    """Regularized logistic loss on polynomial features, one data block per agent.

    ``f_i(x) = sum_{j in S_i} log(1 + exp(-l_j x.M(d_j))) + ||x||^2 / n``.
    """
    if parts is None:
        parts = partition_blocks(len(dataset), n)
    if len(parts) != n:
        raise ValueError(f"got {len(parts)} parts for {n} agents")
    if any(len(p) == 0 for p in parts):
        raise ValueError("every agent needs at least one data point")
    Ms = [embed_all(dataset.points[p]) for p in parts]
    ls = [dataset.labels[p] for p in parts]
    # signed features, so margins are Z_i @ x
    Zs = [l[:, None] * M for M, l in zip(Ms, ls)]

    def grad(X):
        G = np.empty_like(X)
        for i, Z in enumerate(Zs):
            G[i] = -Z.T @ _sigmoid(-Z @ X[i]) + (2.0 / n) * X[i]
        return G

    def value(X):
        return np.array([_logaddexp0(-Z @ X[i]).sum() + X[i] @ X[i] / n for i, Z in enumerate(Zs)])

    sector = estimate_sector_logistic(dataset, n, parts)
    return ObjectiveSet(n, EMBED_DIM, grad, sector, None, value, "logistic",
                        {"parts": parts})


def estimate_sector_logistic(dataset: Dataset, n: int, parts: list[np.ndarray] | None = None) -> SectorBound:
    """``mu = 2/n`` and ``L = max_i ||(2/n) I + M_i^T M_i / 4||``."""
    if parts is None:
        parts = partition_blocks(len(dataset), n)
    big_l = 0.0
    for p in parts:
        M = embed_all(dataset.points[p])
        B = (2.0 / n) * np.eye(EMBED_DIM) + 0.25 * M.T @ M
        big_l = max(big_l, float(np.linalg.norm(B, 2)))
    return SectorBound(2.0 / n, big_l)


def centralized_reference(objective: ObjectiveSet, tol: float = 1e-12, max_iter: int = 1_000_000,
                          x0=None) -> np.ndarray:
    """Minimize ``sum_i f_i`` by gradient descent with step ``1/(n L)``.

    Stops when the total gradient norm is at most ``tol``.
    """
    step = 1.0 / (objective.n * objective.sector.big_l)
    x = np.zeros(objective.d) if x0 is None else np.array(x0, dtype=float).reshape(objective.d)
    for it in range(max_iter):
        g = objective.total_gradient(x)
        if np.linalg.norm(g) <= tol:
            return x
        x = x - step * g
    raise ReferenceSolveError(
        f"gradient norm {np.linalg.norm(g):.3e} > {tol:g} after {max_iter} iterations")
