"""Weighted digraphs, their Laplacians and the connectivity parameter sigma."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BALANCE_TOL = 1e-10


class GraphError(ValueError):
    """Raised for malformed graphs or graph files."""


@dataclass(frozen=True)
class WeightedDigraph:
    """Directed graph on nodes ``0..n-1``.

    An edge ``(i, j, w)`` means node ``i`` receives from node ``j`` with
    weight ``w``.  Edges are stored sorted by receiver, then sender.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        cleaned = []
        seen = set()
        for i, j, w in self.edges:
            i, j, w = int(i), int(j), float(w)
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={self.n}")
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not w > 0:
                raise GraphError(f"edge ({i}, {j}) has non-positive weight {w}")
            if (i, j) in seen:
                raise GraphError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
            cleaned.append((i, j, w))
        object.__setattr__(self, "edges", tuple(sorted(cleaned)))

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def edge_pairs(self) -> list[tuple[int, int]]:
        """(receiver, sender) pairs in canonical order."""
        return [(i, j) for i, j, _ in self.edges]

    def in_neighbors(self, i: int) -> list[int]:
        return [j for r, j, _ in self.edges if r == i]


@dataclass(frozen=True)
class AssumptionReport:
    strongly_connected: bool
    weight_balanced: bool
    sigma: float
    sigma_ok: bool

    @property
    def ok(self) -> bool:
        return self.strongly_connected and self.weight_balanced and self.sigma_ok

    def problems(self) -> list[str]:
        out = []
        if not self.strongly_connected:
            out.append("graph is not strongly connected")
        if not self.weight_balanced:
            out.append("graph is not weight balanced (column sums of L are nonzero)")
        if not self.sigma_ok:
            out.append(f"sigma = {self.sigma:.6g} is not below 1")
        return out


def laplacian_from_graph(g: WeightedDigraph) -> np.ndarray:
    """Weighted Laplacian with ``-w`` off the diagonal and ``L @ 1 == 0``."""
    L = np.zeros((g.n, g.n))
    for i, j, w in g.edges:
        L[i, j] = -w
    # diagonal as negative row sum so rows cancel exactly
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


def projector(n: int) -> np.ndarray:
    """Orthogonal projector onto the consensus direction."""
    return np.full((n, n), 1.0 / n)


def sigma(L: np.ndarray) -> float:
    """Spectral norm of ``I - Pi - L``."""
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    return float(np.linalg.norm(np.eye(n) - projector(n) - L, 2))


def mixing_radius(L: np.ndarray) -> float:
    """Spectral radius of ``I - Pi - L`` (equals sigma when L is normal)."""
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    return float(np.max(np.abs(np.linalg.eigvals(np.eye(n) - projector(n) - L))))


def _reachable(n: int, adj: dict[int, list[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        a = queue.popleft()
        for b in adj.get(a, ()):
            if b not in seen:
                seen.add(b)
                queue.append(b)
    return seen


def is_strongly_connected(g: WeightedDigraph) -> bool:
    if g.n == 1:
        return True
    fwd: dict[int, list[int]] = {}
    bwd: dict[int, list[int]] = {}
    for i, j, _ in g.edges:
        fwd.setdefault(j, []).append(i)
        bwd.setdefault(i, []).append(j)
    return len(_reachable(g.n, fwd, 0)) == g.n and len(_reachable(g.n, bwd, 0)) == g.n


def check_assumptions(g: WeightedDigraph, L: np.ndarray | None = None,
                      tol: float = BALANCE_TOL) -> AssumptionReport:
    """Check strong connectivity, weight balance and ``sigma < 1``."""
    if L is None:
        L = laplacian_from_graph(g)
    balanced = bool(np.max(np.abs(L.sum(axis=0))) <= tol)
    s = sigma(L)
    return AssumptionReport(
        strongly_connected=is_strongly_connected(g),
        weight_balanced=balanced,
        sigma=s,
        sigma_ok=s < 1.0 - tol,
    )


def build_directed_cycle(n: int, w: float) -> WeightedDigraph:
    """Node ``i`` receives from ``i+1 mod n``."""
    if n < 2:
        raise GraphError("a directed cycle needs n >= 2")
    return WeightedDigraph(n, tuple((i, (i + 1) % n, w) for i in range(n)))


def build_ring_lattice(n: int, offsets, w: float) -> WeightedDigraph:
    """Node ``i`` receives from ``i+o mod n`` for every offset ``o``."""
    offsets = list(offsets)
    if not offsets:
        raise GraphError("offsets must be nonempty")
    if len(set(offsets)) != len(offsets):
        raise GraphError(f"duplicate offsets {offsets}")
    if any(not 1 <= o <= n - 1 for o in offsets):
        raise GraphError(f"offsets must lie in [1, {n - 1}]")
    edges = tuple((i, (i + o) % n, w) for i in range(n) for o in offsets)
    return WeightedDigraph(n, edges)


def build_complete(n: int, w: float | None = None) -> WeightedDigraph:
    """Complete digraph; the default weight ``1/n`` makes ``L = I - Pi``."""
    w = 1.0 / n if w is None else w
    return WeightedDigraph(n, tuple((i, j, w) for i in range(n) for j in range(n) if i != j))


def load_graph(path) -> WeightedDigraph:
    """Read ``receiver sender weight`` lines (1-indexed) after an ``n=<count>`` header."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GraphError(f"cannot read graph file {path}: {exc}") from exc
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if n is None:
            key, sep, val = line.partition("=")
            if not sep or key.strip() != "n":
                raise GraphError(f"{path}:{lineno}: expected header 'n=<count>'")
            try:
                n = int(val)
            except ValueError:
                raise GraphError(f"{path}:{lineno}: bad node count {val!r}") from None
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 'receiver sender weight'")
        try:
            i, j, w = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
        except ValueError:
            raise GraphError(f"{path}:{lineno}: cannot parse {line!r}") from None
        edges.append((i, j, w))
    if n is None:
        raise GraphError(f"{path}: missing 'n=<count>' header")
    return WeightedDigraph(n, tuple(edges))


def save_graph(g: WeightedDigraph, path) -> None:
    lines = [f"n={g.n}"]
    lines += [f"{i + 1} {j + 1} {w!r}" for i, j, w in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")
