"""Centralized reference recursions used to cross-check the distributed simulator.

These are written for clarity with dense matrices and no agent abstraction.
Step ``k -> k+1`` takes the set of (receiver, sender) pairs lost when the
step ``k+1`` messages are formed; the simulator's own step ``k`` consumes
the loss set drawn at ``k``, so matched runs feed ``L_{k+1}`` here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import FixedPoint, ShSvlParams
from .graph import WeightedDigraph, laplacian_from_graph, projector
from .objectives import ObjectiveSet


def _col(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass(frozen=True)
class EdgewiseOperators:
    """Dense operators for one graph.

    ``E`` is ``n x n^2`` with row ``L_i`` in block ``i``; ``Ebar`` is ``n x m``
    with ``L_ij`` in the column of edge ``(i, j)``; ``D`` is ``diag(L)``.
    """

    graph: WeightedDigraph
    L: np.ndarray
    E: np.ndarray
    Ebar: np.ndarray
    D: np.ndarray
    Pi: np.ndarray

    @classmethod
    def of(cls, graph: WeightedDigraph) -> "EdgewiseOperators":
        n = graph.n
        L = laplacian_from_graph(graph)
        E = np.zeros((n, n * n))
        for i in range(n):
            E[i, i * n:(i + 1) * n] = L[i]
        Ebar = np.zeros((n, graph.m))
        for t, (i, j) in enumerate(graph.edge_pairs):
            Ebar[i, t] = L[i, j]
        return cls(graph, L, E, Ebar, np.diag(np.diag(L)), projector(n))


@dataclass(frozen=True)
class UnprojectedEdgewiseState:
    w1: np.ndarray     # (n, d)
    w2: np.ndarray     # (n, d)
    phi: np.ndarray    # (n*n, d); row i*n + j is agent i's memory of agent j


@dataclass(frozen=True)
class ProjectedEdgewiseState:
    w1: np.ndarray       # (n, d)
    w2_hat: np.ndarray   # (n, d), kept in the disagreement subspace
    phi_hat: np.ndarray  # (m, d), canonical edge order


@dataclass(frozen=True)
class SingleVectorState:
    w1: np.ndarray
    w2_hat: np.ndarray
    r_hat: np.ndarray


def unprojected_initial(ops: EdgewiseOperators, params: ShSvlParams, w1, w2) -> UnprojectedEdgewiseState:
    """Memories start at the first broadcast ``delta w1_j + eta w2_j``."""
    w1, w2 = _col(w1), _col(w2)
    y = params.delta * w1 + params.eta * w2
    n = ops.graph.n
    phi = np.tile(y, (n, 1))
    return UnprojectedEdgewiseState(w1.copy(), w2.copy(), phi)


def x_unprojected(ops: EdgewiseOperators, s: UnprojectedEdgewiseState) -> np.ndarray:
    return s.w1 - ops.E @ s.phi


def step_unprojected_edgewise(ops: EdgewiseOperators, s: UnprojectedEdgewiseState, lost,
                              objective: ObjectiveSet, params: ShSvlParams) -> UnprojectedEdgewiseState:
    a, d, z, e = params.as_tuple()
    n = ops.graph.n
    Ephi = ops.E @ s.phi
    x = s.w1 - Ephi
    u = objective.gradient(x)
    w1 = s.w1 - z * Ephi - a * u
    w2 = s.w1 + s.w2 - Ephi
    y = d * w1 + e * w2
    phi = np.tile(y, (n, 1))
    for i, j in lost:
        phi[i * n + j] = s.phi[i * n + j] + e * x[i]
    return UnprojectedEdgewiseState(w1, w2, phi)


def projected_from_unprojected(ops: EdgewiseOperators, s: UnprojectedEdgewiseState,
                               params: ShSvlParams) -> ProjectedEdgewiseState:
    """Map initial conditions so that both recursions produce the same ``x``."""
    n = ops.graph.n
    shift = params.eta / n * s.w2.sum(axis=0, keepdims=True)
    w2_hat = (np.eye(n) - ops.Pi) @ s.w2
    phi_hat = np.array([s.phi[i * n + j] for i, j in ops.graph.edge_pairs]) - shift
    return ProjectedEdgewiseState(s.w1.copy(), w2_hat, phi_hat.reshape(ops.graph.m, -1))


def x_projected(ops: EdgewiseOperators, s: ProjectedEdgewiseState, params: ShSvlParams) -> np.ndarray:
    # own message is always delivered, so the diagonal part uses current states
    self_msg = params.delta * s.w1 + params.eta * s.w2_hat
    return s.w1 - ops.D @ self_msg - ops.Ebar @ s.phi_hat


def step_projected_edgewise(ops: EdgewiseOperators, s: ProjectedEdgewiseState, lost,
                            objective: ObjectiveSet, params: ShSvlParams) -> ProjectedEdgewiseState:
    a, d, z, e = params.as_tuple()
    n = ops.graph.n
    Ip = np.eye(n) - ops.Pi
    self_msg = d * s.w1 + e * s.w2_hat
    v = ops.D @ self_msg + ops.Ebar @ s.phi_hat
    x = s.w1 - v
    u = objective.gradient(x)
    w1 = s.w1 - z * v - a * u
    w2_hat = Ip @ (s.w1 + s.w2_hat - v)
    y = d * w1 + e * w2_hat
    px = Ip @ x
    lost = set(lost)
    phi = np.empty_like(s.phi_hat)
    for t, (i, j) in enumerate(ops.graph.edge_pairs):
        phi[t] = s.phi_hat[t] + e * px[i] if (i, j) in lost else y[j]
    return ProjectedEdgewiseState(w1, w2_hat, phi)


def projected_fixed_point(ops: EdgewiseOperators, fp: FixedPoint, params: ShSvlParams) -> ProjectedEdgewiseState:
    y = params.delta * fp.w1 + params.eta * fp.w2_hat
    phi = np.array([y[j] for _, j in ops.graph.edge_pairs])
    return ProjectedEdgewiseState(fp.w1.copy(), fp.w2_hat.copy(), phi)


def single_vector_initial(params: ShSvlParams, w1, w2, Pi) -> SingleVectorState:
    w1 = _col(w1)
    w2_hat = (np.eye(len(w1)) - Pi) @ _col(w2)
    return SingleVectorState(w1.copy(), w2_hat, params.delta * w1 + params.eta * w2_hat)


def x_single_vector(L: np.ndarray, s: SingleVectorState) -> np.ndarray:
    return s.w1 - L @ s.r_hat


def step_single_vector_sync(L: np.ndarray, s: SingleVectorState, success: bool,
                            objective: ObjectiveSet, params: ShSvlParams) -> SingleVectorState:
    """Synchronous-loss recursion with one shared message vector.

    ``success`` refers to the messages formed for the next step; on a loss
    the previous vector is reused.
    """
    a, d, z, e = params.as_tuple()
    n = L.shape[0]
    Ip = np.eye(n) - projector(n)
    v = L @ s.r_hat
    x = s.w1 - v
    u = objective.gradient(x)
    w1 = s.w1 - a * u - z * v
    w2_hat = Ip @ (s.w1 + s.w2_hat - v)
    r_hat = d * w1 + e * w2_hat if success else s.r_hat
    return SingleVectorState(w1, w2_hat, r_hat)


def lmi_state_vector(s: ProjectedEdgewiseState) -> np.ndarray:
    """Stack ``(w1, w2_hat, phi_hat)`` for a scalar decision variable."""
    return np.concatenate([s.w1[:, 0], s.w2_hat[:, 0], s.phi_hat[:, 0]])
