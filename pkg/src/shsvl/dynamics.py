"""SVL baseline, self-healing Algorithm 1 and SH-SVL with the packet-loss protocol.

All agents are advanced in one synchronous round per step: every ``y`` is
formed first, then every Laplacian output ``v``, then ``x``/``u``, then the
state updates.  Memories live in an ``(n, n, d)`` array ``R`` whose entry
``R[i, j]`` is agent ``i``'s copy of agent ``j``'s last (or extrapolated)
message; entries for non-neighbours are multiplied by ``L[i, j] == 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import WeightedDigraph, check_assumptions, laplacian_from_graph
from .loss import LossModel, sample_lost_edges
from .objectives import ObjectiveSet
from .rates import rate_fit

OVERFLOW_WATCH = 1e12


class ParameterError(ValueError):
    pass


class ProtocolError(RuntimeError):
    """A loss hit a memory entry that was never initialized."""


class SimulationError(RuntimeError):
    pass


class AssumptionError(ValueError):
    """The communication graph violates connectivity, balance or sigma < 1."""


@dataclass(frozen=True)
class SvlParams:
    alpha: float
    beta: float
    gamma: float
    delta: float


@dataclass(frozen=True)
class ShSvlParams:
    alpha: float
    delta: float
    zeta: float
    eta: float

    def as_tuple(self):
        return (self.alpha, self.delta, self.zeta, self.eta)


def svl_to_shsvl(p: SvlParams) -> ShSvlParams:
    """Factor the SVL template into the self-healing parameters (zeta, eta)."""
    if p.delta == 0:
        if p.gamma == 0:
            raise ParameterError("gamma must be nonzero when delta == 0")
        zeta = p.beta / p.gamma
    else:
        disc = p.gamma ** 2 - 4 * p.beta * p.delta
        if disc < 0:
            raise ParameterError(f"gamma^2 - 4 beta delta = {disc:g} < 0 gives complex zeta")
        zeta = (p.gamma - math.sqrt(disc)) / (2 * p.delta)
    return ShSvlParams(p.alpha, p.delta, zeta, p.gamma - p.delta * zeta)


def shsvl_to_svl(p: ShSvlParams) -> SvlParams:
    """SVL parameters with the same transfer function as ``p``.

    ``svl_to_shsvl`` inverts this exactly when ``eta >= delta * zeta``.
    """
    return SvlParams(p.alpha, p.zeta * p.eta, p.eta + p.delta * p.zeta, p.delta)


@dataclass(frozen=True)
class AgentState:
    w1: np.ndarray
    w2: np.ndarray
    x_prev: np.ndarray | None
    r: dict
    r_initialized: dict


@dataclass(frozen=True)
class NetworkState:
    k: int
    w1: np.ndarray                 # (n, d)
    w2: np.ndarray                 # (n, d)
    x_prev: np.ndarray | None      # x from the previous step
    R: np.ndarray                  # (n, n, d) message memory
    r_init: np.ndarray             # (n, n) bool
    graph: WeightedDigraph
    L: np.ndarray
    params: ShSvlParams | SvlParams

    @property
    def n(self):
        return self.w1.shape[0]

    def agent(self, i: int) -> AgentState:
        keys = self.graph.in_neighbors(i) + [i]
        return AgentState(
            self.w1[i].copy(), self.w2[i].copy(),
            None if self.x_prev is None else self.x_prev[i].copy(),
            {j: self.R[i, j].copy() for j in keys},
            {j: bool(self.r_init[i, j]) for j in keys},
        )


def initial_state(graph: WeightedDigraph, params, w1, w2, L=None) -> NetworkState:
    L = laplacian_from_graph(graph) if L is None else L
    w1 = np.array(w1, dtype=float)
    w2 = np.array(w2, dtype=float)
    if w1.ndim == 1:
        w1, w2 = w1[:, None], w2[:, None]
    n, d = w1.shape
    return NetworkState(0, w1, w2, None, np.zeros((n, n, d)), np.zeros((n, n), bool),
                        graph, L, params)


def _laplacian_apply(L: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``v_i = sum_j L_ij R[i, j]``."""
    return (L[:, :, None] * R).sum(axis=1)


def step_algorithm1(s: NetworkState, objective: ObjectiveSet) -> NetworkState:
    p = s.params
    y = p.delta * s.w1 + p.eta * s.w2
    R = np.broadcast_to(y[None, :, :], s.R.shape)
    v = _laplacian_apply(s.L, R)
    x = s.w1 - v
    u = objective.gradient(x)
    w1 = s.w1 - p.alpha * u - p.zeta * v
    w2 = s.w1 + s.w2 - v
    return replace(s, k=s.k + 1, w1=w1, w2=w2, x_prev=x, R=R.copy(),
                   r_init=np.ones_like(s.r_init))


def _lost_mask(s: NetworkState, lost) -> np.ndarray:
    mask = np.zeros((s.n, s.n), bool)
    for i, j in lost:
        mask[i, j] = True
    if mask.any():
        if s.k == 0 or not s.r_init[mask].all():
            raise ProtocolError(f"loss at step {s.k} hits an uninitialized memory")
    return mask


def step_shsvl(s: NetworkState, objective: ObjectiveSet, lost_edges=frozenset()) -> NetworkState:
    """One round of SH-SVL.

    A lost message from ``j`` is replaced by the held value plus
    ``eta * x_i`` from the previous step, tracking the linear growth of ``y_j``.
    """
    p = s.params
    mask = _lost_mask(s, lost_edges)
    y = p.delta * s.w1 + p.eta * s.w2
    R = np.broadcast_to(y[None, :, :], s.R.shape).copy()
    if mask.any():
        ii, jj = np.nonzero(mask)
        R[ii, jj] = p.eta * s.x_prev[ii] + s.R[ii, jj]
    v = _laplacian_apply(s.L, R)
    x = s.w1 - v
    u = objective.gradient(x)
    w1 = s.w1 - p.alpha * u - p.zeta * v
    w2 = s.w1 + s.w2 - v
    return replace(s, k=s.k + 1, w1=w1, w2=w2, x_prev=x, R=R, r_init=np.ones_like(s.r_init))


def step_svl(s: NetworkState, objective: ObjectiveSet, lost_edges=frozenset()) -> NetworkState:
    """One round of the SVL template; a lost message is replaced by the last one held."""
    p = s.params
    mask = _lost_mask(s, lost_edges)
    y = s.w1
    R = np.broadcast_to(y[None, :, :], s.R.shape).copy()
    if mask.any():
        R[mask] = s.R[mask]
    v = _laplacian_apply(s.L, R)
    x = s.w1 - p.delta * v
    u = objective.gradient(x)
    w1 = s.w1 + p.beta * s.w2 - p.alpha * u - p.gamma * v
    w2 = s.w2 - v
    return replace(s, k=s.k + 1, w1=w1, w2=w2, x_prev=x, R=R, r_init=np.ones_like(s.r_init))


@dataclass(frozen=True)
class FixedPoint:
    w1: np.ndarray
    w2_hat: np.ndarray
    x: np.ndarray
    y_hat: np.ndarray
    u: np.ndarray
    v: np.ndarray


def theorem1_fixed_point(L: np.ndarray, params: ShSvlParams, objective: ObjectiveSet,
                         x_opt=None) -> FixedPoint:
    """Optimal fixed point of the projected Algorithm 1 dynamics."""
    a, dl, z, e = params.as_tuple()
    if z == 0 or e == 0:
        raise ParameterError("fixed point needs zeta * eta != 0")
    x_opt = objective.x_opt if x_opt is None else x_opt
    if x_opt is None:
        raise ValueError("objective has no known optimum; pass x_opt")
    n = L.shape[0]
    x = np.tile(np.asarray(x_opt, dtype=float).reshape(1, -1), (n, 1))
    u = objective.gradient(x)
    v = -(a / z) * u
    w1 = x + v
    w2_hat = (a / (z * e)) * np.linalg.pinv(L) @ (dl * L - np.eye(n)) @ u
    y_hat = dl * w1 + e * w2_hat
    return FixedPoint(w1, w2_hat, x, y_hat, u, v)


@dataclass
class Trajectory:
    errors: np.ndarray
    estimates: np.ndarray | None = None
    final_state: NetworkState | None = None
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.errors)

    def rate(self, window: int = 300, **kw) -> float:
        return rate_fit(self.errors, window=window, **kw)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,max_error\n")
            for k, e in enumerate(self.errors):
                fh.write(f"{k},{float(e)!r}\n")


def dump_state(s: NetworkState, path) -> None:
    """Diagnostic CSV with one row per agent: ``i,w1...,w2...``."""
    d = s.w1.shape[1]
    with open(path, "w") as fh:
        cols = [f"w1_{c}" for c in range(d)] + [f"w2_{c}" for c in range(d)]
        fh.write("i," + ",".join(cols) + "\n")
        for i in range(s.n):
            vals = list(s.w1[i]) + list(s.w2[i])
            fh.write(f"{i + 1}," + ",".join(repr(float(v)) for v in vals) + "\n")


STEPPERS = {"shsvl": step_shsvl, "svl": step_svl}


def simulate(graph: WeightedDigraph, objective: ObjectiveSet, params, *, steps: int = 1000,
             loss: LossModel | None = None, seed: int = 0, init="uniform", algorithm: str | None = None,
             x_ref=None, perturb: dict | None = None, record: bool = False,
             check: bool = True) -> Trajectory:
    """Run ``steps`` synchronous rounds and record ``max_i ||x_i^k - x_ref||``.

    Parameters
    ----------
    init : {"uniform", "zero"} or (w1, w2)
        ``uniform`` draws every state coordinate from U[0, 1].
    algorithm : {"shsvl", "alg1", "svl"}, optional
        Defaults to ``shsvl`` for ``ShSvlParams`` and ``svl`` for ``SvlParams``.
    perturb : dict, optional
        ``{k: a}`` adds U[-a, a] noise to ``w1``, ``w2`` and all memories
        right before step ``k``.

    Three independent random streams are spawned from ``seed``: one for
    initialization, one for packet loss and one for perturbations.
    """
    L = laplacian_from_graph(graph)
    if check:
        rep = check_assumptions(graph, L)
        if not rep.ok:
            raise AssumptionError("; ".join(rep.problems()))
    if algorithm is None:
        algorithm = "svl" if isinstance(params, SvlParams) else "shsvl"
    if algorithm == "alg1":
        if loss is not None and loss.kind != "none":
            raise ValueError("Algorithm 1 has no loss protocol")
        stepper = lambda s, obj, lost: step_algorithm1(s, obj)  # noqa: E731
    else:
        stepper = STEPPERS[algorithm]
    loss = LossModel.none() if loss is None else loss
    loss.validate(graph)
    x_ref = objective.x_opt if x_ref is None else x_ref
    if x_ref is None:
        raise ValueError("no reference optimum: objective has none and x_ref not given")
    x_ref = np.asarray(x_ref, dtype=float).reshape(1, -1)

    init_ss, loss_ss, pert_ss = np.random.SeedSequence(seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    loss_rng = np.random.default_rng(loss_ss)
    pert_rng = np.random.default_rng(pert_ss)
    n, d = graph.n, objective.d
    if isinstance(init, str):
        if init == "uniform":
            w1 = init_rng.uniform(0.0, 1.0, (n, d))
            w2 = init_rng.uniform(0.0, 1.0, (n, d))
        elif init == "zero":
            w1, w2 = np.zeros((n, d)), np.zeros((n, d))
        else:
            raise ValueError(f"unknown init policy {init!r}")
    else:
        w1, w2 = init
    s = initial_state(graph, params, np.reshape(w1, (n, d)), np.reshape(w2, (n, d)), L)

    perturb = perturb or {}
    errors = np.empty(steps)
    est = np.empty((steps, n, d)) if record else None
    diagnostics = []
    for k in range(steps):
        if k in perturb:
            a = perturb[k]
            s = replace(s, w1=s.w1 + pert_rng.uniform(-a, a, s.w1.shape),
                        w2=s.w2 + pert_rng.uniform(-a, a, s.w2.shape),
                        R=s.R + pert_rng.uniform(-a, a, s.R.shape))
        lost = sample_lost_edges(loss, k, loss_rng, graph)
        s = stepper(s, objective, lost)
        x = s.x_prev
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s.w2))):
            raise SimulationError(f"non-finite state at step {k}")
        big = max(np.abs(s.w1).max(), np.abs(s.w2).max())
        if big > OVERFLOW_WATCH and not diagnostics:
            msg = f"state magnitude {big:.3g} exceeds {OVERFLOW_WATCH:g} at step {k}"
            diagnostics.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        errors[k] = np.linalg.norm(x - x_ref, axis=1).max()
        if record:
            est[k] = x
    return Trajectory(errors, est, s, diagnostics)
