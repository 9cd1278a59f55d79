"""Worst-case rate certificates from sector-IQC linear matrix inequalities.

Each builder returns an :class:`~shsvl.sdp.LmiProblem` at a fixed rate; a
problem is feasible when a Lyapunov matrix and nonnegative multipliers make
every constraint negative semidefinite.  :func:`certify_rate` bisects on the
rate.
"""

from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import ShSvlParams
from .graph import WeightedDigraph, check_assumptions, laplacian_from_graph, projector, sigma as graph_sigma
from .objectives import SectorBound
from .sdp import (FEAS_TOL, PD_TOL, FeasibilityResult, LmiProblem, SdpNumericalError,
                  StabilityLmi, Variable, sdp_feasible, verify_witness)

BISECT_TOL = 1e-4
SCENARIO_CAP = 12


class CertifyError(ValueError):
    """Invalid certification inputs."""


@dataclass(frozen=True)
class IqcMatrices:
    m0: np.ndarray
    m1: np.ndarray

    @classmethod
    def from_bounds(cls, sector: SectorBound, sigma: float) -> "IqcMatrices":
        mu, big_l = sector.mu, sector.big_l
        m0 = np.array([[-2.0 * mu * big_l, big_l + mu], [big_l + mu, -2.0]])
        m1 = np.array([[sigma ** 2 - 1.0, 1.0], [1.0, -1.0]])
        return cls(m0, m1)


def kappa_sector_matrix(kappa: float) -> np.ndarray:
    """Sector multiplier after rescaling the gradient channel by ``1/L``."""
    return np.array([[-2.0, kappa + 1.0], [kappa + 1.0, -2.0 * kappa]])


def _check_rho(rho):
    if not 0.0 < rho <= 1.0:
        raise CertifyError(f"rate {rho} outside (0, 1]")


def _rows(*blocks):
    return np.vstack([np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks])


# ---------------------------------------------------------------- lossless


@functools.lru_cache(maxsize=256)
def _lossless_templates(params: ShSvlParams, m0: tuple, m1: tuple):
    a, d, z, e = params.as_tuple()
    M0 = np.array(m0).reshape(2, 2)
    M1 = np.array(m1).reshape(2, 2)
    # consensus direction: columns (w1, w2, u)
    Ap = np.array([[1.0, 0.0], [0.0, 0.0]])
    Bpu = np.array([[-a], [0.0]])
    K1 = np.hstack([Ap, Bpu])
    K0 = np.hstack([np.eye(2), np.zeros((2, 1))])
    Nx = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    lmi1 = StabilityLmi("consensus", "P", [(1.0, K1)], K0, [("lam0", Nx, M0)])
    # disagreement direction: columns (w1, w2, u, v)
    Aq = np.array([[1.0, 0.0], [1.0, 1.0]])
    Bqu = np.array([[-a], [0.0]])
    Bqv = np.array([[-z], [-1.0]])
    K1q = np.hstack([Aq, Bqu, Bqv])
    K0q = np.hstack([np.eye(2), np.zeros((2, 2))])
    Nxq = np.array([[1.0, 0.0, 0.0, -1.0], [0.0, 0.0, 1.0, 0.0]])
    Nyq = np.array([[d, e, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    lmi2 = StabilityLmi("disagreement", "Q", [(1.0, K1q)], K0q,
                        [("lam0", Nxq, M0), ("lam1", Nyq, M1)])
    return lmi1, lmi2


_PQ_VARS = [Variable("P", "pd", 2), Variable("Q", "pd", 2),
            Variable("lam0", "nonneg"), Variable("lam1", "nonneg")]


def build_lossless_lmis(params: ShSvlParams, sector: SectorBound, sigma: float, rho: float) -> LmiProblem:
    """Consensus and disagreement LMIs for loss-free operation."""
    _check_rho(rho)
    iqc = IqcMatrices.from_bounds(sector, sigma)
    lmis = _lossless_templates(params, tuple(iqc.m0.ravel()), tuple(iqc.m1.ravel()))
    return LmiProblem(list(_PQ_VARS), list(lmis), rho, "lossless")


def build_kappa_normalized_lmis(params: ShSvlParams, kappa: float, sigma: float, rho: float) -> LmiProblem:
    """Lossless LMIs that depend on the sector only through ``kappa``.

    ``params.alpha`` is read as the normalized step ``alpha' = L alpha``.
    """
    _check_rho(rho)
    if kappa < 1:
        raise CertifyError(f"kappa must be >= 1, got {kappa}")
    m1 = IqcMatrices.from_bounds(SectorBound(1.0, 1.0), sigma).m1
    lmis = _lossless_templates(params, tuple(kappa_sector_matrix(kappa).ravel()), tuple(m1.ravel()))
    return LmiProblem(list(_PQ_VARS), list(lmis), rho, "kappa")


# ---------------------------------------------------------------- synchronous loss


def sync_state_matrices(params: ShSvlParams) -> dict:
    """3-state ``(w1, w2_hat, r)`` matrices for both delivery outcomes."""
    a, d, z, e = params.as_tuple()
    return {
        "sp": (np.array([[1, 0, 0], [0, 0, 0], [d, 0, 0]], float),
               np.array([-a, 0, -a * d]), np.array([-z, 0, -d * z])),
        "sq": (np.array([[1, 0, 0], [1, 1, 0], [d + e, e, 0]], float),
               np.array([-a, 0, -a * d]), np.array([-z, -1, -d * z - e])),
        "lp": (np.array([[1, 0, 0], [0, 0, 0], [0, 0, 1]], float),
               np.array([-a, 0, 0.0]), np.array([-z, 0, 0.0])),
        "lq": (np.array([[1, 0, 0], [1, 1, 0], [0, 0, 1]], float),
               np.array([-a, 0, 0.0]), np.array([-z, -1, 0.0])),
    }


@functools.lru_cache(maxsize=256)
def _sync_templates(params: ShSvlParams, m0: tuple, m1: tuple, p_loss: float):
    M0 = np.array(m0).reshape(2, 2)
    M1 = np.array(m1).reshape(2, 2)
    mats = sync_state_matrices(params)
    weights = {"s": 1.0 - p_loss, "l": p_loss}
    cons_br, dis_br = [], []
    for o in ("s", "l"):
        A, Bu, Bv = mats[o + "p"]
        cons_br.append((weights[o], np.hstack([A, Bu[:, None]])))
        A, Bu, Bv = mats[o + "q"]
        dis_br.append((weights[o], np.hstack([A, Bu[:, None], Bv[:, None]])))
    K0p = np.hstack([np.eye(3), np.zeros((3, 1))])
    Nxp = np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0]])
    lmi1 = StabilityLmi("consensus", "P", cons_br, K0p, [("lam0", Nxp, M0)])
    K0q = np.hstack([np.eye(3), np.zeros((3, 2))])
    Nxq = np.array([[1.0, 0, 0, 0, -1.0], [0, 0, 0, 1.0, 0]])
    Nyq = np.array([[0, 0, 1.0, 0, 0], [0, 0, 0, 0, 1.0]])
    lmi2 = StabilityLmi("disagreement", "Q", dis_br, K0q,
                        [("lam0", Nxq, M0), ("lam1", Nyq, M1)])
    return lmi1, lmi2


def build_sync_loss_lmis(params: ShSvlParams, sector: SectorBound, sigma: float, p_loss: float,
                         rho: float) -> LmiProblem:
    """Mean-square LMIs when all packets of a step are lost together with probability ``p_loss``."""
    _check_rho(rho)
    if not 0.0 <= p_loss <= 1.0:
        raise CertifyError(f"loss probability {p_loss} outside [0, 1]")
    iqc = IqcMatrices.from_bounds(sector, sigma)
    lmis = _sync_templates(params, tuple(iqc.m0.ravel()), tuple(iqc.m1.ravel()), float(p_loss))
    variables = [Variable("P", "pd", 3), Variable("Q", "pd", 3),
                 Variable("lam0", "nonneg"), Variable("lam1", "nonneg")]
    return LmiProblem(variables, list(lmis), rho, "sync")


# ---------------------------------------------------------------- edgewise loss


def enumerate_scenarios(graph: WeightedDigraph, p_loss: float, cap: int = SCENARIO_CAP):
    """All delivery patterns as ``(delivered edge set, probability)``.

    The probability of a pattern delivering ``s`` of ``m`` edges is
    ``(1 - p)^s p^(m - s)``.
    """
    m = graph.m
    if m > cap:
        raise CertifyError(f"{m} edges exceeds the scenario cap of {cap}")
    edges = graph.edge_pairs
    out = []
    for mask in itertools.product((False, True), repeat=m):
        s = sum(mask)
        prob = (1.0 - p_loss) ** s * p_loss ** (m - s)
        out.append((frozenset(e for e, ok in zip(edges, mask) if ok), prob))
    return out


@dataclass(frozen=True)
class EdgewiseSystem:
    """Rows of the edgewise-loss state-space model in ``(w1, w2_hat, phi)``.

    ``success[t]`` and ``loss[t]`` are the ``phi_t`` update rows (state
    columns then input columns) for delivery or loss on edge ``t``.
    """

    base: np.ndarray      # (2n, 2n+m+n) rows for w1 and w2_hat
    success: np.ndarray   # (m, 2n+m+n)
    loss: np.ndarray      # (m, 2n+m+n)
    C: np.ndarray         # (n, 2n+m)
    E: np.ndarray         # (n, m)

    @property
    def nstate(self):
        return self.C.shape[1]

    def matrices(self, delivered_mask) -> tuple[np.ndarray, np.ndarray]:
        """``(A, B)`` for one delivery pattern (boolean per edge)."""
        mask = np.asarray(delivered_mask, dtype=bool)
        phi = np.where(mask[:, None], self.success, self.loss)
        K = np.vstack([self.base, phi])
        ns = self.nstate
        return K[:, :ns], K[:, ns:]


def edgewise_system(graph: WeightedDigraph, params: ShSvlParams) -> EdgewiseSystem:
    a, d, z, e = params.as_tuple()
    n, m = graph.n, graph.m
    L = laplacian_from_graph(graph)
    Dg = np.diag(np.diag(L))
    Pi = projector(n)
    Ip = np.eye(n) - Pi
    I = np.eye(n)
    E = np.zeros((n, m))
    for t, (i, j) in enumerate(graph.edge_pairs):
        E[i, t] = L[i, j]
    Z = np.zeros((n, n))
    C = np.hstack([I - d * Dg, -e * Dg, -E])
    A1 = np.hstack([I - z * d * Dg, -z * e * Dg, -z * E])
    A2 = Ip @ np.hstack([I - d * Dg, I - e * Dg, -E])
    B1 = -a * I
    base = np.vstack([np.hstack([A1, B1]), np.hstack([A2, Z])])
    succ = np.zeros((m, 2 * n + m + n))
    loss = np.zeros_like(succ)
    xrow = np.hstack([e * (Ip @ C), np.zeros((n, n))])
    for t, (i, j) in enumerate(graph.edge_pairs):
        # delivered: r_ij becomes delta w1_j + eta w2_hat_j after the update
        succ[t] = d * base[j] + e * base[n + j]
        # lost: r_ij grows by eta times the projected local estimate
        loss[t, 2 * n + t] = 1.0
        loss[t] += xrow[i]
    return EdgewiseSystem(base, succ, loss, C, E)


@functools.lru_cache(maxsize=64)
def _edgewise_template(graph: WeightedDigraph, params: ShSvlParams, m0: tuple, p_loss: float):
    if params.zeta * params.eta == 0:
        raise CertifyError("edgewise model needs zeta * eta != 0")
    sys = edgewise_system(graph, params)
    n, ns = graph.n, sys.nstate
    q = ns + n
    branches = []
    for delivered, prob in enumerate_scenarios(graph, p_loss):
        if prob == 0.0:
            continue
        mask = [pair in delivered for pair in graph.edge_pairs]
        A, B = sys.matrices(mask)
        branches.append((prob, np.hstack([A, B])))
    K0 = np.hstack([np.eye(ns), np.zeros((ns, n))])
    M0 = np.array(m0).reshape(2, 2)
    N = np.vstack([np.hstack([sys.C, np.zeros((n, n))]), np.hstack([np.zeros((n, ns)), np.eye(n)])])
    lmi = StabilityLmi("edgewise", "P", branches, K0, [("lam0", N, np.kron(M0, np.eye(n)))])
    lmi.gram()
    return lmi


def build_edgewise_lmis(graph: WeightedDigraph, params: ShSvlParams, sector: SectorBound, p_loss: float,
                        rho: float) -> LmiProblem:
    """Mean-square LMI with the Laplacian absorbed and independent per-edge loss."""
    _check_rho(rho)
    if not 0.0 <= p_loss <= 1.0:
        raise CertifyError(f"loss probability {p_loss} outside [0, 1]")
    rep = check_assumptions(graph)
    if not rep.ok:
        raise CertifyError("graph assumptions fail: " + "; ".join(rep.problems()))
    m0 = IqcMatrices.from_bounds(sector, 0.0).m0
    lmi = _edgewise_template(graph, params, tuple(m0.ravel()), float(p_loss))
    ns = lmi.nstate
    return LmiProblem([Variable("P", "pd", ns), Variable("lam0", "nonneg")], [lmi], rho, "edgewise")


@functools.lru_cache(maxsize=64)
def _absorbed_template(graph: WeightedDigraph, params: ShSvlParams, m0: tuple):
    a, d, z, e = params.as_tuple()
    n = graph.n
    L = laplacian_from_graph(graph)
    I = np.eye(n)
    Ip = I - projector(n)
    A = np.block([[I - z * d * L, -z * e * L], [Ip @ (I - d * L), Ip @ (I - e * L)]])
    B = np.vstack([-a * I, np.zeros((n, n))])
    C = np.hstack([I - d * L, -e * L])
    K1 = np.hstack([A, B])
    K0 = np.hstack([np.eye(2 * n), np.zeros((2 * n, n))])
    N = np.vstack([np.hstack([C, np.zeros((n, n))]), np.hstack([np.zeros((n, 2 * n)), I])])
    M0 = np.array(m0).reshape(2, 2)
    return StabilityLmi("absorbed", "P", [(1.0, K1)], K0, [("lam0", N, np.kron(M0, I))])


def build_absorbed_lossless_lmis(graph: WeightedDigraph, params: ShSvlParams, sector: SectorBound,
                                 rho: float) -> LmiProblem:
    """Loss-free LMI with the actual Laplacian in the dynamics instead of a sector on it."""
    _check_rho(rho)
    m0 = IqcMatrices.from_bounds(sector, 0.0).m0
    lmi = _absorbed_template(graph, params, tuple(m0.ravel()))
    return LmiProblem([Variable("P", "pd", 2 * graph.n), Variable("lam0", "nonneg")], [lmi], rho, "absorbed")


# ---------------------------------------------------------------- bisection


@dataclass
class RateCertificate:
    rho: float
    witness: dict
    residual: float
    min_pd: float
    mode: str = ""
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        wit = {k: (np.asarray(v).tolist() if np.ndim(v) else float(v)) for k, v in self.witness.items()}
        return {"rho": self.rho, "residual": self.residual, "min_pd": self.min_pd,
                "mode": self.mode, "witness": wit, "meta": self.meta}

    def to_json(self) -> str:
        # json writes floats with repr, so values round-trip exactly
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class NotCertifiable:
    """No rate below ``1 - bisect_tol`` could be certified."""

    rho_tested: float
    reason: str = "infeasible"
    residual: float = float("nan")

    @property
    def rho(self) -> float:
        return 1.0


def rate_lower_bound(kappa: float, sigma: float | None = None) -> float:
    lb = (kappa - 1.0) / (kappa + 1.0)
    return max(lb, sigma) if sigma is not None else lb


def _decide(builder, rho, tol):
    try:
        return sdp_feasible(builder(rho), tol=tol)
    except SdpNumericalError:
        # a breakdown gives no witness, which bisection treats as infeasible
        return None


def certify_rate(builder: Callable[[float], LmiProblem], interval=(0.0, 1.0),
                 bisect_tol: float = BISECT_TOL, tol: float = FEAS_TOL, mode: str = ""):
    """Smallest rate in ``interval`` whose LMIs are feasible, to within ``bisect_tol``.

    The upper end is tested at ``min(hi, 1 - bisect_tol)``; if that fails the
    result is :class:`NotCertifiable`.  The lower end is assumed infeasible.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not 0.0 <= lo < hi <= 1.0:
        raise CertifyError(f"bad bisection interval {interval}")
    hi = min(hi, 1.0 - bisect_tol)
    if hi <= lo:
        return NotCertifiable(hi, "interval below 1 - bisect_tol")
    res = _decide(builder, hi, tol)
    if res is None or not res.feasible:
        return NotCertifiable(hi, "infeasible" if res is not None else "numerical breakdown",
                              float("nan") if res is None else res.t)
    best = res
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        r = _decide(builder, mid, tol)
        if r is not None and r.feasible:
            hi, best = mid, r
        else:
            lo = mid
    return RateCertificate(hi, best.values, best.residual, best.min_pd, mode)


def default_interval(kappa: float, sigma: float | None) -> tuple[float, float]:
    return rate_lower_bound(kappa, sigma), 1.0


def certify_mode(mode: str, params: ShSvlParams, *, kappa: float | None = None, sector: SectorBound | None = None,
                 sigma: float | None = None, p_loss: float = 0.0, graph: WeightedDigraph | None = None,
                 interval=None, bisect_tol: float = BISECT_TOL):
    """Certify by mode name: ``lossless``, ``kappa``, ``sync``, ``edgewise`` or ``absorbed``.

    With only ``kappa`` given, the unit-Lipschitz sector is used, so
    ``params.alpha`` plays the role of the normalized step.
    """
    if sector is None:
        if kappa is None:
            raise CertifyError("need kappa or a sector")
        sector = SectorBound.normalized(kappa)
    kappa = sector.kappa
    if mode in ("edgewise", "absorbed"):
        if graph is None:
            raise CertifyError(f"mode {mode} needs a graph")
        lb = rate_lower_bound(kappa)
        if mode == "edgewise":
            builder = lambda r: build_edgewise_lmis(graph, params, sector, p_loss, r)
        else:
            builder = lambda r: build_absorbed_lossless_lmis(graph, params, sector, r)
    else:
        if sigma is None:
            if graph is None:
                raise CertifyError(f"mode {mode} needs sigma or a graph")
            sigma = graph_sigma(laplacian_from_graph(graph))
        lb = rate_lower_bound(kappa, sigma)
        if mode == "lossless":
            builder = lambda r: build_lossless_lmis(params, sector, sigma, r)
        elif mode == "kappa":
            builder = lambda r: build_kappa_normalized_lmis(params, kappa, sigma, r)
        elif mode == "sync":
            builder = lambda r: build_sync_loss_lmis(params, sector, sigma, p_loss, r)
        else:
            raise CertifyError(f"unknown certification mode {mode!r}")
    if interval is None:
        interval = (lb, 1.0)
    return certify_rate(builder, interval, bisect_tol, mode=mode)


def verify_certificate(problem: LmiProblem, cert: RateCertificate, tol: float = FEAS_TOL,
                       pd_tol: float = PD_TOL) -> bool:
    """Independent eigenvalue check of a certificate against a freshly built problem."""
    ok, _, _ = verify_witness(problem, cert.witness, tol, pd_tol)
    return ok


__all__ = [
    "BISECT_TOL", "SCENARIO_CAP", "CertifyError", "EdgewiseSystem", "FeasibilityResult", "IqcMatrices",
    "NotCertifiable", "RateCertificate", "build_absorbed_lossless_lmis", "build_edgewise_lmis",
    "build_kappa_normalized_lmis", "build_lossless_lmis", "build_sync_loss_lmis", "certify_mode",
    "certify_rate", "default_interval", "edgewise_system", "enumerate_scenarios", "kappa_sector_matrix",
    "rate_lower_bound", "sdp_feasible", "sync_state_matrices", "verify_certificate",
]
