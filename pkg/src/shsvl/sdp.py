"""Small dense LMI feasibility problems and a barrier-method solver for them.

Every problem here is homogeneous: a list of constraints of the form

    sum_o p_o K_o^T V K_o - rho^2 K0^T V K0 + sum_k lam_k N_k^T M_k N_k  <=  0

in symmetric Lyapunov matrices ``V`` (required positive definite) and scalar
multipliers ``lam_k`` (required nonnegative).  Because scaling a solution
preserves feasibility, the solver works on the normalized problem

    minimize t  s.t.  F(x) <= t I,  -V <= t I,  -lam <= t,  trace-sum(x) = 1

and declares the system feasible once an iterate reaches ``t < 0``.  The
witness is then rescaled so that the smallest Lyapunov eigenvalue is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FEAS_TOL = 1e-7
PD_TOL = 1e-8
MARGIN = 1e-10


class SdpNumericalError(RuntimeError):
    """The barrier iteration broke down (distinct from an infeasible verdict)."""


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str   # "pd" symmetric matrix or "nonneg" scalar
    size: int = 1

    @property
    def dim(self) -> int:
        return self.size * (self.size + 1) // 2 if self.kind == "pd" else 1


@dataclass(eq=False)
class StabilityLmi:
    """One rho-independent constraint template.

    ``branches`` holds ``(p_o, K_o)`` pairs; ``multipliers`` holds
    ``(lam_name, N_k, M_k)`` triples.  All ``K`` and ``N`` share the same
    column count ``q``; ``K0`` selects the current state.
    """

    name: str
    lyap: str
    branches: Sequence[tuple[float, np.ndarray]]
    K0: np.ndarray
    multipliers: Sequence[tuple[str, np.ndarray, np.ndarray]]
    _gram: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.K0.shape[1]

    @property
    def nstate(self) -> int:
        return self.K0.shape[0]

    def gram(self) -> np.ndarray:
        """``G[a, i, b, j] = sum_o p_o K_o[a, i] K_o[b, j]``, cached."""
        if self._gram is None:
            ns, q = self.nstate, self.size
            stack = np.stack([np.sqrt(p) * K for p, K in self.branches if p > 0])
            flat = stack.reshape(len(stack), ns * q)
            self._gram = (flat.T @ flat).reshape(ns, q, ns, q)
        return self._gram

    def evaluate(self, values: dict, rho: float) -> np.ndarray:
        """Constraint matrix at concrete variable values (direct formula)."""
        V = np.asarray(values[self.lyap], dtype=float)
        out = -rho ** 2 * self.K0.T @ V @ self.K0
        for p, K in self.branches:
            if p:
                out = out + p * (K.T @ V @ K)
        for lam, N, M in self.multipliers:
            out = out + float(values[lam]) * (N.T @ M @ N)
        return 0.5 * (out + out.T)


@dataclass(eq=False)
class LmiProblem:
    """Feasibility problem in the declared variables at a fixed rate ``rho``."""

    variables: list[Variable]
    lmis: list[StabilityLmi]
    rho: float
    label: str = ""

    def __post_init__(self):
        self._offsets = {}
        off = 0
        for v in self.variables:
            self._offsets[v.name] = off
            off += v.dim
        self.nvar = off
        self._coeffs = None

    def variable(self, name) -> Variable:
        return next(v for v in self.variables if v.name == name)

    def unpack(self, x: np.ndarray) -> dict:
        """Map a coordinate vector to ``{name: matrix or scalar}``."""
        out = {}
        for v in self.variables:
            off = self._offsets[v.name]
            if v.kind == "nonneg":
                out[v.name] = float(x[off])
            else:
                iu = np.triu_indices(v.size)
                S = np.zeros((v.size, v.size))
                S[iu] = x[off:off + v.dim]
                out[v.name] = S + np.triu(S, 1).T
        return out

    def pack(self, values: dict) -> np.ndarray:
        x = np.zeros(self.nvar)
        for v in self.variables:
            off = self._offsets[v.name]
            if v.kind == "nonneg":
                x[off] = values[v.name]
            else:
                x[off:off + v.dim] = np.asarray(values[v.name])[np.triu_indices(v.size)]
        return x

    def evaluate(self, values: dict) -> list[np.ndarray]:
        return [lmi.evaluate(values, self.rho) for lmi in self.lmis]

    def coefficients(self) -> list[np.ndarray]:
        """Per-constraint tensors ``C`` with ``F(x) = sum_i x_i C[i]``."""
        if self._coeffs is not None:
            return self._coeffs
        coeffs = []
        for lmi in self.lmis:
            q = lmi.size
            C = np.zeros((self.nvar, q, q))
            var = self.variable(lmi.lyap)
            off = self._offsets[lmi.lyap]
            G = lmi.gram()
            K0 = lmi.K0
            idx = off
            for a, b in zip(*np.triu_indices(var.size)):
                if a == b:
                    blk = G[a, :, a, :] - self.rho ** 2 * np.outer(K0[a], K0[a])
                else:
                    blk = (G[a, :, b, :] + G[b, :, a, :]
                           - self.rho ** 2 * (np.outer(K0[a], K0[b]) + np.outer(K0[b], K0[a])))
                C[idx] = 0.5 * (blk + blk.T)
                idx += 1
            for lam, N, M in lmi.multipliers:
                C[self._offsets[lam]] += N.T @ M @ N
            coeffs.append(C)
        self._coeffs = coeffs
        return coeffs


@dataclass
class FeasibilityResult:
    feasible: bool
    values: dict | None
    residual: float          # most positive constraint eigenvalue at the reported point
    min_pd: float            # smallest Lyapunov eigenvalue at the reported point
    t: float                 # normalized max-eigenvalue objective reached
    lower_bound: float       # bound on the optimal normalized objective
    iterations: int


def max_constraint_eig(problem: LmiProblem, values: dict) -> float:
    return max(float(np.linalg.eigvalsh(F)[-1]) for F in problem.evaluate(values))


def min_lyapunov_eig(problem: LmiProblem, values: dict) -> float:
    eigs = [float(np.linalg.eigvalsh(values[v.name])[0]) for v in problem.variables if v.kind == "pd"]
    return min(eigs) if eigs else np.inf


def verify_witness(problem: LmiProblem, values: dict, tol: float = FEAS_TOL,
                   pd_tol: float = PD_TOL) -> tuple[bool, float, float]:
    """Re-check a witness by eigenvalues of the directly evaluated constraints."""
    res = max_constraint_eig(problem, values)
    mpd = min_lyapunov_eig(problem, values)
    lam_ok = all(values[v.name] >= 0 for v in problem.variables if v.kind == "nonneg")
    return (res <= tol and mpd >= pd_tol and lam_ok), res, mpd


def _assemble(problem: LmiProblem):
    """Stack all constraints into one block-diagonal ``S(z) = t I - blkdiag(...)``."""
    blocks = list(problem.coefficients())
    for v in problem.variables:
        off = problem._offsets[v.name]
        if v.kind == "pd":
            C = np.zeros((problem.nvar, v.size, v.size))
            for k, (a, b) in enumerate(zip(*np.triu_indices(v.size))):
                C[off + k, a, b] = C[off + k, b, a] = -1.0
        else:
            C = np.zeros((problem.nvar, 1, 1))
            C[off, 0, 0] = -1.0
        blocks.append(C)
    total = sum(b.shape[1] for b in blocks)
    N = problem.nvar
    D = np.zeros((N + 1, total, total))
    pos = 0
    for b in blocks:
        s = b.shape[1]
        D[:N, pos:pos + s, pos:pos + s] = -b
        pos += s
    D[N] = np.eye(total)
    a = np.zeros(N + 1)
    for v in problem.variables:
        off = problem._offsets[v.name]
        if v.kind == "pd":
            diag = [k for k, (i, j) in enumerate(zip(*np.triu_indices(v.size))) if i == j]
            a[[off + k for k in diag]] = 1.0
        else:
            a[off] = 1.0
    return D, a


def _start(problem: LmiProblem, a: np.ndarray) -> np.ndarray:
    vals = {v.name: (np.eye(v.size) if v.kind == "pd" else 1.0) for v in problem.variables}
    x = problem.pack(vals)
    return x / (a[:-1] @ x)


def sdp_feasible(problem: LmiProblem, tol: float = FEAS_TOL, pd_tol: float = PD_TOL,
                 margin: float = MARGIN, mu: float = 20.0, max_newton: int = 400) -> FeasibilityResult:
    """Decide strict feasibility of a homogeneous LMI system.

    The verdict is conservative: systems that are feasible only with a
    normalized margin below ``margin`` are reported infeasible.  A feasible
    verdict always carries a witness that passes :func:`verify_witness`.
    """
    D, a = _assemble(problem)
    N1, m_total = D.shape[0], D.shape[1]
    N = N1 - 1
    x = _start(problem, a)
    Fx = np.tensordot(x, D[:N], axes=1)
    t = float(np.linalg.eigvalsh(Fx)[0]) * -1 + 1.0   # S = tI + Fx must be PD
    z = np.append(x, t)
    tau = 1.0
    KKT = np.zeros((N1 + 1, N1 + 1))
    KKT[:N1, N1] = a
    KKT[N1, :N1] = a

    def barrier(zz):
        S = np.tensordot(zz, D, axes=1)
        try:
            C = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return None, None
        return C, 2.0 * np.log(np.diag(C)).sum()

    C, logdet = barrier(z)
    if C is None:
        raise SdpNumericalError("starting point is not strictly feasible")
    iters = 0
    lower = -np.inf
    best_t = z[-1]

    def done(feasible, zz, lb):
        vals = None
        res = mpd = np.nan
        if feasible:
            vals = problem.unpack(zz[:-1])
            scale = min_lyapunov_eig(problem, vals)
            if scale <= 0:
                return None
            vals = {k: v / scale for k, v in vals.items()}
            ok, res, mpd = verify_witness(problem, vals, tol, pd_tol)
            if not ok or res >= 0:
                return None
        return FeasibilityResult(feasible, vals, res, mpd, float(zz[-1]), lb, iters)

    while tau < 1e15:
        for _ in range(50):
            iters += 1
            if iters > max_newton:
                raise SdpNumericalError(f"no verdict after {max_newton} Newton steps")
            Linv = np.linalg.inv(C)
            Y = Linv @ D @ Linv.T
            Yf = Y.reshape(N1, -1)
            g = -np.trace(Y, axis1=1, axis2=2)
            g[-1] += tau
            H = Yf @ Yf.T
            KKT[:N1, :N1] = H
            rhs = np.zeros(N1 + 1)
            rhs[:N1] = -g
            try:
                dz = np.linalg.solve(KKT, rhs)[:N1]
            except np.linalg.LinAlgError:
                dz = np.linalg.lstsq(KKT, rhs, rcond=None)[0][:N1]
            if not np.all(np.isfinite(dz)):
                raise SdpNumericalError("non-finite Newton direction")
            dec = -g @ dz
            if dec < 1e-10:
                break
            f0 = tau * z[-1] - logdet
            s = 1.0
            while True:
                zn = z + s * dz
                Cn, ldn = barrier(zn)
                if Cn is not None and tau * zn[-1] - ldn <= f0 - 0.25 * s * dec:
                    break
                s *= 0.5
                if s < 1e-14:
                    Cn = None
                    break
            if Cn is None:
                break
            z, C, logdet = zn, Cn, ldn
            best_t = min(best_t, z[-1])
            if z[-1] < -margin:
                out = done(True, z, lower)
                if out is not None:
                    return out
        lower = max(lower, z[-1] - m_total / tau)
        if lower > -margin:
            return done(False, z, lower)
        tau *= mu
    return done(False, z, lower)


def solve_with_cvxpy(problem: LmiProblem, solver: str | None = None) -> tuple[float, dict | None]:
    """Reference solve of the same normalized problem through cvxpy.

    Returns the optimal normalized objective ``t*`` and the variable values.
    Only used for cross-checking the built-in engine.
    """
    import cvxpy as cp

    xs = {}
    for v in problem.variables:
        xs[v.name] = cp.Variable((v.size, v.size), symmetric=True) if v.kind == "pd" else cp.Variable()
    t = cp.Variable()
    cons = []
    norm = 0
    for v in problem.variables:
        if v.kind == "pd":
            cons.append(xs[v.name] + t * np.eye(v.size) >> 0)
            norm = norm + cp.trace(xs[v.name])
        else:
            cons.append(xs[v.name] + t >= 0)
            norm = norm + xs[v.name]
    cons.append(norm == 1)
    for lmi in problem.lmis:
        V = xs[lmi.lyap]
        F = -problem.rho ** 2 * lmi.K0.T @ V @ lmi.K0
        for p, K in lmi.branches:
            if p:
                F = F + p * (K.T @ V @ K)
        for lam, Nm, M in lmi.multipliers:
            F = F + xs[lam] * (Nm.T @ M @ Nm)
        F = 0.5 * (F + F.T)
        cons.append(t * np.eye(lmi.size) - F >> 0)
    prob = cp.Problem(cp.Minimize(t), cons)
    prob.solve(solver=solver or "CLARABEL")
    if t.value is None:
        return np.nan, None
    vals = {k: (np.asarray(v.value) if v.value is not None else None) for k, v in xs.items()}
    return float(t.value), vals
