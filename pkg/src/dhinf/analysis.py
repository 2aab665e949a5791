"""Weighted performance measures of an ordinary (reduced) system.

For ``x' = A x + B w, z = C x + D w`` with admissible initial states
``x0 = G xi0`` the measure is

    J = sup ||z||_Q / sqrt(||w||_P^2 + xi0^T Hbar xi0)

and ``J0`` is the same supremum over ``xi0 = 0``. Both are computed from the
bounded-real LMI

    [[A^T X + X A, X B, C^T], [B^T X, -gamma^2 P, D^T], [C, D, -Q^{-1}]] < 0

with ``X > 0`` (``J0``) plus ``G^T X G < gamma^2 Hbar`` (``J``).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .descriptor import LinearSystem, ReducedPlant, Weights, lift_state, system_transfer
from .errors import InputError, NotStableError, NumericalError, UndecidedError
from .lmi import (
    DEFAULT_MARGIN,
    BlockLmi,
    DecisionVar,
    FeasibilityResult,
    LmiProblem,
    Status,
    minimize_linear,
    solve_feasibility,
)
from .matops import (
    inv_sqrtm_pd,
    is_hurwitz,
    kernel_basis,
    sqrtm_psd,
    stable_invariant_subspace,
    sym,
)

log = logging.getLogger(__name__)

KERNEL_TOL = 1e-6


class Measure(str, enum.Enum):
    J0 = "J0"
    J = "J"


@dataclass
class PerformanceReport:
    gamma_feasible: float
    gamma_infeasible: float
    X: np.ndarray
    kind: Measure

    @property
    def value(self) -> float:
        return self.gamma_feasible

    @property
    def band(self) -> tuple[float, float]:
        return self.gamma_infeasible, self.gamma_feasible

    @property
    def half_width(self) -> float:
        return 0.5 * (self.gamma_feasible - self.gamma_infeasible)

    def contains(self, value: float, atol: float = 0.0) -> bool:
        return self.gamma_infeasible - atol <= value <= self.gamma_feasible + atol


@dataclass
class WorstCase:
    """``w = Kstar x`` with ``x(0) = x_init = G xi10``; ``x0`` is the lifted
    descriptor-coordinate initial vector when a reduction was supplied."""

    Kstar: np.ndarray
    xi10: np.ndarray
    x_init: np.ndarray
    w0: np.ndarray
    x0: np.ndarray | None
    J: float
    kind: Measure
    X: np.ndarray
    kernel_residual: float


def _as_kind(kind) -> Measure:
    try:
        return Measure(kind) if not isinstance(kind, Measure) else kind
    except ValueError:
        raise InputError(f"unknown measure {kind!r}; expected 'J0' or 'J'") from None


def _weights_pq(weights) -> tuple[np.ndarray, np.ndarray]:
    return np.atleast_2d(weights.P), np.atleast_2d(weights.Q)


def _check_hbar(sys: LinearSystem):
    if sys.Hbar is None:
        raise InputError("measure J needs the reduced initial-state weight Hbar")


def _omega_lmi(sys: LinearSystem, weights, X: DecisionVar, gamma=None, mu=None) -> BlockLmi:
    P, Q = _weights_pq(weights)
    r, s, k = sys.order, sys.B.shape[1], sys.C.shape[0]
    blk = BlockLmi([r, s, k], name="Omega")
    blk.add(0, 0, np.eye(r), X, sys.A)
    blk.add(0, 1, np.eye(r), X, sys.B)
    blk.const(0, 2, sys.C.T)
    blk.const(1, 2, sys.D.T)
    blk.const(2, 2, -np.linalg.inv(Q))
    if mu is None:
        blk.const(1, 1, -gamma**2 * P)
    else:
        blk.add(1, 1, -0.5 * P, mu, np.eye(s))
    return blk


def _positivity(X: DecisionVar) -> BlockLmi:
    return BlockLmi([X.rows], name="X>0").add(0, 0, -0.5 * np.eye(X.rows), X, np.eye(X.rows))


def _initial_bound(sys: LinearSystem, X: DecisionVar, gamma=None, mu=None) -> BlockLmi:
    G = sys.init_map
    r0 = G.shape[1]
    blk = BlockLmi([r0], name="X<gamma^2 Hbar").add(0, 0, 0.5 * G.T, X, G)
    if mu is None:
        blk.const(0, 0, -gamma**2 * sys.Hbar)
    else:
        blk.add(0, 0, -0.5 * sys.Hbar, mu, np.eye(r0))
    return blk


def measure_problem(sys: LinearSystem, weights, kind, gamma: float | None = None) -> LmiProblem:
    """LMI problem for ``assess`` (fixed ``gamma``) or, with ``gamma=None``,
    for minimizing ``mu = gamma^2``."""
    kind = _as_kind(kind)
    X = DecisionVar.sym("X", sys.order)
    variables = [X]
    mu = None
    if gamma is None:
        mu = DecisionVar.sym("mu", 1)
        variables.append(mu)
    cons = [_omega_lmi(sys, weights, X, gamma, mu).build(), _positivity(X).build()]
    if kind is Measure.J:
        _check_hbar(sys)
        cons.append(_initial_bound(sys, X, gamma, mu).build())
    objective = None if mu is None else {"mu": np.eye(1)}
    return LmiProblem(variables, cons, objective)


def assess(sys: LinearSystem, weights, gamma: float, kind=Measure.J,
           margin: float = DEFAULT_MARGIN) -> FeasibilityResult:
    """Is ``J < gamma`` (or ``J0 < gamma``) certified by some ``X``?"""
    if gamma <= 0:
        raise InputError("gamma must be positive")
    res = solve_feasibility(measure_problem(sys, weights, kind, gamma), margin)
    if res.status is Status.UNDECIDED:
        raise UndecidedError(f"LMI solver undecided at gamma={gamma:g} ({res.solver_status})")
    return res


def compute_measure(sys: LinearSystem, weights, kind=Measure.J, rtol: float = 1e-6,
                    method: str = "sdp", margin: float = DEFAULT_MARGIN) -> PerformanceReport:
    """Band ``[gamma_infeasible, gamma_feasible]`` around ``J`` or ``J0``.

    ``method="sdp"`` minimizes ``mu = gamma^2`` directly; the lower end is
    the dual bound of the non-strict problem. ``method="bisection"`` bisects
    on :func:`assess` instead; it is also the fallback when the direct
    minimization breaks down on ill-conditioned loops.
    """
    kind = _as_kind(kind)
    if not is_hurwitz(sys.A):
        raise NotStableError("system is not internally stable; the measure is infinite")
    if sys.B.shape[1] == 0 or sys.C.shape[0] == 0:
        raise InputError("measure needs at least one disturbance and one output")
    if method == "bisection":
        return _bisect_measure(sys, weights, kind, rtol, margin)
    if method != "sdp":
        raise InputError(f"unknown method {method!r}")
    prob = measure_problem(sys, weights, kind)
    try:
        upper = minimize_linear(prob, margin=margin)
    except (NumericalError, UndecidedError) as exc:
        log.info("direct minimization failed (%s); falling back to bisection", exc)
        return _bisect_measure(sys, weights, kind, rtol, margin)
    g_hi = float(np.sqrt(upper.value))
    try:
        relaxed = minimize_linear(prob, margin=margin, strict=False)
        g_lo = float(np.sqrt(max(relaxed.lower_bound, 0.0)))
    except (NumericalError, UndecidedError):
        g_lo = 0.0
    g_lo = min(g_lo, g_hi)
    report = PerformanceReport(g_hi, g_lo, upper.values["X"], kind)
    if g_hi - g_lo > rtol * g_hi:
        log.debug("sdp band [%g, %g] wider than rtol; bisecting", g_lo, g_hi)
        report = _bisect_measure(sys, weights, kind, rtol, margin, bracket=(g_lo, g_hi, report.X))
    return report


def _bisect_measure(sys, weights, kind, rtol, margin, bracket=None) -> PerformanceReport:
    if bracket is None:
        lo = freq_sweep_j0(sys, weights)
        hi = max(lo, 1e-3) * 2.0
        X = None
        for _ in range(60):
            res = assess(sys, weights, hi, kind, margin)
            if res.feasible:
                X = res.values["X"]
                break
            lo, hi = hi, hi * 2.0
        if X is None:
            raise UndecidedError("no feasible gamma found while expanding the bracket")
    else:
        lo, hi, X = bracket
    for _ in range(200):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        res = assess(sys, weights, mid, kind, margin)
        if res.feasible:
            hi, X = mid, res.values["X"]
        else:
            lo = mid
    return PerformanceReport(hi, lo, X, kind)


@dataclass
class RiccatiData:
    A0: np.ndarray
    R0: np.ndarray
    Q0: np.ndarray
    R1: np.ndarray


def riccati_data(sys: LinearSystem, weights, gamma: float) -> RiccatiData:
    P, Q = _weights_pq(weights)
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R1 = sym(gamma**2 * P - D.T @ Q @ D)
    if np.linalg.eigvalsh(R1)[0] <= 0:
        raise InputError("gamma^2 P - D^T Q D must be positive definite (gamma too small)")
    R1i = np.linalg.inv(R1)
    return RiccatiData(
        A0=A + B @ R1i @ D.T @ Q @ C,
        R0=sym(B @ R1i @ B.T),
        Q0=sym(C.T @ (Q + Q @ D @ R1i @ D.T @ Q) @ C),
        R1=R1,
    )


def riccati_residual(data: RiccatiData, X: np.ndarray) -> float:
    return float(np.linalg.norm(data.A0.T @ X + X @ data.A0 + X @ data.R0 @ X + data.Q0, 2))


def riccati_stabilizing(sys: LinearSystem, weights, gamma: float,
                        critical_tol: float = 1e-8) -> np.ndarray:
    """Stabilizing solution of ``A0^T X + X A0 + X R0 X + Q0 = 0``, i.e. the
    one with ``A0 + R0 X`` Hurwitz, from the Hamiltonian
    ``[[A0, R0], [-Q0, -A0^T]]``."""
    data = riccati_data(sys, weights, gamma)
    r = sys.order
    Ham = np.block([[data.A0, data.R0], [-data.Q0, -data.A0.T]])
    V = stable_invariant_subspace(Ham, critical_tol)
    V1, V2 = V[:r], V[r:]
    if np.linalg.cond(V1) > 1e12:
        raise NumericalError("stable subspace is not a graph; no stabilizing solution")
    X = sym(np.linalg.solve(V1.T, V2.T).T)
    scale = max(1.0, np.linalg.norm(data.Q0, 2), np.linalg.norm(X, 2) * np.linalg.norm(data.A0, 2))
    res = riccati_residual(data, X)
    if res > 1e-8 * scale:
        raise NumericalError(f"Riccati residual {res:.2e} exceeds tolerance")
    if not is_hurwitz(data.A0 + data.R0 @ X):
        raise NumericalError("Riccati solution is not stabilizing")
    return X


def _normalize_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12 * max(1.0, np.abs(v).max()))
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def worst_case(sys: LinearSystem, weights, report: PerformanceReport,
               reduced: ReducedPlant | None = None,
               control: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
               kernel_tol: float = KERNEL_TOL, loose_tol: float = 1e-3) -> WorstCase:
    """Worst-case disturbance gain and initial vector.

    The Riccati equation is solved at ``report.gamma_feasible``. For the
    ``J`` branch ``xi10`` is the unit vector spanning the numerical kernel
    of ``G^T X G - gamma^2 Hbar`` (smallest singular direction when the band
    leaves nothing below ``kernel_tol``); for ``J0`` it is zero. With
    ``reduced`` given the descriptor-coordinate ``x0`` is lifted;
    ``control(x_init, w0)`` supplies ``u(0)`` for closed loops.
    """
    gamma = report.gamma_feasible
    X = riccati_stabilizing(sys, weights, gamma)
    data = riccati_data(sys, weights, gamma)
    P, Q = _weights_pq(weights)
    Kstar = np.linalg.solve(data.R1, sys.B.T @ X + sys.D.T @ Q @ sys.C)
    G = sys.init_map
    r0 = G.shape[1]
    if report.kind is Measure.J0:
        xi10 = np.zeros(r0)
        residual = 0.0
    else:
        _check_hbar(sys)
        M = sym(G.T @ X @ G - gamma**2 * sys.Hbar)
        basis = kernel_basis(M, kernel_tol)
        U, sv, Vt = np.linalg.svd(M)
        scale = max(np.linalg.norm(gamma**2 * sys.Hbar, 2), 1e-300)
        if basis.shape[1] == 0:
            if sv[-1] > loose_tol * scale:
                raise NumericalError(
                    f"Ker(X - J^2 Hbar) is empty: smallest singular value {sv[-1]:.3e} "
                    f"(relative {sv[-1] / scale:.3e}); the J band may be too wide or J = J0"
                )
        xi10 = _normalize_sign(Vt[-1].copy())
        residual = float(sv[-1] / scale)
    x_init = G @ xi10
    w0 = Kstar @ x_init
    x0 = None
    if reduced is not None:
        u0 = None if control is None else control(x_init, w0)
        x0 = lift_state(reduced, xi10, w0, u0)
    return WorstCase(Kstar, xi10, x_init, w0, x0, gamma, report.kind, X, residual)


def default_grid(sys: LinearSystem, n: int = 200) -> np.ndarray:
    grid = np.concatenate([[0.0], np.logspace(-3, 3, n)])
    if sys.order:
        poles = np.abs(np.linalg.eigvals(sys.A).imag)
        grid = np.concatenate([grid, poles[poles > 0]])
    return np.unique(grid)


def freq_sweep_j0(sys: LinearSystem, weights, grid=None, refine: bool = True) -> float:
    """Peak of ``sigma_max(Q^{1/2} H(i w) P^{-1/2})`` over the grid, polished
    by bounded scalar maximization around the best local peaks. A lower
    bound on ``J0`` that is independent of the LMI machinery."""
    P, Q = _weights_pq(weights)
    Qh, Pih = sqrtm_psd(Q), inv_sqrtm_pd(P)
    if sys.B.size == 0 or sys.C.size == 0:
        return float(np.linalg.norm(Qh @ sys.D @ Pih, 2)) if sys.D.size else 0.0

    def gain(w: float) -> float:
        return float(np.linalg.norm(Qh @ system_transfer(sys, 1j * w) @ Pih, 2))

    grid = default_grid(sys) if grid is None else np.unique(np.asarray(grid, float))
    vals = np.array([gain(w) for w in grid])
    best = float(vals.max())
    best = max(best, float(np.linalg.norm(Qh @ sys.D @ Pih, 2)))
    if refine and grid.size > 1:
        order = np.argsort(vals)[::-1]
        peaks = [i for i in order if (i == 0 or vals[i] >= vals[i - 1])
                 and (i == grid.size - 1 or vals[i] >= vals[i + 1])][:5]
        for i in peaks:
            a = grid[max(i - 1, 0)]
            b = grid[min(i + 1, grid.size - 1)]
            if b <= a:
                continue
            res = minimize_scalar(lambda w: -gain(w), bounds=(a, b), method="bounded",
                                  options={"xatol": 1e-12 * max(1.0, b)})
            best = max(best, -float(res.fun))
    return best
