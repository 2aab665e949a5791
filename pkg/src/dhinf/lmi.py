"""Symmetric affine matrix inequalities over named matrix variables.

A constraint is ``F(V) = F0 + sum(He(left @ kron(V, I_q) @ right))`` with
``He(M) = M + M^T``, and either ``F(V) < -margin I`` (strict, sense ``NEG``)
or ``F(V) >= 0`` (sense ``PSD``). Problems are lowered to the standard
vectorized form ``sum_i x_i F_i`` and handed to the cvxopt primal-dual
interior-point SDP solver.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers

from .errors import InfeasibleError, InputError, NumericalError, UndecidedError
from .matops import Definiteness, definiteness, sym

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 1e-7
DUAL_CERT_TOL = 1e-4
DUAL_CERT_GAP = 1e-3
SOLVER_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-10,
    "reltol": 1e-10,
    "feastol": 1e-10,
    "maxiters": 100,
}


@dataclass(frozen=True)
class DecisionVar:
    """Matrix unknown. ``symmetric=True`` requires a square shape."""

    name: str
    rows: int
    cols: int
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric and self.rows != self.cols:
            raise InputError(f"symmetric variable {self.name} must be square")

    @classmethod
    def sym(cls, name: str, d: int) -> "DecisionVar":
        return cls(name, d, d, True)

    @classmethod
    def full(cls, name: str, p: int, q: int) -> "DecisionVar":
        return cls(name, p, q, False)

    @property
    def size(self) -> int:
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def _index(self):
        if self.symmetric:
            return [(i, j) for i in range(self.rows) for j in range(i, self.rows)]
        return [(i, j) for i in range(self.rows) for j in range(self.cols)]

    def basis(self) -> list[np.ndarray]:
        out = []
        for i, j in self._index():
            B = np.zeros((self.rows, self.cols))
            B[i, j] = 1.0
            if self.symmetric:
                B[j, i] = 1.0
            out.append(B)
        return out

    def unpack(self, params: np.ndarray) -> np.ndarray:
        V = np.zeros((self.rows, self.cols))
        for value, (i, j) in zip(params, self._index()):
            V[i, j] = value
            if self.symmetric:
                V[j, i] = value
        return V


@dataclass(frozen=True)
class Term:
    var: str
    left: np.ndarray
    right: np.ndarray

    def contribution(self, V: np.ndarray) -> np.ndarray:
        q = self.left.shape[1] // V.shape[0] if V.shape[0] else 1
        M = self.left @ np.kron(V, np.eye(q)) @ self.right
        return M + M.T


class Sense(str, enum.Enum):
    NEG = "neg"
    PSD = "psd"


@dataclass
class AffineConstraint:
    constant: np.ndarray
    terms: list[Term] = field(default_factory=list)
    sense: Sense = Sense.NEG
    name: str = ""

    @property
    def dim(self) -> int:
        return self.constant.shape[0]

    def evaluate(self, values: dict[str, np.ndarray]) -> np.ndarray:
        F = np.array(self.constant, dtype=float)
        for t in self.terms:
            F = F + t.contribution(values[t.var])
        return sym(F)


class BlockLmi:
    """Assemble a block-structured constraint.

    ``add(i, j, a, var, b)`` places ``a V b`` in block ``(i, j)`` and its
    transpose in ``(j, i)``; on the diagonal (``i == j``) it adds
    ``a V b + (a V b)^T``. A scalar variable times a matrix ``M`` is written
    as ``add(i, j, M, mu, I)``.
    """

    def __init__(self, sizes: Iterable[int], name: str = "", sense: Sense = Sense.NEG):
        self.sizes = list(sizes)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.dim = int(self.offsets[-1])
        self.constant = np.zeros((self.dim, self.dim))
        self.terms: list[Term] = []
        self.name = name
        self.sense = sense

    def _embed(self, i: int) -> np.ndarray:
        P = np.zeros((self.dim, self.sizes[i]))
        P[self.offsets[i]:self.offsets[i + 1], :] = np.eye(self.sizes[i])
        return P

    def const(self, i: int, j: int, M) -> "BlockLmi":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.size == 0:
            return self
        si = slice(self.offsets[i], self.offsets[i + 1])
        sj = slice(self.offsets[j], self.offsets[j + 1])
        self.constant[si, sj] += M
        if i != j:
            self.constant[sj, si] += M.T
        return self

    def add(self, i: int, j: int, a, var: DecisionVar, b) -> "BlockLmi":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.size == 0 or b.size == 0:
            return self
        self.terms.append(Term(var.name, self._embed(i) @ a, b @ self._embed(j).T))
        return self

    def add_raw(self, left, var: DecisionVar, right) -> "BlockLmi":
        """Add ``He(left V right)`` with full-size ``left``/``right``."""
        left = np.atleast_2d(np.asarray(left, dtype=float))
        right = np.atleast_2d(np.asarray(right, dtype=float))
        if left.size and right.size:
            self.terms.append(Term(var.name, left, right))
        return self

    def build(self) -> AffineConstraint:
        return AffineConstraint(self.constant.copy(), list(self.terms), self.sense, self.name)


def psd_constraint(sizes: Iterable[int], name: str = "") -> BlockLmi:
    """Start a ``>= 0`` block constraint of the given block sizes."""
    return BlockLmi(sizes, name=name, sense=Sense.PSD)


@dataclass
class LmiProblem:
    variables: list[DecisionVar]
    constraints: list[AffineConstraint]
    objective: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise InputError("decision variable names must be unique")
        known = set(names)
        for c in self.constraints:
            for t in c.terms:
                if t.var not in known:
                    raise InputError(f"constraint {c.name!r} references undeclared variable {t.var!r}")

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.variables)

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        out, k = {}, 0
        for v in self.variables:
            out[v.name] = v.unpack(x[k:k + v.size])
            k += v.size
        return out

    def dump(self) -> str:
        """Human-readable listing of blocks and terms (debugging aid)."""
        lines = [f"LmiProblem: {len(self.variables)} variables, {len(self.constraints)} constraints"]
        for v in self.variables:
            kind = "sym" if v.symmetric else "full"
            lines.append(f"  var {v.name}: {kind} {v.rows}x{v.cols}")
        for c in self.constraints:
            rel = "< -eps I" if c.sense is Sense.NEG else ">= 0"
            lines.append(f"  constraint {c.name or '?'} ({c.dim}x{c.dim}) {rel}")
            lines.append("    constant:\n" + _indent(np.array2string(c.constant, precision=5), 6))
            for t in c.terms:
                lines.append(f"    term He(L {t.var} R): L {t.left.shape}, R {t.right.shape}")
        if self.objective:
            lines.append("  minimize " + " + ".join(f"<C_{k}, {k}>" for k in self.objective))
        return "\n".join(lines)


def _indent(text: str, n: int) -> str:
    pad = " " * n
    return "\n".join(pad + line for line in text.splitlines())


@dataclass
class _Lowered:
    F0: list[np.ndarray]
    Fi: list[list[np.ndarray]]
    scale: list[float]


def _lower(problem: LmiProblem) -> _Lowered:
    F0, Fi, scales = [], [], []
    bases = {v.name: v.basis() for v in problem.variables}
    for c in problem.constraints:
        coeffs = []
        by_var: dict[str, list[Term]] = {}
        for t in c.terms:
            by_var.setdefault(t.var, []).append(t)
        for v in problem.variables:
            terms = by_var.get(v.name, [])
            for B in bases[v.name]:
                M = np.zeros((c.dim, c.dim))
                for t in terms:
                    M += t.contribution(B)
                coeffs.append(M)
        nrm = np.linalg.norm(c.constant, 2) if c.constant.size else 0.0
        if nrm == 0.0:
            nrm = max((np.linalg.norm(M, 2) for M in coeffs), default=1.0)
        scale = 1.0 / max(nrm, 1e-12)
        F0.append(sym(c.constant))
        Fi.append(coeffs)
        scales.append(scale)
    return _Lowered(F0, Fi, scales)


def _objective_vector(problem: LmiProblem) -> np.ndarray:
    c = np.zeros(problem.n_params)
    if not problem.objective:
        return c
    k = 0
    for v in problem.variables:
        C = problem.objective.get(v.name)
        if C is not None:
            C = np.atleast_2d(np.asarray(C, float))
            for idx, B in enumerate(v.basis()):
                c[k + idx] = float(np.sum(C * B))
        k += v.size
    return c


def _vec(M: np.ndarray) -> np.ndarray:
    return M.reshape(-1, order="F")


def _identifiable_basis(blocks, lin, N: int) -> np.ndarray:
    """Orthonormal basis of the parameter directions the constraints see.

    Variables entering only through combinations (e.g. ``K C`` with rank
    deficient ``C``) make the coefficient map rank deficient, which the
    interior-point KKT solve cannot handle; solving over this basis picks
    the minimum-norm representative instead."""
    stacked = [G for G, _ in blocks] + ([lin[0]] if lin is not None else [])
    M = np.vstack(stacked) if stacked else np.zeros((0, N))
    if M.shape[0] == 0:
        return np.eye(N)
    _, sv, Vt = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * max(sv[0], 1e-300))) if sv.size else 0
    if rank == N:
        return np.eye(N)
    return Vt[:rank].T


def _run_sdp(c, blocks, lin=None, options=None):
    """``blocks``: list of (G columns stacked as d^2 x N array, h d x d)."""
    N = c.size
    T = _identifiable_basis(blocks, lin, N)
    if T.shape[1] < N:
        log.debug("coefficient map has rank %d < %d; solving in the reduced basis", T.shape[1], N)
        sol = _run_sdp_full(T.T @ c, [(G @ T, h) for G, h in blocks],
                            None if lin is None else (lin[0] @ T, lin[1]), options)
        if sol is not None and sol["x"] is not None:
            sol = dict(sol)
            sol["x"] = cvx_matrix(T @ np.array(sol["x"]).reshape(-1))
        return sol
    sol = _run_sdp_full(c, blocks, lin, options)
    if sol is None or sol["status"] == "unknown":
        alt = _run_clarabel(c, blocks, lin, options)
        if alt is not None and (sol is None or alt["status"] != "unknown"):
            return alt
    return sol


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "PrimalInfeasible": "primal infeasible",
    "DualInfeasible": "dual infeasible",
}


def _svec_rows(d: int):
    """Row selection and scaling from column-major ``vec`` to the scaled
    upper-triangular ``svec`` of a PSD triangle cone."""
    idx, scale = [], []
    for j in range(d):
        for i in range(j + 1):
            idx.append(i + j * d)
            scale.append(1.0 if i == j else np.sqrt(2.0))
    return np.array(idx, dtype=int), np.array(scale)


def _run_clarabel(c, blocks, lin=None, options=None):
    """Second backend, used when cvxopt stalls or raises. Its homogeneous
    self-dual embedding copes with unattained optima and degenerate duals."""
    try:
        import clarabel
    except ImportError:
        log.debug("clarabel not installed; no fallback backend")
        return None
    import scipy.sparse as sp

    rows, rhs, cones = [], [], []
    if lin is not None:
        rows.append(lin[0])
        rhs.append(np.asarray(lin[1], float).reshape(-1))
        cones.append(clarabel.NonnegativeConeT(lin[0].shape[0]))
    for G, h in blocks:
        d = h.shape[0]
        idx, scale = _svec_rows(d)
        rows.append(G[idx] * scale[:, None])
        rhs.append(_vec(sym(h))[idx] * scale)
        cones.append(clarabel.PSDTriangleConeT(d))
    A = sp.csc_matrix(np.vstack(rows))
    b = np.concatenate(rhs)
    N = c.size
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int((options or {}).get("maxiters", 100)) * 2
    try:
        res = clarabel.DefaultSolver(sp.csc_matrix((N, N)), np.asarray(c, float), A, b, cones, settings).solve()
    except Exception as exc:  # noqa: BLE001 - backend failures are reported as undecided
        log.debug("clarabel raised %s", exc)
        return None
    status = _CLARABEL_STATUS.get(str(res.status), "unknown")
    x = np.array(res.x, dtype=float)
    ok = status == "optimal" or str(res.status).startswith("Almost")
    return {
        "status": status,
        "x": cvx_matrix(x) if ok else None,
        "primal objective": float(res.obj_val),
        "dual objective": float(res.obj_val_dual) if ok else None,
        "backend": "clarabel",
    }


def _run_sdp_full(c, blocks, lin=None, options=None):
    opts = dict(SOLVER_OPTIONS)
    if options:
        opts.update(options)
    Gs = [cvx_matrix(G) for G, _ in blocks]
    hs = [cvx_matrix(h) for _, h in blocks]
    kwargs = {}
    if lin is not None:
        kwargs["Gl"] = cvx_matrix(lin[0])
        kwargs["hl"] = cvx_matrix(lin[1])
    sol = None
    for relax in (1.0, 100.0):
        for key in ("abstol", "reltol", "feastol"):
            opts[key] = SOLVER_OPTIONS[key] * relax if not (options and key in options) else options[key] * relax
        try:
            sol = cvx_solvers.sdp(cvx_matrix(c), Gs=Gs, hs=hs, options=opts, **kwargs)
        except (ValueError, ArithmeticError) as exc:
            log.debug("sdp solver raised %s", exc)
            sol = None
        if sol is not None and sol["status"] != "unknown":
            break
        # stalls just above tight tolerances are common; retry looser once
    return sol


def verify(problem: LmiProblem, values: dict[str, np.ndarray], margin: float = DEFAULT_MARGIN) -> bool:
    """Independent re-check through ``definiteness``: scaled strict
    constraints below ``-margin``, semidefinite ones above ``-margin/100``."""
    low = _lower(problem)
    for c, s in zip(problem.constraints, low.scale):
        F = s * c.evaluate(values)
        if c.sense is Sense.NEG:
            if definiteness(F, margin) is not Definiteness.NEGATIVE:
                return False
        elif np.linalg.eigvalsh(F)[0] < -margin * 1e-2:
            return False
    return True


def constraint_margins(problem: LmiProblem, values) -> list[float]:
    """Largest scaled eigenvalue of every strict constraint (negative is good)."""
    low = _lower(problem)
    out = []
    for c, s in zip(problem.constraints, low.scale):
        F = s * c.evaluate(values)
        lam = np.linalg.eigvalsh(F)
        out.append(float(lam[-1] if c.sense is Sense.NEG else -lam[0]))
    return out


class Status(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNDECIDED = "undecided"


@dataclass
class FeasibilityResult:
    status: Status
    values: dict[str, np.ndarray] | None
    best_margin: float
    solver_status: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


def solve_feasibility(problem: LmiProblem, margin: float = DEFAULT_MARGIN,
                      budget: int = 100, cap: float = 1e-2) -> FeasibilityResult:
    """Find an assignment satisfying every constraint with the given margin.

    Solved as ``min t`` subject to ``F_j(x) <= t I`` for strict constraints
    and ``t >= -cap``. Below the cap the optimal ``-t`` is the best
    achievable (scaled) margin, so infeasibility comes with a quantitative
    certificate. The cap keeps the optimum off degenerate faces, where
    interior-point iterations stall.
    """
    if margin <= 0:
        raise InputError("margin must be positive")
    if not cap > margin:
        raise InputError("cap must exceed margin")
    low = _lower(problem)
    N = problem.n_params
    blocks = []
    for con, F0, Fi, s in zip(problem.constraints, low.F0, low.Fi, low.scale):
        d = con.dim
        if con.sense is Sense.NEG:
            cols = [_vec(s * F) for F in Fi] + [_vec(-np.eye(d))]
            blocks.append((np.column_stack(cols), -s * F0))
        else:
            cols = [_vec(-s * F) for F in Fi] + [np.zeros(d * d)]
            blocks.append((np.column_stack(cols), s * F0))
    c = np.zeros(N + 1)
    c[-1] = 1.0
    lin_G = np.zeros((1, N + 1))
    lin_G[0, -1] = -1.0
    sol = _run_sdp(c, blocks, (lin_G, np.full(1, cap)), {"maxiters": budget})
    if sol is None or sol["x"] is None:
        status = "exception" if sol is None else sol["status"]
        if sol is not None and status == "primal infeasible":
            return FeasibilityResult(Status.INFEASIBLE, None, -np.inf, status)
        return FeasibilityResult(Status.UNDECIDED, None, -np.inf, status)
    x = np.array(sol["x"]).reshape(-1)
    values = problem.unpack(x[:N])
    t = float(x[-1])
    if verify(problem, values, margin):
        return FeasibilityResult(Status.FEASIBLE, values, -t, sol["status"])
    if sol["status"] == "optimal":
        return FeasibilityResult(Status.INFEASIBLE, values, -t, sol["status"])
    # unbounded primal iterates stall the solver; a nearly feasible dual with
    # objective well above zero still bounds min t away from -margin
    dual, dinf = sol.get("dual objective"), sol.get("dual infeasibility")
    if dual is not None and dinf is not None and dinf <= DUAL_CERT_TOL and dual >= DUAL_CERT_GAP:
        return FeasibilityResult(Status.INFEASIBLE, values, -float(dual), "unknown (dual certificate)")
    return FeasibilityResult(Status.UNDECIDED, values, -t, sol["status"])


@dataclass
class MinimizeResult:
    value: float
    values: dict[str, np.ndarray]
    lower_bound: float
    solver_status: str


def minimize_linear(problem: LmiProblem, margin: float = DEFAULT_MARGIN,
                    budget: int = 100, strict: bool = True) -> MinimizeResult:
    """Minimize the linear objective under the constraints.

    With ``strict`` the ``NEG`` constraints are imposed as ``<= -2 margin``
    so the returned point passes :func:`verify` at ``margin``. The
    ``lower_bound`` is the solver's dual objective of the problem it solved.
    """
    if not problem.objective:
        raise InputError("minimize_linear needs an objective")
    low = _lower(problem)
    shift = 2.0 * margin if strict else 0.0
    blocks = []
    for con, F0, Fi, s in zip(problem.constraints, low.F0, low.Fi, low.scale):
        d = con.dim
        if con.sense is Sense.NEG:
            G = np.column_stack([_vec(s * F) for F in Fi]) if Fi else np.zeros((d * d, 0))
            blocks.append((G, -s * F0 - shift * np.eye(d)))
        else:
            G = np.column_stack([_vec(-s * F) for F in Fi]) if Fi else np.zeros((d * d, 0))
            blocks.append((G, s * F0))
    c = _objective_vector(problem)
    sol = _run_sdp(c, blocks, None, {"maxiters": budget})
    if sol is None:
        raise NumericalError("SDP solver failed")
    status = sol["status"]
    if status == "primal infeasible":
        raise InfeasibleError("LMI problem is infeasible")
    if status == "dual infeasible":
        raise NumericalError("LMI objective is unbounded below")
    if sol["x"] is None:
        raise UndecidedError(f"SDP solver returned no point (status {status})")
    x = np.array(sol["x"]).reshape(-1)
    values = problem.unpack(x)
    if strict and not verify(problem, values, margin):
        if status == "optimal":
            raise NumericalError("solver point fails independent verification")
        raise UndecidedError(f"solver stopped with status {status!r} at an unverified point")
    value = float(c @ x)
    dual = sol.get("dual objective")
    lower = float(dual) if dual is not None else -np.inf
    return MinimizeResult(value, values, lower, status)
