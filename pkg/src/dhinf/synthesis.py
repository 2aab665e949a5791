"""Static and dynamic output-feedback synthesis for the reduced plant

    xi' = A xi + B1 w + B2 u,  z = C1 xi + D11 w + D12 u,  y = C2 xi + D21 w + D22 u

and assembly of the resulting closed loops, both reduced and in descriptor
coordinates. Every returned regulator has been re-verified by
:func:`dhinf.analysis.compute_measure` on the assembled closed loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .analysis import Measure, PerformanceReport, _as_kind, compute_measure
from .descriptor import DescriptorPlant, LinearSystem, ReducedPlant
from .errors import (
    DhinfError,
    InfeasibleError,
    InputError,
    NotStableError,
    NumericalError,
    UndecidedError,
)
from .lmi import (
    DEFAULT_MARGIN,
    BlockLmi,
    DecisionVar,
    LmiProblem,
    Status,
    minimize_linear,
    psd_constraint,
    solve_feasibility,
)
from .matops import is_hurwitz, kernel_basis, numerical_rank, sym

log = logging.getLogger(__name__)

FAR_BOXES = (1e4, 1e6, 1e8)


@dataclass
class SynthesisOptions:
    margin: float = DEFAULT_MARGIN
    coupling_tol: float = 1e-4
    max_iter: int = 50
    kernel_tol: float = 1e-7
    verify_rtol: float = 1e-6
    wellposed_tol: float = 1e-8
    margin_retries: int = 3
    var_bound: float = 1e2
    reduce_order: bool = True


@dataclass(frozen=True)
class Regulator:
    """``u = K y`` (static) or ``eta' = Z eta + V y, u = U eta + K y`` with
    ``eta(0) = 0`` (dynamic)."""

    K: np.ndarray
    Z: np.ndarray | None = None
    V: np.ndarray | None = None
    U: np.ndarray | None = None

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, float))
        object.__setattr__(self, "K", K)
        parts = (self.Z, self.V, self.U)
        if all(x is None for x in parts):
            return
        if any(x is None for x in parts):
            raise InputError("a dynamic regulator needs all of Z, V and U")
        m, l = K.shape
        Z = np.atleast_2d(np.asarray(self.Z, float))
        p = Z.shape[0]
        V = np.asarray(self.V, float).reshape(p, l)
        U = np.asarray(self.U, float).reshape(m, p)
        if Z.shape != (p, p):
            raise InputError(f"Z must be square, got {Z.shape}")
        for name, val in (("Z", Z), ("V", V), ("U", U)):
            object.__setattr__(self, name, val)

    @property
    def kind(self) -> str:
        return "static" if self.Z is None else "dynamic"

    @property
    def p(self) -> int:
        return 0 if self.Z is None else self.Z.shape[0]

    def parts(self):
        """``(K, Z, V, U)`` with zero-sized dynamic parts for static regulators."""
        m, l = self.K.shape
        if self.Z is None:
            return self.K, np.zeros((0, 0)), np.zeros((0, l)), np.zeros((m, 0))
        return self.K, self.Z, self.V, self.U


class DescriptorLoop(NamedTuple):
    """Closed loop ``E x' = A0 x + B0 w, z = C0 x + D0 w`` over ``(x, eta)``."""

    E: np.ndarray
    A0: np.ndarray
    B0: np.ndarray
    C0: np.ndarray
    D0: np.ndarray


@dataclass
class ClosedLoop:
    system: LinearSystem
    regulator: Regulator
    K0: np.ndarray
    U0: np.ndarray
    V0: np.ndarray
    Z0: np.ndarray
    C2r: np.ndarray
    D21r: np.ndarray
    K1: np.ndarray | None = None
    descriptor: DescriptorLoop | None = None
    intermediates: dict = field(default_factory=dict)

    @property
    def spectrum(self) -> np.ndarray:
        return np.sort_complex(np.linalg.eigvals(self.system.A))

    def control(self, state, w) -> np.ndarray:
        """Control ``u`` (``v`` under preliminary feedback) at a closed-loop state."""
        state = np.asarray(state, float).reshape(-1)
        w = np.asarray(w, float).reshape(-1)
        r = self.C2r.shape[1]
        xi, eta = state[:r], state[r:]
        return self.K0 @ (self.C2r @ xi + self.D21r @ w) + self.U0 @ eta


def _wellposed_inverse(M: np.ndarray, what: str, tol: float) -> np.ndarray:
    if M.size == 0:
        return M
    if np.linalg.svd(M, compute_uv=False)[-1] < tol:
        raise NumericalError(f"ill-posed loop: {what} is singular")
    return np.linalg.inv(M)


def close_loop(reduced: ReducedPlant, regulator: Regulator, plant: DescriptorPlant | None = None,
               K1=None, tol: float = 1e-8) -> ClosedLoop:
    """Assemble the reduced closed loop and, with ``plant`` given, the
    descriptor-coordinate loop (``K1`` is a preliminary feedback, if any,
    and ``reduced`` must then be the reduction of the transformed plant)."""
    red = reduced
    r, m, l = red.r, red.B2r.shape[1], red.C2r.shape[0]
    K, Z, V, U = regulator.parts()
    if K.shape != (m, l):
        raise InputError(f"K must be {m}x{l}, got {K.shape}")
    p = Z.shape[0]
    D22 = red.D22r
    Wi = _wellposed_inverse(np.eye(m) - K @ D22, "I - K D22", tol)
    Wo = _wellposed_inverse(np.eye(l) - D22 @ K, "I - D22 K", tol)
    K0 = Wi @ K
    U0 = Wi @ U
    V0 = V @ Wo
    Z0 = Z + V @ D22 @ Wi @ U
    Ah = np.block([[red.Ar, np.zeros((r, p))], [np.zeros((p, r + p))]])
    B1h = np.vstack([red.B1r, np.zeros((p, red.B1r.shape[1]))])
    B2h = np.block([[red.B2r, np.zeros((r, p))], [np.zeros((p, m)), np.eye(p)]])
    C1h = np.hstack([red.C1r, np.zeros((red.C1r.shape[0], p))])
    D12h = np.hstack([red.D12r, np.zeros((red.D12r.shape[0], p))])
    C2h = np.block([[red.C2r, np.zeros((l, p))], [np.zeros((p, r)), np.eye(p)]])
    D21h = np.vstack([red.D21r, np.zeros((p, red.D21r.shape[1]))])
    K0h = np.block([[K0, U0], [V0, Z0]])
    G = np.vstack([np.eye(r), np.zeros((p, r))]) if p else None
    system = LinearSystem(
        A=Ah + B2h @ K0h @ C2h,
        B=B1h + B2h @ K0h @ D21h,
        C=C1h + D12h @ K0h @ C2h,
        D=red.D11r + D12h @ K0h @ D21h,
        Hbar=red.Hbar,
        G=G,
    )
    loop = ClosedLoop(system, regulator, K0, U0, V0, Z0, red.C2r, red.D21r)
    if plant is not None:
        loop.K1, loop.descriptor, loop.intermediates = _descriptor_loop(
            plant, red, regulator, K0, K1, tol)
    return loop


def _descriptor_loop(plant, red, regulator, K0, K1, tol):
    m, l = plant.m, plant.l
    K, Z, V, U = regulator.parts()
    p = Z.shape[0]
    K1 = np.zeros((m, l)) if K1 is None else np.atleast_2d(np.asarray(K1, float))
    K11 = _wellposed_inverse(np.eye(m) - K1 @ plant.D22, "I - K1 D22", tol)
    K10 = K11 @ K1
    D22 = red.D22r
    G1 = K0 @ red.C2r @ red.E2.T
    G2 = _wellposed_inverse(np.eye(m) - K @ D22, "I - K D22", tol) @ U
    G3 = K0 @ red.D21r
    n = plant.n
    E = np.block([[plant.E, np.zeros((n, p))], [np.zeros((p, n)), np.eye(p)]])
    A0 = np.block([
        [plant.A + plant.B2 @ (K10 @ plant.C2 + K11 @ G1), plant.B2 @ K11 @ G2],
        [V @ (red.C2r @ red.E2.T + D22 @ G1), Z + V @ D22 @ G2],
    ])
    B0 = np.vstack([
        plant.B1 + plant.B2 @ (K10 @ plant.D21 + K11 @ G3),
        V @ (red.D21r + D22 @ G3),
    ])
    C0 = np.hstack([
        plant.C1 + plant.D12 @ (K10 @ plant.C2 + K11 @ G1),
        plant.D12 @ K11 @ G2,
    ])
    D0 = plant.D11 + plant.D12 @ (K10 @ plant.D21 + K11 @ G3)
    inter = {"K10": K10, "K11": K11, "G1": G1, "G2": G2, "G3": G3}
    return K1, DescriptorLoop(E, A0, B0, C0, D0), inter


@dataclass
class SynthesisResult:
    regulator: Regulator
    closed_loop: ClosedLoop
    report: PerformanceReport
    gamma: float
    kind: Measure
    info: dict = field(default_factory=dict)

    @property
    def achieved(self) -> float:
        return self.report.value


# ---------------------------------------------------------------------------
# LMI blocks


class _Plant(NamedTuple):
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray

    @classmethod
    def of(cls, red: ReducedPlant) -> "_Plant":
        return cls(red.Ar, red.B1r, red.B2r, red.C1r, red.C2r,
                   red.D11r, red.D12r, red.D21r, red.D22r)

    def augment(self, p: int) -> "_Plant":
        r, m, l = self.A.shape[0], self.B2.shape[1], self.C2.shape[0]
        s, k = self.B1.shape[1], self.C1.shape[0]
        z = np.zeros
        return _Plant(
            A=np.block([[self.A, z((r, p))], [z((p, r + p))]]),
            B1=np.vstack([self.B1, z((p, s))]),
            B2=np.block([[self.B2, z((r, p))], [z((p, m)), np.eye(p)]]),
            C1=np.hstack([self.C1, z((k, p))]),
            C2=np.block([[self.C2, z((l, p))], [z((p, r)), np.eye(p)]]),
            D11=self.D11,
            D12=np.hstack([self.D12, z((k, p))]),
            D21=np.vstack([self.D21, z((p, s))]),
            D22=np.block([[self.D22, z((l, p))], [z((p, m + p))]]),
        )


def _pq(weights):
    return np.atleast_2d(weights.P), np.atleast_2d(weights.Q)


def _x_condition(pl: _Plant, weights, gamma, X: DecisionVar, tol) -> BlockLmi | None:
    """``W_R^T [...] W_R < 0`` with ``W_R`` spanning ``Ker [C2, D21]``."""
    P, Q = _pq(weights)
    r, s = pl.A.shape[0], pl.B1.shape[1]
    WR = kernel_basis(np.hstack([pl.C2, pl.D21]), tol)
    if WR.shape[1] == 0:
        return None
    F0 = np.block([
        [pl.C1.T @ Q @ pl.C1, pl.C1.T @ Q @ pl.D11],
        [pl.D11.T @ Q @ pl.C1, pl.D11.T @ Q @ pl.D11 - gamma**2 * P],
    ])
    blk = BlockLmi([WR.shape[1]], name="X-condition")
    blk.const(0, 0, WR.T @ F0 @ WR)
    top = WR[:r]
    # X A + X B1 terms: He(top^T X [A, B1] WR)
    blk.add(0, 0, top.T, X, np.hstack([pl.A, pl.B1]) @ WR)
    return blk


def _y_condition(pl: _Plant, weights, gamma, Y: DecisionVar, tol) -> BlockLmi | None:
    """``W_L^T [...] W_L < 0`` with ``W_L`` spanning ``Ker [B2^T, D12^T]``."""
    P, Q = _pq(weights)
    r = pl.A.shape[0]
    Pi = np.linalg.inv(P)
    WL = kernel_basis(np.hstack([pl.B2.T, pl.D12.T]), tol)
    if WL.shape[1] == 0:
        return None
    F0 = np.block([
        [pl.B1 @ Pi @ pl.B1.T, pl.B1 @ Pi @ pl.D11.T],
        [pl.D11 @ Pi @ pl.B1.T, pl.D11 @ Pi @ pl.D11.T - gamma**2 * np.linalg.inv(Q)],
    ])
    blk = BlockLmi([WL.shape[1]], name="Y-condition")
    blk.const(0, 0, WL.T @ F0 @ WL)
    top = WL[:r]
    # A Y + Y C1^T terms: He([A; C1] Y top) projected
    blk.add(0, 0, WL.T @ np.vstack([pl.A, pl.C1]), Y, top)
    return blk


def _pos(V: DecisionVar, name: str) -> BlockLmi:
    d = V.rows
    return BlockLmi([d], name=name).add(0, 0, -0.5 * np.eye(d), V, np.eye(d))


def _below(V: DecisionVar, bound: np.ndarray, name: str) -> BlockLmi:
    """``V < bound``."""
    d = V.rows
    return BlockLmi([d], name=name).const(0, 0, -bound).add(0, 0, 0.5 * np.eye(d), V, np.eye(d))


def _coupling(X: DecisionVar, Y: DecisionVar, gamma: float) -> BlockLmi:
    r = X.rows
    blk = psd_constraint([r, r], name="W>=0")
    blk.add(0, 0, 0.5 * np.eye(r), X, np.eye(r))
    blk.add(1, 1, 0.5 * np.eye(r), Y, np.eye(r))
    blk.const(0, 1, gamma * np.eye(r))
    return blk


def _xy_problem(pl: _Plant, weights, gamma, kind: Measure, Hbar, tol, objective=None,
                bound: float | None = None) -> LmiProblem:
    r = pl.A.shape[0]
    X, Y = DecisionVar.sym("X", r), DecisionVar.sym("Y", r)
    blocks = [_x_condition(pl, weights, gamma, X, tol), _y_condition(pl, weights, gamma, Y, tol),
              _pos(X, "X>0"), _pos(Y, "Y>0"), _coupling(X, Y, gamma)]
    if bound is not None:
        blocks += [_below(X, bound * np.eye(r), "X<bound"), _below(Y, bound * np.eye(r), "Y<bound")]
    if kind is Measure.J:
        blocks.append(_below(X, gamma**2 * Hbar, "X<gamma^2 Hbar"))
    cons = [b.build() for b in blocks if b is not None]
    return LmiProblem([X, Y], cons, objective)


def _omega(pl: _Plant, weights, gamma, X: np.ndarray) -> np.ndarray:
    P, Q = _pq(weights)
    return np.block([
        [pl.A.T @ X + X @ pl.A, X @ pl.B1, pl.C1.T],
        [pl.B1.T @ X, -gamma**2 * P, pl.D11.T],
        [pl.C1, pl.D11, -np.linalg.inv(Q)],
    ])


def _k0_problem(pl: _Plant, weights, gamma, X: np.ndarray) -> LmiProblem:
    r, s, k = pl.A.shape[0], pl.B1.shape[1], pl.C1.shape[0]
    m, l = pl.B2.shape[1], pl.C2.shape[0]
    K0 = DecisionVar.full("K0", m, l)
    blk = BlockLmi([r, s, k], name="K0-LMI")
    blk.constant[:] = sym(_omega(pl, weights, gamma, X))
    L0t = np.vstack([X @ pl.B2, np.zeros((s, m)), pl.D12])
    R0 = np.hstack([pl.C2, pl.D21, np.zeros((l, k))])
    blk.add_raw(L0t, K0, R0)
    return LmiProblem([K0], [blk.build()])


def _solve_k0(pl: _Plant, weights, gamma, X, opts: SynthesisOptions) -> np.ndarray:
    """Solve the gain LMI at fixed ``X`` and return ``K = K0 (I + D22 K0)^{-1}``,
    re-solving with a larger margin when ``I + D22 K0`` is near singular."""
    l = pl.C2.shape[0]
    margin = opts.margin
    last = None
    for _ in range(opts.margin_retries + 1):
        res = solve_feasibility(_k0_problem(pl, weights, gamma, X), margin)
        if not res.feasible:
            raise UndecidedError(
                f"gain LMI infeasible at the coupled X (best margin {res.best_margin:.3e}, "
                f"solver {res.solver_status})"
            )
        K0 = res.values["K0"]
        M = np.eye(l) + pl.D22 @ K0
        if np.linalg.svd(M, compute_uv=False)[-1] > opts.wellposed_tol:
            return K0 @ np.linalg.inv(M)
        last = K0
        margin *= 10.0
        log.info("I + D22 K0 near singular; retrying with margin %g", margin)
    raise NumericalError(f"I + D22 K0 stays singular for K0 = {last.tolist()}")


def _verify(red, regulator, weights, gamma, kind, opts, plant=None, K1=None):
    loop = close_loop(red, regulator, plant, K1)
    if not is_hurwitz(loop.system.A):
        raise UndecidedError("synthesized regulator does not stabilize the reduced plant")
    try:
        report = compute_measure(loop.system, weights, kind, rtol=opts.verify_rtol, margin=opts.margin)
    except NotStableError:
        raise UndecidedError("synthesized closed loop is not stable") from None
    if not report.gamma_feasible < gamma:
        raise UndecidedError(
            f"verification failed: closed-loop {kind.value} = {report.value:.6g} is not below {gamma:g}"
        )
    return loop, report


def _check_common(red: ReducedPlant, weights, gamma, kind) -> Measure:
    kind = _as_kind(kind)
    if not gamma > 0:
        raise InputError("gamma must be positive")
    if red.B2r.shape[1] == 0 or red.C2r.shape[0] == 0:
        raise InputError("synthesis needs at least one control input and one measurement")
    if kind is Measure.J and red.Hbar is None:
        raise InputError("measure J needs Hbar; reduce the plant with its weights")
    return kind


def _feasible_xy(pl, weights, gamma, kind, Hbar, opts):
    """A well-conditioned point of the convex existence conditions.

    A boxed max-margin search (``||X||, ||Y|| < var_bound``) gives a margin
    ``m``; then ``tr(X + Y)`` is minimized at margin ``m / 4``, which keeps
    the point bounded and centred. Only the unboxed search refutes existence;
    when it stalls (the best margin is then approached only as the variables
    diverge), infeasibility under every box up to ``FAR_BOUND`` is reported.
    """
    def attempt(bound):
        return solve_feasibility(
            _xy_problem(pl, weights, gamma, kind, Hbar, opts.kernel_tol, bound=bound), opts.margin)

    res = None
    for bound in (opts.var_bound, None):
        res = attempt(bound)
        if res.feasible:
            break
    note = ""
    if res.status is Status.UNDECIDED:
        for bound in FAR_BOXES:
            boxed = attempt(bound)
            if boxed.status is not Status.INFEASIBLE:
                res = boxed if boxed.feasible else res
                break
        else:
            res, note = boxed, f" with ||X||, ||Y|| <= {FAR_BOXES[-1]:g}"
    if res.status is Status.INFEASIBLE:
        raise InfeasibleError(
            f"the convex existence conditions fail at gamma={gamma:g}{note} (best margin "
            f"{res.best_margin:.3e}); no regulator of any order p <= r reaches this gamma"
        )
    if not res.feasible:
        raise UndecidedError(f"LMI solver undecided on the existence conditions ({res.solver_status})")
    r = pl.A.shape[0]
    prob = _xy_problem(pl, weights, gamma, kind, Hbar, opts.kernel_tol,
                       objective={"X": np.eye(r), "Y": np.eye(r)})
    try:
        sol = minimize_linear(prob, margin=max(res.best_margin / 4.0, opts.margin))
        return sol.values["X"], sol.values["Y"]
    except DhinfError as exc:
        log.debug("trace refinement failed (%s); keeping the max-margin point", exc)
        return res.values["X"], res.values["Y"]


def _coupling_gap(X, Y, gamma) -> float:
    r = X.shape[0]
    return float(np.trace(X @ Y) / gamma**2 - r)


def synth_static(reduced: ReducedPlant, weights, gamma: float, kind=Measure.J,
                 opts: SynthesisOptions | None = None, plant=None, K1=None) -> SynthesisResult:
    """Static gain ``u = K y`` with verified closed-loop measure below ``gamma``.

    The rank coupling ``XY = gamma^2 I`` is approached by cone-complementarity
    linearization; once ``tr(XY) <= gamma^2 (r + coupling_tol)`` the gain LMI
    is solved at that ``X``. If it fails, iterations continue.
    """
    opts = opts or SynthesisOptions()
    kind = _check_common(reduced, weights, gamma, kind)
    pl = _Plant.of(reduced)
    r = reduced.r
    X, Y = _feasible_xy(pl, weights, gamma, kind, reduced.Hbar, opts)
    history = [_coupling_gap(X, Y, gamma)]
    last_error: DhinfError | None = None
    for it in range(opts.max_iter + 1):
        gap = history[-1]
        if gap <= opts.coupling_tol:
            try:
                K = _solve_k0(pl, weights, gamma, X, opts)
                reg = Regulator(K)
                loop, report = _verify(reduced, reg, weights, gamma, kind, opts, plant, K1)
                info = {"iterations": it, "coupling_gap": gap, "gap_history": history,
                        "coupling_residual": float(np.linalg.norm(X @ Y - gamma**2 * np.eye(r), 2)),
                        "X": X, "Y": Y}
                return SynthesisResult(reg, loop, report, gamma, kind, info)
            except (UndecidedError, NumericalError) as exc:
                last_error = exc
                log.debug("gain step failed at iteration %d: %s", it, exc)
        if it == opts.max_iter:
            break
        prob = _xy_problem(pl, weights, gamma, kind, reduced.Hbar, opts.kernel_tol,
                           objective={"X": Y, "Y": X})
        try:
            sol = minimize_linear(prob, margin=opts.margin)
        except (NumericalError, UndecidedError, InfeasibleError) as exc:
            last_error = exc
            break
        X, Y = sol.values["X"], sol.values["Y"]
        history.append(_coupling_gap(X, Y, gamma))
        log.debug("CCL iteration %d: coupling gap %.3e", it + 1, history[-1])
    detail = f"; last error: {last_error}" if last_error else ""
    raise UndecidedError(
        f"static synthesis undecided at gamma={gamma:g}: coupling gap {history[-1]:.3e} after "
        f"{len(history) - 1} iterations{detail}. Existence is not refuted; try a larger gamma "
        f"or a dynamic regulator"
    )


def _special_preconditions(red: ReducedPlant, weights, gamma, tol):
    r, l = red.r, red.C2r.shape[0]
    P, Q = _pq(weights)
    if l < r or numerical_rank(red.C2r, tol) != r:
        raise InputError(f"precondition violated: rank C2bar = r = {r} <= l = {l} fails")
    scale = max(1.0, np.abs(red.C2r).max())
    if red.D21r.size and np.abs(red.D21r).max() > tol * scale:
        raise InputError("precondition violated: D21bar must be zero")
    if red.D22r.size and np.abs(red.D22r).max() > tol * scale:
        raise InputError("precondition violated: D22bar must be zero")
    M = sym(red.D11r.T @ Q @ red.D11r - gamma**2 * P)
    if np.linalg.eigvalsh(M)[-1] >= 0:
        raise InputError("precondition violated: D11bar^T Q D11bar < gamma^2 P fails")


def synth_static_special(reduced: ReducedPlant, weights, gamma: float, kind=Measure.J,
                         path: str = "statement3", opts: SynthesisOptions | None = None,
                         plant=None, K1=None) -> SynthesisResult:
    """Static gain for plants with ``rank C2 = r <= l``, ``D21 = D22 = 0``:
    a convex problem, no rank coupling needed.

    ``path="statement3"`` solves the joint LMI in ``(Y, Z)`` and recovers
    ``K`` from ``K C2 Y = Z``; ``path="statement2"`` solves the ``Y``
    condition and then the gain LMI at ``X = gamma^2 Y^{-1}``.
    """
    opts = opts or SynthesisOptions()
    kind = _check_common(reduced, weights, gamma, kind)
    _special_preconditions(reduced, weights, gamma, opts.kernel_tol)
    pl = _Plant.of(reduced)
    r, m, l = reduced.r, pl.B2.shape[1], pl.C2.shape[0]
    s, k = pl.B1.shape[1], pl.C1.shape[0]
    P, Q = _pq(weights)
    Y = DecisionVar.sym("Y", r)
    lower = np.linalg.inv(reduced.Hbar) if kind is Measure.J else None
    if path == "statement3":
        Zv = DecisionVar.full("Z", m, r)
        g2 = gamma**2
        blk = BlockLmi([r, s, k], name="YZ-LMI")
        blk.add(0, 0, g2 * pl.A, Y, np.eye(r))
        blk.add(0, 0, g2 * pl.B2, Zv, np.eye(r))
        blk.const(0, 1, g2 * pl.B1)
        blk.add(0, 2, np.eye(r), Y, pl.C1.T)
        blk.add(2, 0, pl.D12, Zv, np.eye(r))
        blk.const(1, 1, -g2 * P)
        blk.const(1, 2, pl.D11.T)
        blk.const(2, 2, -np.linalg.inv(Q))
        cons = [blk.build(), _pos(Y, "Y>0").build()]
        if lower is not None:
            cons.append(_above(Y, lower, "Y>Hbar^-1").build())
        res = solve_feasibility(LmiProblem([Y, Zv], cons), opts.margin)
        if not res.feasible:
            raise InfeasibleError(f"no static regulator below gamma={gamma:g} (joint Y, Z LMI infeasible)")
        Yv, Zm = res.values["Y"], res.values["Z"]
        if l == r:
            K = np.linalg.solve((pl.C2 @ Yv).T, Zm.T).T
        else:
            K = Zm @ np.linalg.inv(Yv) @ np.linalg.pinv(pl.C2)
    elif path == "statement2":
        cons = [_y_condition(pl, weights, gamma, Y, opts.kernel_tol), _pos(Y, "Y>0")]
        if lower is not None:
            cons.append(_above(Y, lower, "Y>Hbar^-1"))
        res = solve_feasibility(LmiProblem([Y], [c.build() for c in cons if c is not None]), opts.margin)
        if not res.feasible:
            raise InfeasibleError(f"no static regulator below gamma={gamma:g} (Y condition infeasible)")
        X = gamma**2 * np.linalg.inv(res.values["Y"])
        K = _solve_k0(pl, weights, gamma, sym(X), opts)
    else:
        raise InputError(f"unknown path {path!r}; expected 'statement2' or 'statement3'")
    reg = Regulator(K)
    loop, report = _verify(reduced, reg, weights, gamma, kind, opts, plant, K1)
    return SynthesisResult(reg, loop, report, gamma, kind, {"path": path})


def _above(V: DecisionVar, bound: np.ndarray, name: str) -> BlockLmi:
    """``V > bound``."""
    d = V.rows
    return BlockLmi([d], name=name).const(0, 0, bound).add(0, 0, -0.5 * np.eye(d), V, np.eye(d))


def _delta_factor(X, Y, gamma, p, opts: SynthesisOptions) -> np.ndarray:
    """``S`` (``p x r``) with ``S^T S = Y - gamma^2 X^{-1}`` on its range."""
    Delta = sym(Y - gamma**2 * np.linalg.inv(X))
    lam, Vec = np.linalg.eigh(Delta)
    scale = max(1.0, np.linalg.norm(Y, 2))
    if lam[0] < -10.0 * opts.margin * scale:
        raise NumericalError(f"Delta = Y - gamma^2 X^-1 is indefinite: eigenvalue {lam[0]:.3e}")
    keep = lam > opts.coupling_tol * scale
    rank = int(keep.sum())
    if rank > p:
        raise UndecidedError(f"rank(Delta) = {rank} exceeds the regulator order {p}")
    S = (Vec[:, keep] * np.sqrt(lam[keep])).T
    return np.vstack([S, np.zeros((p - rank, X.shape[0]))]), rank


def _rank_reduce(pl, weights, gamma, kind, Hbar, X, Y, p, opts):
    """Push ``rank W`` down to ``r + p`` by minimizing the energy of ``W`` on
    its ``r - p`` smallest eigendirections (an eigenvector-projection variant
    of cone complementarity)."""
    r = X.shape[0]
    history = []
    for it in range(opts.max_iter):
        Delta = sym(Y - gamma**2 * np.linalg.inv(X))
        lam, Vec = np.linalg.eigh(Delta)
        scale = max(1.0, np.linalg.norm(Y, 2))
        history.append(float(lam[: r - p].sum() / scale))
        if lam[r - p - 1] <= opts.coupling_tol * scale:
            return X, Y, it, history
        W = np.block([[X, gamma * np.eye(r)], [gamma * np.eye(r), Y]])
        w, U = np.linalg.eigh(W)
        Ps = U[:, : r - p] @ U[:, : r - p].T
        prob = _xy_problem(pl, weights, gamma, kind, Hbar, opts.kernel_tol,
                           objective={"X": Ps[:r, :r], "Y": Ps[r:, r:]})
        sol = minimize_linear(prob, margin=opts.margin)
        X, Y = sol.values["X"], sol.values["Y"]
    raise UndecidedError(
        f"rank heuristic did not reach rank W <= r + p = {r + p} in {opts.max_iter} iterations "
        f"(residual {history[-1]:.3e}); try p = r or a larger gamma"
    )


def synth_dynamic(reduced: ReducedPlant, weights, gamma: float, p: int, kind=Measure.J,
                  opts: SynthesisOptions | None = None, plant=None, K1=None) -> SynthesisResult:
    """Dynamic regulator of order ``p <= r``.

    Finds ``X, Y`` with ``W = [[X, gamma I], [gamma I, Y]] >= 0``, factors
    ``Y - gamma^2 X^{-1} = S^T S``, embeds ``X`` in the extended
    ``Xhat = [[X, X1^T], [X1, X2]]`` with ``X1 = S X / gamma`` and
    ``X2 = S X S^T / gamma^2 + I``, and solves the static gain problem of the
    extended plant at ``Xhat``.
    """
    opts = opts or SynthesisOptions()
    kind = _check_common(reduced, weights, gamma, kind)
    r = reduced.r
    if not 0 <= p <= r:
        raise InputError(f"regulator order p must satisfy 0 <= p <= r = {r}, got {p}")
    if p == 0:
        return synth_static(reduced, weights, gamma, kind, opts, plant, K1)
    pl = _Plant.of(reduced)
    X, Y = _feasible_xy(pl, weights, gamma, kind, reduced.Hbar, opts)
    info: dict = {}
    if p < r:
        X, Y, its, hist = _rank_reduce(pl, weights, gamma, kind, reduced.Hbar, X, Y, p, opts)
        info.update(iterations=its, rank_history=hist)
    S, rank = _delta_factor(X, Y, gamma, p, opts)
    info["delta_rank"] = rank
    if rank == 0 and opts.reduce_order:
        log.info("Delta = 0: static regulator suffices")
        K = _solve_k0(pl, weights, gamma, X, opts)
        reg = Regulator(K)
        loop, report = _verify(reduced, reg, weights, gamma, kind, opts, plant, K1)
        info.update(X=X, Y=Y)
        return SynthesisResult(reg, loop, report, gamma, kind, info)
    X1 = S @ X / gamma
    X2 = S @ X @ S.T / gamma**2 + np.eye(p)
    Xh = sym(np.block([[X, X1.T], [X1, X2]]))
    aug = pl.augment(p)
    m, l = pl.B2.shape[1], pl.C2.shape[0]
    Kh = _solve_k0(aug, weights, gamma, Xh, opts)
    reg = Regulator(K=Kh[:m, :l], Z=Kh[m:, l:], V=Kh[m:, :l], U=Kh[:m, l:])
    loop, report = _verify(reduced, reg, weights, gamma, kind, opts, plant, K1)
    info.update(X=X, Y=Y, Xhat=Xh, S=S)
    return SynthesisResult(reg, loop, report, gamma, kind, info)


@dataclass
class GammaSearch:
    best: SynthesisResult
    gamma_fail: float
    gamma_success: float
    history: list[tuple[float, bool]]


def optimize_gamma(synth: Callable[[float], SynthesisResult], upper: float | None = None,
                   lower: float = 0.0, rtol: float = 1e-4, max_expand: int = 30) -> GammaSearch:
    """Bisection on ``gamma`` with an expanding upper bracket.

    A success at ``gamma`` is a verified regulator with achieved measure
    ``J_a < gamma``; the same regulator certifies every ``gamma > J_a``, so
    the upper end drops to ``J_a`` directly.
    """
    history: list[tuple[float, bool]] = []

    def probe(g):
        try:
            res = synth(g)
        except DhinfError as exc:
            log.debug("gamma=%g failed: %s", g, exc)
            history.append((g, False))
            return None
        history.append((g, True))
        return res

    def floor(hi):
        # failures above a verified achievement are heuristic misses, not bounds
        return max([lower] + [g for g, ok in history if not ok and g < hi])

    hi = 1.0 if upper is None or not upper > 0 else float(upper)
    best = None
    for _ in range(max_expand):
        best = probe(hi)
        if best is not None:
            break
        hi *= 2.0
    if best is None:
        raise UndecidedError(f"no successful synthesis found up to gamma={hi:g}")
    hi = min(hi, best.achieved)
    lo = floor(hi)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        res = probe(mid)
        if res is not None:
            best = res
            hi = min(mid, res.achieved)
        lo = floor(hi)
    return GammaSearch(best, lo, hi, history)
