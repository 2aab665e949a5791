"""Descriptor plant model, structural tests, and the equivalent
transformation that eliminates the algebraic part of ``E x' = A x + ...``.

The plant is

    E x' = A x + B1 w + B2 u
       z = C1 x + D11 w + D12 u
       y = C2 x + D21 w + D22 u

with ``rank E = r``. For an impulse-free pencil the state splits as
``x = R [xi1; xi2]`` and ``xi2`` is an algebraic function of ``xi1, w, u``,
leaving an ordinary order-``r`` system in ``xi1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ImpulsivePairError, InputError
from .matops import (
    DEFAULT_TOL,
    Definiteness,
    as_matrix,
    definiteness,
    numerical_rank,
    ortho_complement,
    skeleton_decompose,
    sym,
)

BLOCK_NAMES = ("E", "A", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22")


@dataclass(frozen=True)
class DescriptorPlant:
    E: np.ndarray
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray

    def __post_init__(self):
        n = self.E.shape[0]
        s, m = self.B1.shape[1], self.B2.shape[1]
        k, l = self.C1.shape[0], self.C2.shape[0]
        expected = {
            "E": (n, n), "A": (n, n), "B1": (n, s), "B2": (n, m),
            "C1": (k, n), "C2": (l, n), "D11": (k, s), "D12": (k, m),
            "D21": (l, s), "D22": (l, m),
        }
        for name, shape in expected.items():
            value = np.array(getattr(self, name), dtype=float)
            if value.shape != shape:
                raise InputError(f"{name}: expected shape {shape}, got {value.shape}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_blocks(cls, E, A, B1, C1, D11=None, B2=None, C2=None,
                    D12=None, D21=None, D22=None) -> "DescriptorPlant":
        """Build a plant, defaulting absent control/measurement blocks to
        zero-sized matrices (uncontrolled analysis mode)."""
        E = as_matrix(E, "E")
        n = E.shape[0]
        A = as_matrix(A, "A", (n, n))
        B1 = as_matrix(B1, "B1")
        C1 = as_matrix(C1, "C1")
        s, k = B1.shape[1], C1.shape[0]
        B2 = np.zeros((n, 0)) if B2 is None else as_matrix(B2, "B2")
        C2 = np.zeros((0, n)) if C2 is None else as_matrix(C2, "C2")
        m, l = B2.shape[1], C2.shape[0]

        def block(value, name, shape):
            if value is None:
                return np.zeros(shape)
            return as_matrix(value, name, shape)

        return cls(
            E=E, A=A, B1=B1, B2=B2, C1=C1, C2=C2,
            D11=block(D11, "D11", (k, s)),
            D12=block(D12, "D12", (k, m)),
            D21=block(D21, "D21", (l, s)),
            D22=block(D22, "D22", (l, m)),
        )

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def s(self) -> int:
        return self.B1.shape[1]

    @property
    def m(self) -> int:
        return self.B2.shape[1]

    @property
    def k(self) -> int:
        return self.C1.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.C2.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCK_NAMES}


@dataclass(frozen=True)
class Weights:
    """Weights of the measure: ``P`` on ``w``, ``Q`` on ``z``, ``H`` on the
    initial vector through ``X0 = E^T H E``."""

    P: np.ndarray
    Q: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        for name in ("P", "Q", "H"):
            M = as_matrix(getattr(self, name), name)
            if M.shape[0] != M.shape[1]:
                raise InputError(f"weight {name} must be square, got {M.shape}")
            if definiteness(M, margin=0.0) is not Definiteness.POSITIVE:
                raise InputError(f"weight {name} must be positive definite")
            object.__setattr__(self, name, sym(M))

    def check(self, plant: DescriptorPlant) -> None:
        dims = {"P": plant.s, "Q": plant.k, "H": plant.n}
        for name, d in dims.items():
            if getattr(self, name).shape != (d, d):
                raise InputError(
                    f"weight {name}: expected shape {(d, d)}, got {getattr(self, name).shape}"
                )

    def X0(self, E: np.ndarray) -> np.ndarray:
        return E.T @ self.H @ E


@dataclass(frozen=True)
class LinearSystem:
    """Ordinary system ``x' = A x + B w, z = C x + D w`` whose admissible
    initial states are ``x0 = G xi0`` with energy ``xi0^T Hbar xi0``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Hbar: np.ndarray | None = None
    G: np.ndarray | None = None

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @property
    def init_map(self) -> np.ndarray:
        if self.G is not None:
            return self.G
        return np.eye(self.order)


@dataclass(frozen=True)
class ReducedPlant:
    Ar: np.ndarray
    B1r: np.ndarray
    B2r: np.ndarray
    C1r: np.ndarray
    C2r: np.ndarray
    D11r: np.ndarray
    D12r: np.ndarray
    D21r: np.ndarray
    D22r: np.ndarray
    Hbar: np.ndarray | None
    # lift data
    L: np.ndarray
    R: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    A4: np.ndarray
    B12: np.ndarray
    B22: np.ndarray

    @property
    def r(self) -> int:
        return self.Ar.shape[0]

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def open_loop(self) -> LinearSystem:
        return LinearSystem(self.Ar, self.B1r, self.C1r, self.D11r, self.Hbar)


class ImpulseCheck(NamedTuple):
    impulse_free: bool
    r: int


class StructuralRanks(NamedTuple):
    i_controllable: bool
    i_observable: bool


class OutputConditions(NamedTuple):
    full_rank: bool
    decoupled: bool


@dataclass(frozen=True)
class _Transform:
    E1: np.ndarray
    E2: np.ndarray
    E1p: np.ndarray
    E2p: np.ndarray
    L: np.ndarray
    R: np.ndarray
    r: int
    blocks: dict = field(default_factory=dict)


def _left_pinv(M: np.ndarray) -> np.ndarray:
    if M.shape[1] == 0:
        return np.zeros((0, M.shape[0]))
    return np.linalg.solve(M.T @ M, M.T)


def _transform(E: np.ndarray, A: np.ndarray, tol: float) -> _Transform:
    E1, E2, r = skeleton_decompose(E, tol)
    E1p = ortho_complement(E1, tol)
    E2p = ortho_complement(E2, tol)
    L = np.vstack([_left_pinv(E1), _left_pinv(E1p)])
    R = np.hstack([_left_pinv(E2).T, _left_pinv(E2p).T])
    LAR = L @ A @ R
    blocks = {
        "A1": LAR[:r, :r], "A2": LAR[:r, r:], "A3": LAR[r:, :r], "A4": LAR[r:, r:],
    }
    return _Transform(E1, E2, E1p, E2p, L, R, r, blocks)


def _a4_regular(A4: np.ndarray, A: np.ndarray, tol: float) -> bool:
    if A4.size == 0:
        return True
    scale = max(np.linalg.norm(A, 2), 1e-300)
    return bool(np.linalg.svd(A4, compute_uv=False)[-1] > tol * scale)


def check_impulse_free(E, A, tol: float = DEFAULT_TOL) -> ImpulseCheck:
    """Rank test ``rank [[E, 0], [A, E]] == n + r``, cross-checked against
    invertibility of the transformed block ``A4``."""
    E = as_matrix(E, "E")
    n = E.shape[0]
    A = as_matrix(A, "A", (n, n))
    r = numerical_rank(E, tol)
    if r == 0:
        raise InputError("E is numerically zero; rank E >= 1 is required")
    M = np.block([[E, np.zeros((n, n))], [A, E]])
    by_rank = numerical_rank(M, tol) == n + r
    by_a4 = _a4_regular(_transform(E, A, tol).blocks["A4"], A, tol)
    if by_rank != by_a4:
        warnings.warn(
            f"numerical-rank disagreement: rank test says impulse_free={by_rank}, "
            f"A4 test says impulse_free={by_a4}; consider adjusting tol",
            RuntimeWarning,
            stacklevel=2,
        )
    return ImpulseCheck(by_rank, r)


def structural_ranks(plant: DescriptorPlant, tol: float = DEFAULT_TOL) -> StructuralRanks:
    E, A, n = plant.E, plant.A, plant.n
    r = numerical_rank(E, tol)
    ctrb = np.block([
        [E, np.zeros((n, n)), np.zeros((n, plant.m))],
        [A, E, plant.B2],
    ])
    obsv = np.block([
        [E, A],
        [np.zeros((n, n)), E],
        [np.zeros((plant.l, n)), plant.C2],
    ])
    return StructuralRanks(
        numerical_rank(ctrb, tol) == n + r,
        numerical_rank(obsv, tol) == n + r,
    )


def output_conditions(plant: DescriptorPlant, tol: float = DEFAULT_TOL) -> OutputConditions:
    """Sufficient conditions for static output feedback on the reduced plant:
    the measurement sees the whole differential part (rank ``r``) and none of
    the algebraic part. Reported only, never enforced."""
    T = _transform(plant.E, plant.A, tol)
    Cd, Ca = plant.C2 @ T.R[:, : T.r], plant.C2 @ T.R[:, T.r:]
    scale = max(1.0, np.linalg.norm(plant.C2, 2))
    full = Cd.size > 0 and numerical_rank(Cd, tol) == T.r
    return OutputConditions(bool(full), bool(Ca.size == 0 or np.abs(Ca).max() <= tol * scale))


def reduce(plant: DescriptorPlant, weights: Weights | None = None,
           tol: float = DEFAULT_TOL) -> ReducedPlant:
    """Eliminate the algebraic coordinates and return the order-``r`` plant."""
    if weights is not None:
        weights.check(plant)
    T = _transform(plant.E, plant.A, tol)
    r = T.r
    A1, A2, A3, A4 = (T.blocks[k] for k in ("A1", "A2", "A3", "A4"))
    if not _a4_regular(A4, plant.A, tol):
        raise ImpulsivePairError(
            "pencil (E, A) is impulsive (A4 singular); "
            "apply preliminary_feedback / `dhinf regularize` first"
        )
    LB1, LB2 = T.L @ plant.B1, T.L @ plant.B2
    C1R, C2R = plant.C1 @ T.R, plant.C2 @ T.R
    B11, B12 = LB1[:r], LB1[r:]
    B21, B22 = LB2[:r], LB2[r:]
    C11, C12 = C1R[:, :r], C1R[:, r:]
    C21, C22 = C2R[:, :r], C2R[:, r:]

    def elim(M):
        # A4^{-1} M, tolerating the empty algebraic part
        return np.linalg.solve(A4, M) if A4.size else np.zeros((0, M.shape[1]))

    iA3, iB12, iB22 = elim(A3), elim(B12), elim(B22)
    Hbar = None if weights is None else sym(T.E1.T @ weights.H @ T.E1)
    return ReducedPlant(
        Ar=A1 - A2 @ iA3,
        B1r=B11 - A2 @ iB12,
        B2r=B21 - A2 @ iB22,
        C1r=C11 - C12 @ iA3,
        C2r=C21 - C22 @ iA3,
        D11r=plant.D11 - C12 @ iB12,
        D12r=plant.D12 - C12 @ iB22,
        D21r=plant.D21 - C22 @ iB12,
        D22r=plant.D22 - C22 @ iB22,
        Hbar=Hbar,
        L=T.L, R=T.R, E1=T.E1, E2=T.E2,
        A2=A2, A3=A3, A4=A4, B12=B12, B22=B22,
    )


def lift_state(reduced: ReducedPlant, xi1, w=None, u=None) -> np.ndarray:
    """Recover ``x = R [xi1; xi2]`` from the algebraic constraint."""
    xi1 = np.asarray(xi1, float).reshape(-1)
    rhs = reduced.A3 @ xi1
    if w is not None and reduced.B12.size:
        rhs = rhs + reduced.B12 @ np.asarray(w, float).reshape(-1)
    if u is not None and reduced.B22.size:
        rhs = rhs + reduced.B22 @ np.asarray(u, float).reshape(-1)
    xi2 = -np.linalg.solve(reduced.A4, rhs) if reduced.A4.size else np.zeros(0)
    return reduced.R @ np.concatenate([xi1, xi2])


def finite_spectrum(E, A, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Finite generalized eigenvalues of ``A - lambda E`` (exactly ``r`` of them)."""
    E = as_matrix(E, "E")
    A = as_matrix(A, "A", E.shape)
    T = _transform(E, A, tol)
    A1, A2, A3, A4 = (T.blocks[k] for k in ("A1", "A2", "A3", "A4"))
    if not _a4_regular(A4, A, tol):
        raise ImpulsivePairError("pencil (E, A) is impulsive; finite spectrum has fewer than r points")
    Ar = A1 - A2 @ np.linalg.solve(A4, A3) if A4.size else A1
    return np.sort_complex(np.linalg.eigvals(Ar))


def transfer_function(plant: DescriptorPlant, lam: complex) -> np.ndarray:
    """``C1 (lam E - A)^{-1} B1 + D11`` of the uncontrolled channel."""
    return plant.C1 @ np.linalg.solve(lam * plant.E - plant.A, plant.B1) + plant.D11


def system_transfer(sys: LinearSystem, lam: complex) -> np.ndarray:
    n = sys.order
    if n == 0:
        return sys.D.astype(complex)
    return sys.C @ np.linalg.solve(lam * np.eye(n) - sys.A, sys.B) + sys.D


def _feedback_conditions(plant: DescriptorPlant, K1: np.ndarray, T: _Transform):
    m = plant.m
    W = np.eye(m) - K1 @ plant.D22
    d1 = abs(np.linalg.det(W)) if m else 1.0
    if d1 == 0.0:
        return d1, 0.0
    K10 = np.linalg.solve(W, K1)
    M = T.E1p.T @ (plant.A + plant.B2 @ K10 @ plant.C2) @ T.E2p
    d2 = np.linalg.svd(M, compute_uv=False)[-1] if M.size else np.inf
    return d1, d2


def apply_preliminary_feedback(plant: DescriptorPlant, K1) -> DescriptorPlant:
    """Plant seen by the new control ``v`` once ``u = K1 y + v`` is closed."""
    K1 = as_matrix(K1, "K1", (plant.m, plant.l))
    K11 = np.linalg.inv(np.eye(plant.m) - K1 @ plant.D22)
    K10 = K11 @ K1
    p = plant
    return DescriptorPlant(
        E=p.E.copy(),
        A=p.A + p.B2 @ K10 @ p.C2,
        B1=p.B1 + p.B2 @ K10 @ p.D21,
        B2=p.B2 @ K11,
        C1=p.C1 + p.D12 @ K10 @ p.C2,
        C2=p.C2 + p.D22 @ K10 @ p.C2,
        D11=p.D11 + p.D12 @ K10 @ p.D21,
        D12=p.D12 @ K11,
        D21=p.D21 + p.D22 @ K10 @ p.D21,
        D22=p.D22 @ K11,
    )


class PreliminaryFeedback(NamedTuple):
    K1: np.ndarray
    transformed: DescriptorPlant
    attempts_used: int


def preliminary_feedback(plant: DescriptorPlant, attempts: int = 1000, seed: int = 0,
                         tol: float = DEFAULT_TOL, force: bool = False) -> PreliminaryFeedback:
    """Search a static ``K1`` that makes ``(E, A + B2 K10 C2)`` impulse-free.

    Samples ``K1`` uniformly from ``[-1, 1]^{m x l}``; deterministic for a
    given seed. With ``force`` an already impulse-free plant returns ``K1 = 0``.
    """
    if check_impulse_free(plant.E, plant.A, tol).impulse_free:
        if not force:
            raise InputError("plant is already impulse-free; no preliminary feedback needed")
        return PreliminaryFeedback(np.zeros((plant.m, plant.l)), plant, 0)
    ranks = structural_ranks(plant, tol)
    if not ranks.i_controllable:
        raise InputError("I-controllability rank test rank[[E,0,0],[A,E,B2]] = n + r fails")
    if not ranks.i_observable:
        raise InputError("I-observability rank test rank[[E,A],[0,E],[0,C2]] = n + r fails")
    T = _transform(plant.E, plant.A, tol)
    scale = max(1.0, np.linalg.norm(plant.A, 2))
    rng = np.random.default_rng(seed)
    for attempt in range(1, attempts + 1):
        K1 = rng.uniform(-1.0, 1.0, size=(plant.m, plant.l))
        d1, d2 = _feedback_conditions(plant, K1, T)
        if d1 < tol or d2 < tol * scale:
            continue
        tilde = apply_preliminary_feedback(plant, K1)
        if check_impulse_free(tilde.E, tilde.A, tol).impulse_free:
            return PreliminaryFeedback(K1, tilde, attempt)
    raise ImpulsivePairError(
        f"impulse regularization failed after {attempts} attempts; the rank tests "
        "hold, so a suitable K1 exists - retry with more attempts or another seed"
    )
