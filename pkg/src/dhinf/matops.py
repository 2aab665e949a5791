"""Dense real-matrix primitives: rank-revealing factors, complements,
kernels, definiteness tests and stable invariant subspaces."""

from __future__ import annotations

import enum

import numpy as np
import scipy.linalg as sla

from .errors import CriticalSpectrumError, InputError

DEFAULT_TOL = 1e-9


class Definiteness(str, enum.Enum):
    NEGATIVE = "negative_definite"
    POSITIVE = "positive_definite"
    INDEFINITE = "indefinite"


def as_matrix(M, name: str = "matrix", shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce to a 2-D float array, rejecting NaN/Inf and shape mismatches."""
    try:
        A = np.array(M, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: not a numeric matrix ({exc})") from None
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        if shape is not None and A.size == 0:
            A = A.reshape(shape)
        else:
            A = A.reshape(1, -1)
    if A.ndim != 2:
        raise InputError(f"{name}: expected a 2-D matrix, got {A.ndim} dimensions")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name}: entries must be finite")
    if shape is not None and A.shape != tuple(shape):
        raise InputError(f"{name}: expected shape {tuple(shape)}, got {A.shape}")
    return A


def sym(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def sqrtm_psd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(sym(S))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def inv_sqrtm_pd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(sym(S))
    if w.size and w.min() <= 0:
        raise InputError("matrix is not positive definite")
    return (V / np.sqrt(w)) @ V.T


def numerical_rank(M: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _selection_pairs(E: np.ndarray):
    """If E is a partial permutation (0/1 entries, at most one 1 per row and
    column) return its (row, col) pairs, else None."""
    if not np.all((E == 0.0) | (E == 1.0)):
        return None
    if np.any(E.sum(axis=0) > 1) or np.any(E.sum(axis=1) > 1):
        return None
    rows, cols = np.nonzero(E)
    return list(zip(rows.tolist(), cols.tolist()))


def skeleton_decompose(E, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray, int]:
    """Full-rank factorization ``E = E1 @ E2.T`` with ``n x r`` factors.

    A partial-permutation ``E`` (e.g. ``diag(I_r, 0)``) gets coordinate
    factors so reduced matrices are exactly the hand-computed ones; anything
    else gets balanced SVD factors ``U_r sqrt(S_r)`` and ``V_r sqrt(S_r)``.
    """
    E = as_matrix(E, "E")
    if E.shape[0] != E.shape[1]:
        raise InputError(f"E must be square, got {E.shape}")
    if tol <= 0:
        raise InputError("tol must be positive")
    n = E.shape[0]
    pairs = _selection_pairs(E)
    if pairs:
        r = len(pairs)
        E1 = np.zeros((n, r))
        E2 = np.zeros((n, r))
        for k, (i, j) in enumerate(pairs):
            E1[i, k] = 1.0
            E2[j, k] = 1.0
        return E1, E2, r
    U, s, Vt = np.linalg.svd(E)
    r = int(np.sum(s > tol * s[0])) if s[0] > 0 else 0
    if r == 0:
        raise InputError("E is numerically zero; rank E >= 1 is required")
    root = np.sqrt(s[:r])
    return U[:, :r] * root, Vt[:r].T * root, r


def ortho_complement(M, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis of range(M)^perp, shape ``n x (n - r)``.

    Coordinate-column inputs get coordinate complements. A full-rank square
    ``M`` yields an ``n x 0`` array.
    """
    M = as_matrix(M, "M")
    n, r = M.shape
    if r == 0:
        return np.eye(n)
    sel = _selection_pairs(M)
    if sel is not None and len(sel) == r:
        used = {i for i, _ in sel}
        rest = [i for i in range(n) if i not in used]
        return np.eye(n)[:, rest]
    U, s, _ = np.linalg.svd(M)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    if rank < r:
        raise InputError(f"M must have full column rank {r}, numerical rank is {rank}")
    return U[:, r:]


def kernel_basis(M, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis of the numerical kernel ``{v: |Mv| <= tol |M| |v|}``."""
    M = as_matrix(M, "M")
    q = M.shape[1]
    if M.size == 0 or not np.any(M):
        return np.eye(q)
    _, s, Vt = np.linalg.svd(M)
    rank = int(np.sum(s > tol * s[0]))
    return Vt[rank:].T.copy()


def definiteness(S, margin: float = DEFAULT_TOL) -> Definiteness:
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise InputError(f"S must be square, got {S.shape}")
    if S.size == 0:
        return Definiteness.INDEFINITE
    scale = max(1.0, np.abs(S).max())
    if np.abs(S - S.T).max() > 1e-10 * scale:
        raise InputError("S is not symmetric")
    w = np.linalg.eigvalsh(sym(S))
    if w[-1] < -margin:
        return Definiteness.NEGATIVE
    if w[0] > margin:
        return Definiteness.POSITIVE
    return Definiteness.INDEFINITE


def is_hurwitz(A: np.ndarray, margin: float = 0.0) -> bool:
    if A.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(A).real) < -margin)


def stable_invariant_subspace(H, tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis of the invariant subspace of ``H`` (``2r x 2r``)
    belonging to its open-left-half-plane eigenvalues.

    Uses an ordered real Schur form, so the basis is real without pairing
    complex eigenvectors by hand.
    """
    H = as_matrix(H, "H")
    n2 = H.shape[0]
    if H.shape[1] != n2 or n2 % 2:
        raise InputError(f"H must be square of even order, got {H.shape}")
    r = n2 // 2
    scale = max(1.0, np.linalg.norm(H, 2))
    lam = np.linalg.eigvals(H)
    closest = np.min(np.abs(lam.real)) if lam.size else np.inf
    if closest < tol * scale:
        raise CriticalSpectrumError(
            f"eigenvalue within {closest:.3e} of the imaginary axis"
        )
    T, Z, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != r:
        raise CriticalSpectrumError(
            f"expected {r} stable eigenvalues, found {sdim}"
        )
    return Z[:, :r]
