import numpy as np
import pytest
from scipy.stats import ortho_group

from dhinf import DescriptorPlant, Weights, reduce
from dhinf.fileio import load_plant

# one PASS/FAIL line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

PAPER_STATIC_K = [[-0.67954, -0.39810]]
PAPER_DYNAMIC = dict(
    K=[[-1.09088, -0.04544]],
    Z=[[-0.62278, 0.00590], [-0.00004, -0.92267]],
    V=[[0.00047, 0.00025], [-0.00126, 0.00113]],
    U=[[-0.00152, -0.00021]],
)


def three_tank():
    E = np.diag([1.0, 1.0, 0.0])
    A = np.array([[-1.0, 0, 0], [1, -1.5, 0], [1, 1, 1]])
    plant = DescriptorPlant.from_blocks(
        E, A,
        B1=[[1, 0], [0, 0], [0, 0]], C1=[[0, 0, 1]],
        B2=[[1], [0], [0]], C2=[[1, 0, 0], [0, 1, 0]],
        D12=[[1]], D21=[[0, 0], [0, 1]],
    )
    weights = Weights(np.diag([2.0, 1.0]), np.eye(1), np.diag([3.0, 2.0, 1.0]))
    return plant, weights


@pytest.fixture(scope="session")
def tank():
    plant, weights = three_tank()
    return plant, weights, reduce(plant, weights)


def pencil_finite_eigs(E, A):
    """Finite generalized eigenvalues of ``A - lambda E`` from the QZ
    algorithm, independent of the reduction code."""
    import scipy.linalg as sla

    ab = sla.eigvals(A, E, homogeneous_eigvals=True)
    alpha, beta = ab
    keep = np.abs(beta) > 1e-9 * np.abs(alpha).max()
    return np.sort_complex(alpha[keep] / beta[keep])


def spectrum_distance(a, b):
    """Largest deviation under the best one-to-one matching of two
    eigenvalue sets, insensitive to ordering of near-ties."""
    from scipy.optimize import linear_sum_assignment

    a, b = np.asarray(a), np.asarray(b)
    if a.size != b.size:
        return np.inf
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def random_pd(rng, d):
    M = rng.standard_normal((d, d))
    return M @ M.T + 0.5 * np.eye(d)


def random_plant(rng, n=None, r=None, s=None, k=None, m=0, l=0, stable=True):
    """Impulse-free descriptor plant with a Hurwitz finite spectrum, hidden
    behind random orthogonal coordinate changes."""
    n = n or int(rng.integers(2, 7))
    r = r if r is not None else int(rng.integers(1, min(n, 4) + 1))
    s = s or int(rng.integers(1, 3))
    k = k or int(rng.integers(1, 3))
    q = n - r
    Ar = rng.standard_normal((r, r))
    if stable:
        Ar -= (np.max(np.linalg.eigvals(Ar).real) + 0.3 + rng.uniform()) * np.eye(r)
    A2, A3 = rng.standard_normal((r, q)), rng.standard_normal((q, r))
    A4 = rng.standard_normal((q, q)) + 2.0 * np.eye(q)
    A1 = Ar + A2 @ np.linalg.solve(A4, A3) if q else Ar
    Ablk = np.block([[A1, A2], [A3, A4]]) if q else A1
    Eblk = np.diag([1.0] * r + [0.0] * q)
    L = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    R = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    plant = DescriptorPlant.from_blocks(
        L @ Eblk @ R, L @ Ablk @ R,
        B1=rng.standard_normal((n, s)), C1=rng.standard_normal((k, n)),
        D11=0.3 * rng.standard_normal((k, s)),
        B2=rng.standard_normal((n, m)) if m else None,
        C2=rng.standard_normal((l, n)) if l else None,
    )
    weights = Weights(random_pd(rng, s), random_pd(rng, k), random_pd(rng, n))
    return plant, weights


@pytest.fixture(scope="session")
def ensemble():
    rng = np.random.default_rng(2024)
    return [random_plant(rng) for _ in range(20)]


@pytest.fixture(scope="session")
def fixture_bundle():
    from pathlib import Path
    return load_plant(Path(__file__).resolve().parents[1] / "fixtures" / "three_tank.json")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
