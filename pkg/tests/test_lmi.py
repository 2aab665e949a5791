import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhinf.errors import InfeasibleError, InputError
from dhinf.lmi import (
    BlockLmi,
    DecisionVar,
    LmiProblem,
    Status,
    constraint_margins,
    minimize_linear,
    psd_constraint,
    solve_feasibility,
    verify,
)


def lyapunov_problem(A):
    n = A.shape[0]
    X = DecisionVar.sym("X", n)
    lyap = BlockLmi([n], name="lyap").add(0, 0, np.eye(n), X, A)
    pos = BlockLmi([n], name="pos").add(0, 0, -0.5 * np.eye(n), X, np.eye(n))
    return LmiProblem([X], [lyap.build(), pos.build()])


def test_decision_var_roundtrip():
    X = DecisionVar.sym("X", 3)
    assert X.size == 6
    M = np.array([[1.0, 2, 3], [2, 4, 5], [3, 5, 6]])
    params = [M[i, j] for i in range(3) for j in range(i, 3)]
    np.testing.assert_array_equal(X.unpack(np.array(params)), M)
    with pytest.raises(InputError):
        DecisionVar("Y", 2, 3, True)


def test_undeclared_variable_rejected():
    X = DecisionVar.sym("X", 1)
    c = BlockLmi([1]).add(0, 0, 1.0, X, 1.0).build()
    with pytest.raises(InputError):
        LmiProblem([], [c])


def test_lyapunov_feasible_and_verified():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    prob = lyapunov_problem(A)
    res = solve_feasibility(prob)
    assert res.status is Status.FEASIBLE and res.best_margin > 0
    X = res.values["X"]
    assert np.linalg.eigvalsh(A.T @ X + X @ A)[-1] < 0
    assert np.linalg.eigvalsh(X)[0] > 0
    assert verify(prob, res.values)
    assert min(-m for m in constraint_margins(prob, res.values)) > 0


def test_lyapunov_infeasible_for_unstable():
    prob = lyapunov_problem(np.array([[0.5, 0.0], [0.0, -1.0]]))
    res = solve_feasibility(prob)
    assert res.status is Status.INFEASIBLE
    assert res.best_margin <= 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lyapunov_matches_spectrum(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    abscissa = np.max(np.linalg.eigvals(A).real)
    if abs(abscissa) < 0.05:
        return
    res = solve_feasibility(lyapunov_problem(A))
    assert res.feasible == (abscissa < 0)


def test_minimize_scalar_bound():
    # minimize mu subject to 1 - mu < 0 and mu >= 0: optimum 1
    mu = DecisionVar.sym("mu", 1)
    c = BlockLmi([1]).const(0, 0, 1.0).add(0, 0, -0.5, mu, 1.0).build()
    prob = LmiProblem([mu], [c], {"mu": np.eye(1)})
    out = minimize_linear(prob)
    assert out.value == pytest.approx(1.0, abs=1e-6)
    assert out.lower_bound <= out.value + 1e-9
    assert out.value - out.lower_bound < 1e-5


def test_minimize_infeasible_raises():
    mu = DecisionVar.sym("mu", 1)
    a = BlockLmi([1]).const(0, 0, 1.0).add(0, 0, -0.5, mu, 1.0).build()   # mu > 1
    b = BlockLmi([1]).const(0, 0, -0.5).add(0, 0, 0.5, mu, 1.0).build()   # mu < 0.5
    with pytest.raises(InfeasibleError):
        minimize_linear(LmiProblem([mu], [a, b], {"mu": np.eye(1)}))


def test_psd_constraint_and_rank_deficient_gain():
    # K enters only through K @ C with rank-one C: the solver must still run
    C = np.array([[1.0, 2.0], [2.0, 4.0]])
    K = DecisionVar.full("K", 1, 2)
    A = np.array([[1.0]])
    blk = BlockLmi([1], name="closed loop").const(0, 0, 2 * A).add(0, 0, 1.0, K, C[:, :1])
    box = psd_constraint([1, 2], name="box").const(0, 0, 10.0).const(1, 1, np.eye(2)).add(0, 1, 1.0, K, np.eye(2))
    res = solve_feasibility(LmiProblem([K], [blk.build(), box.build()]))
    assert res.feasible
    k = res.values["K"]
    assert (A + k @ C[:, :1])[0, 0] < 0


def test_margin_validation():
    prob = lyapunov_problem(-np.eye(1))
    with pytest.raises(InputError):
        solve_feasibility(prob, margin=0.0)
    with pytest.raises(InputError):
        solve_feasibility(prob, margin=0.1, cap=0.05)
    with pytest.raises(InputError):
        minimize_linear(prob)


def test_dump_lists_structure():
    text = lyapunov_problem(-np.eye(2)).dump()
    assert "var X: sym 2x2" in text and "constraint lyap" in text
