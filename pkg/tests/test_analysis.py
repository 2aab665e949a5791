import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import PAPER_STATIC_K, random_plant
from dhinf import (
    InputError,
    LinearSystem,
    Measure,
    NotStableError,
    Regulator,
    Weights,
    assess,
    close_loop,
    compute_measure,
    freq_sweep_j0,
    reduce,
    riccati_stabilizing,
    worst_case,
)
from dhinf.analysis import riccati_data, riccati_residual
from dhinf.errors import CriticalSpectrumError, NumericalError


def scalar(h=0.5):
    sys = LinearSystem(np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.zeros((1, 1)),
                       Hbar=np.array([[h]]))
    return sys, Weights(np.eye(1), np.eye(1), np.array([[h]]))


def scalar_j(h):
    # Riccati root X(g) = g^2 (1 - sqrt(1 - 1/g^2)) meets g^2 h at
    # J^2 = 1 / (h (2 - h)) for h < 1; otherwise J = J0 = 1
    return 1.0 / np.sqrt(h * (2.0 - h)) if h < 1 else 1.0


def test_scalar_closed_form():
    sys, w = scalar(0.5)
    rep = compute_measure(sys, w, Measure.J, rtol=1e-7)
    assert abs(rep.value - 1 / np.sqrt(0.75)) < 1e-4
    assert rep.contains(1 / np.sqrt(0.75), 1e-6)
    j0 = compute_measure(sys, w, Measure.J0)
    assert abs(j0.value - 1.0) < 1e-5


@pytest.mark.parametrize("h", [0.2, 0.5, 0.9, 1.5, 3.0])
def test_scalar_family(h):
    sys, w = scalar(h)
    rep = compute_measure(sys, w, Measure.J, rtol=1e-7)
    assert abs(rep.value - scalar_j(h)) < 1e-4


def test_scalar_riccati_closed_form():
    sys, w = scalar()
    X = riccati_stabilizing(sys, w, 2.0)
    assert abs(X[0, 0] - (4 - 2 * np.sqrt(3))) < 1e-10


def test_scalar_assess_interval():
    sys, w = scalar()
    res = assess(sys, w, 2.0, Measure.J0)
    x = res.values["X"][0, 0]
    assert x**2 - 8 * x + 4 < 0
    with pytest.raises(InputError):
        assess(sys, w, -1.0)


def test_riccati_zero_solution():
    sys = LinearSystem(-np.eye(2), np.eye(2), np.zeros((1, 2)), np.zeros((1, 2)))
    X = riccati_stabilizing(sys, Weights(np.eye(2), np.eye(1), np.eye(2)), 1.0)
    np.testing.assert_allclose(X, 0.0, atol=1e-12)


def test_riccati_preconditions():
    sys = LinearSystem(np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[2.0]]))
    w = Weights(np.eye(1), np.eye(1), np.eye(1))
    with pytest.raises(InputError):
        riccati_stabilizing(sys, w, 1.0)
    sys, w = scalar()
    with pytest.raises((CriticalSpectrumError, NumericalError)):
        riccati_stabilizing(sys, w, 1.0)


def test_three_tank_open_loop(tank):
    _, weights, red = tank
    rep = compute_measure(red.open_loop(), weights, Measure.J)
    assert rep.contains(1.17851, 1e-5) and rep.half_width <= 1e-3
    assert assess(red.open_loop(), weights, 1.2).feasible
    assert not assess(red.open_loop(), weights, 1.1).feasible


def test_three_tank_paper_static(tank):
    plant, weights, red = tank
    cl = close_loop(red, Regulator(PAPER_STATIC_K), plant)
    rep = compute_measure(cl.system, weights, Measure.J)
    assert abs(rep.value - 0.97989) < 1e-3
    wc = worst_case(cl.system, weights, rep, reduced=red, control=cl.control)
    np.testing.assert_allclose(wc.Kstar, [[1.12785, 0.51161], [-0.24149, 0.20639]], atol=1e-3)
    sign = np.sign(wc.x0[0]) * -1
    np.testing.assert_allclose(sign * wc.x0, [-0.80868, -0.58825, 1.39693], atol=1e-3)


def test_j0_branch_worst_case(tank):
    _, weights, red = tank
    sys = red.open_loop()
    rep = compute_measure(sys, weights, Measure.J0)
    wc = worst_case(sys, weights, rep, reduced=red)
    np.testing.assert_allclose(wc.xi10, 0.0)


def test_unstable_rejected():
    sys = LinearSystem(np.array([[1.0]]), np.eye(1), np.eye(1), np.zeros((1, 1)), Hbar=np.eye(1))
    with pytest.raises(NotStableError):
        compute_measure(sys, Weights(np.eye(1), np.eye(1), np.eye(1)))


def test_bisection_matches_direct(tank):
    _, weights, red = tank
    a = compute_measure(red.open_loop(), weights, Measure.J, rtol=1e-6)
    b = compute_measure(red.open_loop(), weights, Measure.J, rtol=1e-6, method="bisection")
    assert abs(a.value - b.value) < 1e-5


def test_oracle_three_tank(tank):
    _, weights, red = tank
    sys = red.open_loop()
    j0 = compute_measure(sys, weights, Measure.J0).value
    assert abs(freq_sweep_j0(sys, weights) - j0) <= 1e-4 * j0


def test_oracle_and_ordering_ensemble(ensemble):
    for plant, weights in ensemble:
        sys = reduce(plant, weights).open_loop()
        j0 = compute_measure(sys, weights, Measure.J0)
        j = compute_measure(sys, weights, Measure.J)
        assert abs(freq_sweep_j0(sys, weights) - j0.value) <= 1e-4 * j0.value
        assert j0.gamma_infeasible <= j.gamma_feasible


def test_riccati_ensemble(ensemble):
    checked = 0
    for plant, weights in ensemble:
        sys = reduce(plant, weights).open_loop()
        j0 = compute_measure(sys, weights, Measure.J0)
        gamma = j0.gamma_feasible + 1e-2
        try:
            data = riccati_data(sys, weights, gamma)
        except InputError:
            continue
        X = riccati_stabilizing(sys, weights, gamma)
        scale = max(1.0, np.linalg.norm(data.Q0, 2), np.linalg.norm(X, 2) * np.linalg.norm(data.A0, 2))
        assert riccati_residual(data, X) <= 1e-8 * scale
        assert np.max(np.linalg.eigvals(data.A0 + data.R0 @ X).real) < 0
        checked += 1
    assert checked >= 15


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_j0_below_j_and_monotone(seed):
    rng = np.random.default_rng(seed)
    plant, weights = random_plant(rng, n=int(rng.integers(2, 5)))
    sys = reduce(plant, weights).open_loop()
    j0 = compute_measure(sys, weights, Measure.J0)
    j = compute_measure(sys, weights, Measure.J)
    assert j0.gamma_infeasible <= j.gamma_feasible * (1 + 1e-6)
    grid = np.linspace(0.5, 1.5, 10) * j.value
    verdicts = []
    for g in grid:
        if abs(g - j.value) < 2e-3 * j.value:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            verdicts.append(assess(sys, weights, g).feasible)
    assert verdicts == sorted(verdicts)
