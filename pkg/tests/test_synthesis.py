import numpy as np
import pytest

from conftest import PAPER_DYNAMIC, PAPER_STATIC_K
from dhinf import (
    DescriptorPlant,
    InfeasibleError,
    InputError,
    Measure,
    Regulator,
    SynthesisOptions,
    UndecidedError,
    Weights,
    close_loop,
    compute_measure,
    finite_spectrum,
    optimize_gamma,
    reduce,
    synth_dynamic,
    synth_static,
    synth_static_special,
)
from dhinf.errors import DhinfError


def test_regulator_validation():
    reg = Regulator([[1.0, 2.0]])
    assert reg.kind == "static" and reg.p == 0
    K, Z, V, U = reg.parts()
    assert Z.shape == (0, 0) and V.shape == (0, 2) and U.shape == (1, 0)
    dyn = Regulator(**PAPER_DYNAMIC)
    assert dyn.kind == "dynamic" and dyn.p == 2
    with pytest.raises(InputError):
        Regulator([[1.0]], Z=[[1.0]])


def test_paper_static_closed_loop(tank):
    plant, weights, red = tank
    cl = close_loop(red, Regulator(PAPER_STATIC_K), plant)
    expected = np.array([-1.58977 - 0.62453j, -1.58977 + 0.62453j])
    np.testing.assert_allclose(cl.spectrum, expected, atol=1e-3)
    fs = finite_spectrum(cl.descriptor.E, cl.descriptor.A0)
    np.testing.assert_allclose(fs, cl.spectrum, atol=1e-8)


def test_paper_dynamic_closed_loop(tank):
    plant, weights, red = tank
    cl = close_loop(red, Regulator(**PAPER_DYNAMIC), plant)
    np.testing.assert_allclose(np.sort(cl.spectrum.real), [-1.99999, -1.59089, -0.92267, -0.62278], atol=1e-3)
    np.testing.assert_allclose(cl.spectrum.imag, 0.0, atol=1e-6)
    fs = finite_spectrum(cl.descriptor.E, cl.descriptor.A0)
    np.testing.assert_allclose(np.sort(fs.real), np.sort(cl.spectrum.real), atol=1e-8)


def test_static_synthesis_gamma_one(tank):
    plant, weights, red = tank
    res = synth_static(red, weights, 1.0, plant=plant)
    assert res.achieved < 1.0
    assert res.info["iterations"] <= 50
    assert np.max(cl_real(res)) < 0
    again = compute_measure(res.closed_loop.system, weights, Measure.J)
    assert again.value < 1.0


def cl_real(res):
    return res.closed_loop.spectrum.real


def test_static_synthesis_fails_below_optimum(tank):
    _, weights, red = tank
    with pytest.raises(DhinfError):
        synth_static(red, weights, 0.5)


def test_dynamic_synthesis_full_order(tank):
    plant, weights, red = tank
    opts = SynthesisOptions(reduce_order=False)
    res = synth_dynamic(red, weights, 1.0, 2, opts=opts, plant=plant)
    assert res.regulator.p == 2
    assert res.achieved < 1.0
    assert np.max(cl_real(res)) < 0
    fs = finite_spectrum(res.closed_loop.descriptor.E, res.closed_loop.descriptor.A0)
    assert fs.size == 4


def test_dynamic_p0_matches_static(tank):
    _, weights, red = tank
    a = synth_static(red, weights, 1.0)
    b = synth_dynamic(red, weights, 1.0, 0)
    assert b.regulator.kind == "static"
    assert abs(a.report.value - b.report.value) < 1e-6


def test_dynamic_order_validation(tank):
    _, weights, red = tank
    with pytest.raises(InputError):
        synth_dynamic(red, weights, 1.0, 3)
    with pytest.raises(InputError):
        synth_static(red, weights, -1.0)


def test_existence_conditions_fail_far_below(tank):
    _, weights, red = tank
    with pytest.raises(InfeasibleError, match="no regulator of any order"):
        synth_dynamic(red, weights, 0.3, 2)


def test_optimize_gamma_static(tank):
    _, weights, red = tank
    search = optimize_gamma(lambda g: synth_static(red, weights, g), upper=1.2)
    assert search.gamma_fail <= search.gamma_success
    assert search.best.achieved <= search.gamma_success + 1e-9
    assert abs(search.best.achieved - 0.97895) < 1e-3


def test_optimize_gamma_reports_failures():
    def never(g):
        raise UndecidedError("no")

    with pytest.raises(UndecidedError):
        optimize_gamma(never, upper=1.0, max_expand=3)


def zero_d21(tank):
    plant, weights, _ = tank
    p = DescriptorPlant(**{**plant.blocks(), "D21": np.zeros((2, 2))})
    return p, weights, reduce(p, weights)


@pytest.mark.parametrize("path", ["statement3", "statement2"])
def test_special_synthesis(tank, path):
    plant, weights, red = zero_d21(tank)
    res = synth_static_special(red, weights, 1.05, path=path, plant=plant)
    assert res.achieved < 1.05


def test_special_preconditions(tank):
    _, weights, red = tank
    with pytest.raises(InputError, match="D21bar must be zero"):
        synth_static_special(red, weights, 1.05)
    plant, weights, red = zero_d21(tank)
    with pytest.raises(InputError):
        synth_static_special(red, weights, 1.05, path="other")


def test_special_scalar_j0():
    plant = DescriptorPlant.from_blocks([[1.0]], [[1.0]], B1=[[1.0]], C1=[[1.0]], B2=[[1.0]], C2=[[1.0]])
    weights = Weights(np.eye(1), np.eye(1), np.eye(1))
    red = reduce(plant, weights)
    res = synth_static_special(red, weights, 0.5, kind=Measure.J0)
    k = res.regulator.K[0, 0]
    # closed loop 1 / (s - 1 - k): peak gain 1 / |1 + k| at s = 0
    assert 1 + k < 0
    assert abs(res.report.value - 1 / abs(1 + k)) < 1e-4
    assert res.report.value < 0.5


def test_preliminary_feedback_chain():
    from dhinf import preliminary_feedback

    E, A = np.diag([1.0, 0.0]), np.array([[-1.0, 1.0], [1.0, 0.0]])
    plant = DescriptorPlant.from_blocks(E, A, B1=[[1], [0]], C1=[[1, 0], [0, 0]], B2=[[0], [1]],
                                        C2=np.eye(2), D12=[[0], [1]])
    weights = Weights(np.eye(1), np.eye(2), np.eye(2))
    pf = preliminary_feedback(plant, seed=3)
    red = reduce(pf.transformed, weights)
    res = synth_static(red, weights, 2.0, plant=plant, K1=pf.K1)
    assert res.achieved < 2.0
    d = res.closed_loop.descriptor
    np.testing.assert_allclose(finite_spectrum(d.E, d.A0), res.closed_loop.spectrum, atol=1e-7)
