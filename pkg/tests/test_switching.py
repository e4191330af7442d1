import numpy as np
import pytest

from tfc_homotopy.core import TrackerConfig, ZeroProblem, make_auxiliary
from tfc_homotopy.homotopy import TfcHomotopy, exp_kappa2_basis
from tfc_homotopy.problems import example1, synthetic_path
from tfc_homotopy.switching import (SwitchProblem, ceq, objective_J, probe_path,
                                    solve_switch)
from tfc_homotopy.tracking import _correct

# independent numpy evaluation of the TFC residual at the three predicted
# kappas for a reference switch of the algebraic example (4-digit W, x0)
J_EX1_GOLDEN = 0.15442951556671025
OMEGA1 = [[-9.6193, -1.9914], [-3.7169, -0.4904]]
X01 = [-0.0726, -0.4492]


def _ex1():
    p = example1()
    return p, TfcHomotopy(p.objective, p.auxiliary, basis=p.basis)


def _linear_scalar(c):
    """F = G = c x, so Gamma_0 = c x for every kappa."""
    F = ZeroProblem(1, lambda x: c * x, lambda x: np.array([[c]]))
    G = make_auxiliary("custom", F, [0.0], residual=lambda x: c * x,
                       jacobian=lambda x: np.array([[c]]))
    return TfcHomotopy(F, G, basis=exp_kappa2_basis(1))


def test_predicted_kappas():
    _, h = _ex1()
    p = SwitchProblem(h, 0.3738, OMEGA1, X01)
    np.testing.assert_allclose(p.predicted_kappas(), [0.3838, 0.5238, 0.6738], atol=1e-14)
    p = SwitchProblem(h, 0.95, OMEGA1, X01)
    assert p.predicted_kappas() == [pytest.approx(0.96), pytest.approx(1.0), 1.0]


def test_switch_problem_validation():
    _, h = _ex1()
    with pytest.raises(ValueError):
        SwitchProblem(h, 1.0, OMEGA1, X01)
    with pytest.raises(ValueError):
        SwitchProblem(h, 0.5, OMEGA1, X01, n_predicted=0)


def test_objective_golden_example1():
    _, h = _ex1()
    p = SwitchProblem(h, 0.3738, OMEGA1, X01, discount=0.5, horizon=15, n_predicted=2,
                      dkappa=0.01)
    assert objective_J(p, np.array(OMEGA1), np.array(X01)) == pytest.approx(J_EX1_GOLDEN,
                                                                            rel=1e-12)


def test_objective_kappa_independent():
    h = _linear_scalar(2.0)
    x0 = np.array([0.75])
    p = SwitchProblem(h, 0.4, np.zeros((1, 1)), x0, discount=0.5, n_predicted=2)
    assert objective_J(p, np.zeros((1, 1)), x0) == pytest.approx(1.75 * 1.5, rel=1e-14)


def test_objective_zero_at_common_root():
    h = _linear_scalar(3.0)
    p = SwitchProblem(h, 0.4, np.zeros((1, 1)), [0.0])
    assert objective_J(p, np.zeros((1, 1)), np.zeros(1)) == 0.0


def test_objective_monotone_in_discount():
    h = _linear_scalar(1.0)
    x0 = np.array([0.5])
    vals = [objective_J(SwitchProblem(h, 0.2, np.zeros((1, 1)), x0, discount=g),
                        np.zeros((1, 1)), x0) for g in (0.0, 0.25, 0.5, 0.9)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_ceq_branches():
    _, h = _ex1()
    W = np.zeros((2, 2))
    x = np.array([0.3, -0.1])
    p = SwitchProblem(h, 0.3, W, x)
    np.testing.assert_array_equal(ceq(p, W, x), h(0.3, x, W))
    x_on = _correct(h, 0.3, np.array([2.4, 0.4]), TrackerConfig(), W)
    assert np.abs(ceq(p, W, x_on)).max() <= 1e-12


@pytest.mark.parametrize("factor,ones", [(1.01, False), (0.99, True)])
def test_ceq_threshold_flip(factor, ones):
    delta = 1e-4
    h = _linear_scalar(delta * factor)
    x = np.array([0.3])
    p = SwitchProblem(h, 0.5, np.zeros((1, 1)), x, delta=delta)
    out = ceq(p, np.zeros((1, 1)), x)
    if ones:
        np.testing.assert_array_equal(out, [1.0])
    else:
        np.testing.assert_allclose(out, h(0.5, x), rtol=1e-15)


def test_ceq_singular_gives_ones():
    h = _linear_scalar(0.0)
    p = SwitchProblem(h, 0.5, np.zeros((1, 1)), [0.2])
    np.testing.assert_array_equal(ceq(p, np.zeros((1, 1)), np.array([0.2])), [1.0])


def test_switch_linear_problem_feasible():
    p = synthetic_path(2)
    h = TfcHomotopy(p.objective, p.auxiliary, basis=p.basis)
    sp = SwitchProblem(h, 0.4, np.zeros((1, 1)), [0.4])
    res = solve_switch(sp)
    assert res.converged
    assert res.constraint_norm <= 1e-12
    assert abs(res.det_at_start) > sp.delta
    assert np.abs(h(0.4, res.x0, res.omega)).max() <= 1e-11


@pytest.fixture(scope="module")
def ex1_stall():
    from tfc_homotopy.tracking import dcm_track
    p, h = _ex1()
    tr = dcm_track(lambda k, x: h(k, x), p.auxiliary.base_point, TrackerConfig(), dim=2)
    return h, tr.final


def test_switch_example1_resumes_to_solution(ex1_stall):
    from tfc_homotopy.tracking import dcm_track
    h, (kL, xL) = ex1_stall
    sp = SwitchProblem.from_config(h, kL, np.zeros((2, 2)), xL, TrackerConfig())
    res = solve_switch(sp)
    assert res.converged
    assert np.abs(h(kL, res.x0, res.omega)).max() <= 1e-11
    assert probe_path(sp, res.omega, res.x0) >= min(kL + 0.15, 1.0) - 1e-12
    g = lambda k, x: h(kL + k * (1 - kL), x, res.omega)
    tr = dcm_track(g, res.x0, TrackerConfig(), dim=2)
    assert tr.outcome == "success"
    np.testing.assert_allclose(tr.final[1], [0.0, 0.0], atol=1e-6)


def test_switch_deterministic(ex1_stall):
    h, (kL, xL) = ex1_stall
    a = solve_switch(SwitchProblem(h, kL, np.zeros((2, 2)), xL, seed=3))
    b = solve_switch(SwitchProblem(h, kL, np.zeros((2, 2)), xL, seed=3))
    np.testing.assert_array_equal(a.omega, b.omega)
    np.testing.assert_array_equal(a.x0, b.x0)
    assert a.objective_value == b.objective_value
    assert a.diagnostics == b.diagnostics
