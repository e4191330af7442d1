"""Property-based checks of the homotopy identities, tracker invariants and
trace serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tfc_homotopy.core import PathTrace, TrackerConfig, ZeroProblem, make_auxiliary
from tfc_homotopy.homotopy import (BasisFunction, CallableHomotopy, ConvexHomotopy,
                                   SupportCase, TfcHomotopy, exp_kappa2_basis, q_matrices,
                                   vectorize_omega)
from tfc_homotopy.linalg import jacobian_fd
from tfc_homotopy.problems import example1, synthetic_path
from tfc_homotopy.switching import SwitchProblem, objective_J
from tfc_homotopy.tracking import dcm_track, pam_track, two_layer_track

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)
kappas = st.floats(0.0, 1.0, allow_nan=False)
cases = st.sampled_from(["poly", "exp_pos", "exp_neg"])


def _cubic3():
    """A 3-dim polynomial system with a Newton auxiliary."""
    A = np.array([[2.0, -1.0, 0.5], [0.3, 1.5, -0.4], [-0.2, 0.6, 1.1]])

    def F(x):
        return A @ x + np.array([x[0] * x[1], x[2] ** 3, x[0] ** 2 - x[1]])

    def J(x):
        return A + np.array([[x[1], x[0], 0.0], [0.0, 0.0, 3 * x[2] ** 2], [2 * x[0], -1.0, 0.0]])

    obj = ZeroProblem(3, F, J)
    return obj, make_auxiliary("newton", obj, [0.5, -0.3, 0.2])


def _cosh_basis(n):
    return BasisFunction(n, lambda k, x: np.cosh(x) * k**3 + k,
                         lambda k, x: np.diag(np.sinh(x) * k**3), name="cosh")


_EX1 = example1()
SETUPS = {
    ("ex1", "exp"): (_EX1.objective, _EX1.auxiliary, exp_kappa2_basis(2)),
    ("ex1", "cosh"): (_EX1.objective, _EX1.auxiliary, _cosh_basis(2)),
    ("cubic", "exp"): _cubic3() + (exp_kappa2_basis(3),),
    ("cubic", "cosh"): _cubic3() + (_cosh_basis(3),),
}
_H = {(name, case): TfcHomotopy(F, G, SupportCase(case), basis=b)
      for name, (F, G, b) in SETUPS.items() for case in ("poly", "exp_pos", "exp_neg")}


@st.composite
def tfc_draw(draw):
    name = draw(st.sampled_from(sorted(SETUPS)))
    case = draw(cases)
    h = _H[(name, case)]
    n = h.dim
    x = draw(arrays(float, n, elements=finite))
    W = draw(arrays(float, (n, n), elements=st.floats(-10, 10, allow_nan=False)))
    return h, x, W


def _scale(h, x, W):
    hb = np.linalg.norm(h.basis(0.0, x)) + np.linalg.norm(h.basis(1.0, x))
    return 1.0 + np.linalg.norm(h.objective(x)) + np.linalg.norm(h.auxiliary(x)) \
        + np.linalg.norm(W) * hb


@settings(max_examples=1000)
@given(tfc_draw())
def test_boundary_conditions(draw):
    h, x, W = draw
    s = _scale(h, x, W)
    assert np.linalg.norm(h(0.0, x, W) - h.auxiliary(x)) <= 1e-12 * s
    assert np.linalg.norm(h(1.0, x, W) - h.objective(x)) <= 1e-12 * s


@given(tfc_draw())
def test_gamma_omega_vanishes(draw):
    h, x, _ = draw
    hb = 1.0 + np.linalg.norm(h.basis(0.0, x)) + np.linalg.norm(h.basis(1.0, x))
    assert np.linalg.norm(h.gamma_omega(0.0, x)) <= 1e-12 * hb
    assert np.linalg.norm(h.gamma_omega(1.0, x)) <= 1e-12 * hb


@given(cases, st.sampled_from([0.0, -1.0]), st.sampled_from([1.0, 2.0]),
       st.integers(1, 5))
def test_q_block_identity(kind, eta0, etaf, n):
    s = SupportCase(kind, eta0, etaf)
    assert np.abs(s.block(n) @ q_matrices(s, n).full() - np.eye(2 * n)).max() <= 1e-10


@given(st.sampled_from(sorted(SETUPS)), kappas, st.data())
def test_poly_gamma0_is_convex(name, k, data):
    h = _H[(name, "poly")]
    x = data.draw(arrays(float, h.dim, elements=finite))
    conv = ConvexHomotopy(h.objective, h.auxiliary)(k, x)
    assert np.abs(h.gamma0(k, x) - conv).max() <= 1e-12 * (1 + np.abs(conv).max())


@given(tfc_draw(), kappas)
def test_vectorization_identity(draw, k):
    h, x, W = draw
    col, tilde = vectorize_omega(h, W)
    lhs = W @ h.gamma_omega(k, x)
    assert np.abs(tilde(k, x) @ col - lhs).max() <= 1e-12 * (1 + np.abs(lhs).max())


@given(tfc_draw(), st.floats(0.05, 0.95))
def test_jacobian_matches_fd(draw, k):
    h, x, W = draw
    J = h.jac_x(k, x, W)
    Jfd = jacobian_fd(lambda z: h(k, z, W), x)
    assert np.linalg.norm(J - Jfd) <= 1e-5 * max(1.0, np.linalg.norm(J))


# ---------------------------------------------------------------- switching


@given(st.floats(0.0, 0.95), st.floats(0.0, 0.95), st.floats(0.1, 5.0),
       st.floats(0.0, 0.9))
def test_objective_monotone_in_discount(g1, g2, c, kL):
    F = ZeroProblem(1, lambda x: c * x + 1.0)
    G = make_auxiliary("custom", F, [0.0], residual=lambda x: c * x + 1.0)
    h = TfcHomotopy(F, G, basis=exp_kappa2_basis(1))
    x0 = np.array([0.3])
    lo, hi = sorted((g1, g2))
    J = [objective_J(SwitchProblem(h, kL, np.zeros((1, 1)), x0, discount=g),
                     np.zeros((1, 1)), x0) for g in (lo, hi)]
    r = abs(c * 0.3 + 1.0)
    assert J[0] <= J[1] + 1e-15
    assert J[0] == pytest.approx(r * (1 + lo + lo**2), rel=1e-12)


# ---------------------------------------------------------------- trackers


@settings(max_examples=30)
@given(st.integers(1, 5), st.sampled_from([0.005, 0.01, 0.05]))
def test_dcm_monotone_and_certified(type_id, dk):
    p = synthetic_path(type_id)
    h = ConvexHomotopy(p.objective, p.auxiliary)
    cfg = TrackerConfig(dkappa_default=dk)
    tr = dcm_track(h, p.auxiliary.base_point, cfg)
    assert np.all(np.diff(tr.kappas) > 0)
    for k, x in tr.points:
        assert np.abs(h(k, x)).max() <= cfg.tol_f * 10


@settings(max_examples=30)
@given(st.floats(0.002, 0.05), st.floats(0.2, 0.45))
def test_pam_arclength(ds, r):
    # circle-like fold x^2 + k = r^2 with varying radius and step
    gamma = CallableHomotopy(lambda k, x: x * x + k - r * r, 1, lambda k, x: np.diag(2 * x),
                             lambda k, x: np.array([1.0]))
    tr = pam_track(gamma, [r], ds=ds)
    assert tr.outcome == "returned_to_start"
    assert tr.final[1][0] == pytest.approx(-r, abs=1e-6)
    steps = [e.payload["ds"] for e in tr.events_of("step_accepted") if e.payload]
    pts = [np.concatenate([[k], x]) for k, x in tr.points]
    for a, b, s in zip(pts[:-2], pts[1:-1], steps):
        assert abs(np.linalg.norm(b - a) - s) <= 0.5 * s
    for k, x in tr.points:
        assert np.abs(gamma(k, x)).max() <= 1e-11


@settings(max_examples=3)
@given(st.integers(0, 1000))
def test_switch_preserves_boundary(seed):
    h = _H[(("ex1", "exp"), "poly")]
    cfg = TrackerConfig(seed=seed)
    tr = two_layer_track(h, cfg)
    assert tr.count("switch_solved") >= 1
    for ev in tr.events_of("switch_solved"):
        W = np.asarray(ev.payload["omega"])
        assert np.abs(h(ev.kappa, ev.point, W)).max() <= cfg.tol_f * 10


@settings(max_examples=20)
@given(st.sampled_from([0.01, 0.02, 0.05, 0.1, 0.125]))
def test_poly_two_layer_equals_dcm(dk):
    p = synthetic_path(2)
    cfg = TrackerConfig(dkappa_default=dk)
    a = two_layer_track(TfcHomotopy(p.objective, p.auxiliary, basis=p.basis), cfg)
    b = dcm_track(ConvexHomotopy(p.objective, p.auxiliary), p.auxiliary.base_point, cfg)
    np.testing.assert_array_equal(a.kappas, b.kappas)


# ---------------------------------------------------------------- traces

any_float = st.floats(allow_nan=False, allow_infinity=False, width=64)
event_kinds = st.sampled_from(["step_halved", "limit_point_detected", "switch_solved",
                               "threshold_crossed", "ladder_retry"])


@st.composite
def traces(draw):
    n = draw(st.integers(1, 3))
    t = PathTrace()
    for _ in range(draw(st.integers(1, 8))):
        t.add_point(draw(any_float), draw(arrays(float, n, elements=any_float)),
                    segment=draw(st.integers(0, 3)))
    for _ in range(draw(st.integers(0, 4))):
        t.add_event(draw(event_kinds), draw(any_float),
                    draw(arrays(float, n, elements=any_float)),
                    {"value": draw(any_float), "level": draw(st.integers(0, 4))})
    t.outcome = draw(st.sampled_from(["success", "diverged", None]))
    return t


@given(traces())
def test_jsonl_round_trip(t):
    r = PathTrace.from_jsonl_lines(t.to_jsonl_lines())
    assert r.outcome == t.outcome and r.segments == t.segments
    for (k1, x1), (k2, x2) in zip(t.points, r.points):
        assert k1 == k2
        np.testing.assert_array_equal(x1, x2)
    for e1, e2 in zip(t.events, r.events):
        assert (e1.kind, e1.kappa, e1.payload) == (e2.kind, e2.kappa, e2.payload)
        np.testing.assert_array_equal(e1.point, e2.point)


@given(traces())
def test_csv_round_trip(tmp_path_factory, t):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    t.write_csv(path)
    r = PathTrace.read_csv(path)
    assert r.segments == t.segments
    for (k1, x1), (k2, x2) in zip(t.points, r.points):
        assert k1 == k2
        np.testing.assert_array_equal(x1, x2)
