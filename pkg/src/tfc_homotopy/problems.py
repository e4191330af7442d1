"""Benchmark zero-finding problems and synthetic path-type generators.

The two shooting problems integrate their flows with fixed-step RK4.  The
inner loops are compiled with numba; :func:`rk4_integrate` falls back to a
plain numpy loop for systems without a compiled kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .core import AuxiliaryProblem, ConfigurationError, ZeroProblem, make_auxiliary
from .homotopy import BasisFunction, exp_kappa2_basis
from .linalg import EvaluationError


class IntegrationError(EvaluationError):
    """State became non-finite during integration."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message, x)
        self.t = t


@dataclass(frozen=True)
class OdeSystem:
    """``dy/dt = rhs(t, y, param)`` on ``[t0, tf]``.

    ``param`` is whatever the right-hand side is parametrized by: the
    homotopy parameter for the optimal-control flow, the load vector for
    the rod.  ``kernel`` is an optional compiled integrator with signature
    ``(y0, param, t0, tf, steps) -> (y, status, t_fail)``.
    """

    dim: int
    rhs: Callable
    t0: float = 0.0
    tf: float = 1.0
    kernel: Optional[Callable] = None


def make_rk4_kernel(rhs):
    """Compile a fixed-step RK4 loop around a numba-jitted in-place
    ``rhs(t, y, param, out)``."""

    @numba.njit(cache=False)
    def integrate(y0, param, t0, tf, steps):
        n = y0.shape[0]
        h = (tf - t0) / steps
        y = y0.copy()
        tmp = np.empty(n)
        k1 = np.empty(n)
        k2 = np.empty(n)
        k3 = np.empty(n)
        k4 = np.empty(n)
        t = t0
        for i in range(steps):
            rhs(t, y, param, k1)
            for j in range(n):
                tmp[j] = y[j] + 0.5 * h * k1[j]
            rhs(t + 0.5 * h, tmp, param, k2)
            for j in range(n):
                tmp[j] = y[j] + 0.5 * h * k2[j]
            rhs(t + 0.5 * h, tmp, param, k3)
            for j in range(n):
                tmp[j] = y[j] + h * k3[j]
            rhs(t + h, tmp, param, k4)
            t = t0 + (i + 1) * h
            for j in range(n):
                y[j] += (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                if not np.isfinite(y[j]):
                    return y, 1, t
        return y, 0, t

    return integrate


def rk4_integrate(sys, y0, param, steps):
    """Classical RK4 from ``sys.t0`` to ``sys.tf`` in ``steps`` uniform steps.

    Returns ``y(tf)``.  Raises :class:`IntegrationError` with the failing
    time when the state leaves the finite range.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    y0 = np.array(y0, dtype=float, ndmin=1)
    if y0.shape != (sys.dim,):
        raise ValueError(f"y0 must have length {sys.dim}")
    if sys.kernel is not None:
        p = np.asarray(param, dtype=float) if np.ndim(param) else float(param)
        y, status, t = sys.kernel(y0, p, float(sys.t0), float(sys.tf), int(steps))
        if status:
            raise IntegrationError(f"integration blew up at t={t:.6g}", t, y0)
        return y
    h = (sys.tf - sys.t0) / steps
    y = y0
    f = sys.rhs
    for i in range(steps):
        t = sys.t0 + i * h
        k1 = np.asarray(f(t, y, param), dtype=float)
        k2 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k1, param), dtype=float)
        k3 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k2, param), dtype=float)
        k4 = np.asarray(f(t + h, y + h * k3, param), dtype=float)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"integration blew up at t={t + h:.6g}", t + h, y0)
    return y


@dataclass
class BenchmarkProblem:
    name: str
    objective: ZeroProblem
    auxiliary: AuxiliaryProblem
    basis: BasisFunction
    config_overrides: dict = field(default_factory=dict)
    reference_solution: Optional[np.ndarray] = None
    reference_tol: float = 1e-6
    description: str = ""
    extras: dict = field(default_factory=dict)
    embedding: Optional[Callable] = None  # natural-parameter homotopy (kappa, x) -> R^n


# ------------------------------------------------------------------ example 1


def example1(a=4.0, b=2.0, c=1.0):
    """Two-dimensional algebraic system with a fold on the fixed-point path."""

    def F(x):
        x1, x2 = x
        s = a * (x1 + x2)
        return np.array([s, s + (x1 - x2) * ((x1 - b) ** 2 + x2**2 - c)])

    def J(x):
        x1, x2 = x
        q = (x1 - b) ** 2 + x2**2 - c
        return np.array([[a, a],
                         [a + q + (x1 - x2) * 2 * (x1 - b), a - q + (x1 - x2) * 2 * x2]])

    obj = ZeroProblem(2, F, J, name="example1")
    aux = make_auxiliary("fixed_point", obj, [2.5, 0.5])
    return BenchmarkProblem(
        "example1", obj, aux, exp_kappa2_basis(2),
        config_overrides={"dkappa_default": 0.01},
        reference_solution=np.zeros(2), reference_tol=1e-6,
        description="algebraic system, fixed-point start [2.5, 0.5]",
    )


# ------------------------------------------------------------------ example 2


@numba.njit(cache=True)
def _ocp_rhs(t, y, kappa, out):
    x1, x2, l1, l2 = y[0], y[1], y[2], y[3]
    c = math.cos(x1 * x1)
    if abs(c) < 1e-8:
        out[:] = np.nan
        return
    out[0] = x1 + x2 - l1
    out[1] = kappa * math.tan(x1 * x1) - l2
    out[2] = -l1 - 2.0 * kappa * x1 * l2 / (c * c)
    out[3] = -l1


def _ocp_rhs_py(t, y, kappa):
    x1, x2, l1, l2 = y
    c = math.cos(x1 * x1)
    if abs(c) < 1e-8:
        raise EvaluationError("tan(x1^2) singular", y)
    return np.array([x1 + x2 - l1, kappa * math.tan(x1 * x1) - l2,
                     -l1 - 2.0 * kappa * x1 * l2 / c**2, -l1])


_OCP_KERNEL = None


def ocp_system(with_kernel=True):
    """Euler-Lagrange flow of the optimal-control example; param is kappa."""
    global _OCP_KERNEL
    kernel = None
    if with_kernel:
        if _OCP_KERNEL is None:
            _OCP_KERNEL = make_rk4_kernel(_ocp_rhs)
        kernel = _OCP_KERNEL
    return OdeSystem(4, _ocp_rhs_py, 0.0, 1.0, kernel)


def ocp_shooting(kappa, x0=(-1.0, -1.0), xf=(0.0, 0.0), steps=200, sys=None):
    """Shooting residual ``lambda0 -> x(tf) - xf`` for the flow at ``kappa``."""
    sys = sys or ocp_system()
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)

    def residual(lam):
        y0 = np.concatenate([x0, np.asarray(lam, dtype=float)])
        return rk4_integrate(sys, y0, kappa, steps)[:2] - xf

    return residual


def linear_costate(steps=200):
    """Initial costate of the ``kappa = 0`` problem and the shooting sensitivity.

    The ``kappa = 0`` flow is linear, so the residual is affine in the
    costate: one base and two unit evaluations give it exactly.
    """
    r = ocp_shooting(0.0, steps=steps)
    r0 = r(np.zeros(2))
    S = np.column_stack([r(np.eye(2)[j]) - r0 for j in range(2)])
    lam = np.linalg.solve(S, -r0)
    return lam, S


def ocp_embedding(steps=200, sys=None):
    """Shooting residual with ``kappa`` embedded in the dynamics."""
    sys = sys or ocp_system()
    x0 = np.array([-1.0, -1.0])

    def gamma(kappa, lam):
        y0 = np.concatenate([x0, np.asarray(lam, dtype=float)])
        return rk4_integrate(sys, y0, float(kappa), steps)[:2]

    return gamma


def example2(steps=200):
    """Indirect shooting for the nonlinear optimal-control example.

    ``embedding`` is the shooting residual of the flow at ``kappa``; it
    equals the auxiliary at 0 and the objective at 1.
    """
    lam0, S = linear_costate(steps)
    obj = ZeroProblem(2, ocp_shooting(1.0, steps=steps), name="example2")
    # the kappa = 0 shooting residual is exactly S (lam - lam0)
    aux = make_auxiliary("affine", obj, lam0, A=S)
    return BenchmarkProblem(
        "example2", obj, aux, exp_kappa2_basis(2),
        config_overrides={"dkappa_default": 0.005},
        reference_solution=None,
        description="shooting on the Euler-Lagrange flow, costate unknowns",
        extras={"linear_costate": lam0, "sensitivity": S, "steps": steps},
        embedding=ocp_embedding(steps),
    )


# ------------------------------------------------------------------ example 3


@numba.njit(cache=True)
def _rod_rhs(t, y, v, out):
    out[0] = math.cos(y[2])
    out[1] = math.sin(y[2])
    out[2] = v[0] * y[0] - v[1] * y[1] + v[2]


def _rod_rhs_py(t, y, v):
    return np.array([math.cos(y[2]), math.sin(y[2]), v[0] * y[0] - v[1] * y[1] + v[2]])


_ROD_KERNEL = None


def rod_system(with_kernel=True):
    """Elastica flow; param is the load vector ``[Q, P, M]``."""
    global _ROD_KERNEL
    kernel = None
    if with_kernel:
        if _ROD_KERNEL is None:
            _ROD_KERNEL = make_rk4_kernel(_rod_rhs)
        kernel = _ROD_KERNEL
    return OdeSystem(3, _rod_rhs_py, 0.0, 1.0, kernel)


def rod_residual(a=0.0, b=2.0 / math.pi, c=math.pi, steps=1000, sys=None):
    sys = sys or rod_system()
    target = np.array([a, b, c])
    y0 = np.zeros(3)

    def residual(v):
        return rk4_integrate(sys, y0, np.asarray(v, dtype=float), steps) - target

    return residual


def example3(a=0.0, b=2.0 / math.pi, c=math.pi, steps=1000):
    """Inverse elastica: tip position and angle given, loads unknown.

    ``b`` defaults to ``2/pi`` so that ``[0, 0, pi]`` is an exact zero.
    """
    obj = ZeroProblem(3, rod_residual(a, b, c, steps), name="example3")
    aux = make_auxiliary("fixed_point", obj, [0.0, 0.0, 1.85])
    return BenchmarkProblem(
        "example3", obj, aux, exp_kappa2_basis(3),
        config_overrides={"dkappa_default": 0.001, "growth_threshold": 100.0},
        reference_solution=np.array([0.0, 0.0, math.pi]), reference_tol=1e-4,
        description="inverse elastic rod, loads [Q, P, M]",
        extras={"a": a, "b": b, "c": c, "steps": steps},
    )


# ------------------------------------------------------------------ synthetic


def _scalar(name, F, dF, G, dG, x0, description):
    obj = ZeroProblem(1, lambda x: np.array([F(x[0])]), lambda x: np.array([[dF(x[0])]]),
                      name=name)
    aux = make_auxiliary("custom", obj, [x0], residual=lambda x: np.array([G(x[0])]),
                         jacobian=lambda x: np.array([[dG(x[0])]]))
    return BenchmarkProblem(name, obj, aux, exp_kappa2_basis(1),
                            config_overrides={"dkappa_default": 0.01},
                            description=description)


def _s_curve(x):
    # x + 8 x (x - 1/2)(x - 1): rises to 0.636, falls to 0.364, reaches 1 at x = 1
    return x + 8.0 * x * (x - 0.5) * (x - 1.0)


def _s_curve_d(x):
    return 1.0 + 8.0 * (3 * x**2 - 3 * x + 0.5)


def _bump(x):
    # local max ~0.475, local min ~0.395, then -> 0.9 as x -> inf
    return 0.9 * (1 - math.exp(-x / 3)) + 3.0 * x * math.exp(-3.0 * x)


def _bump_d(x):
    return 0.3 * math.exp(-x / 3) + 3.0 * math.exp(-3.0 * x) * (1 - 3.0 * x)


def synthetic_path(type_id):
    """Scalar problem whose convex-homotopy zero curve is of the given type.

    Each is written as ``Gamma(k, x) = kappa F(x) + (1 - kappa) G(x)``:

    1. ``s(x) - k`` with an S-shaped ``s``: fold, fold back, ends at ``k = 1``.
    2. ``x - k``: monotone.
    3. ``x^2 + k - 1/4``: fold, returns to ``k = 0`` at ``x = -1/2``.
    4. ``b(x) - k`` with a bump then ``b -> 0.9``: fold, then unbounded.
    5. ``x (1 - k) - 1``: monotone blow-up ``x = 1/(1 - k)``.
    """
    if type_id == 1:
        return _scalar("synthetic1", lambda x: _s_curve(x) - 1, _s_curve_d,
                       _s_curve, _s_curve_d, 0.0, "fold then recover")
    if type_id == 2:
        return _scalar("synthetic2", lambda x: x - 1.0, lambda x: 1.0,
                       lambda x: x, lambda x: 1.0, 0.0, "monotone")
    if type_id == 3:
        return _scalar("synthetic3", lambda x: x * x + 0.75, lambda x: 2 * x,
                       lambda x: x * x - 0.25, lambda x: 2 * x, 0.5, "returns to start")
    if type_id == 4:
        return _scalar("synthetic4", lambda x: _bump(x) - 1, _bump_d,
                       _bump, _bump_d, 0.0, "fold then unbounded")
    if type_id == 5:
        return _scalar("synthetic5", lambda x: -1.0, lambda x: 0.0,
                       lambda x: x - 1.0, lambda x: 1.0, 1.0, "monotone blow-up")
    raise ConfigurationError(f"synthetic path type must be 1..5, got {type_id}")


PROBLEMS = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    **{f"synthetic{i}": (lambda i=i: synthetic_path(i)) for i in range(1, 6)},
}


def get_problem(name):
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
