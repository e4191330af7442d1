"""Homotopy functions: convex, and TFC-based with a free weight matrix.

The TFC homotopy reads ``Gamma(k, x, W) = W @ Gamma_W(k, x) + Gamma_0(k, x)``
where ``Gamma_0 = A(k) G(x) + B(k) F(x)`` with ``A(k) = sum_i P_i Q_i1`` and
``B(k) = sum_i P_i Q_i2``, and ``Gamma_W = h(k, x) - A(k) h(0, x) - B(k) h(1, x)``.
Both boundary conditions ``Gamma(0) = G`` and ``Gamma(1) = F`` hold for every
``W`` by construction.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ConfigurationError
from .linalg import EvaluationError, jacobian_fd, svd

EXP_CLAMP = 300.0


class RegularizationError(ArithmeticError):
    """``d Gamma_W / dx`` is rank deficient, so no regularizing ``W`` exists."""


# ---------------------------------------------------------------- evaluators


class HomotopyEvaluator:
    """Interface consumed by the trackers: residual plus x- and k-Jacobians."""

    dim: int

    def __call__(self, kappa, x):
        raise NotImplementedError

    def jac_x(self, kappa, x):
        x = np.asarray(x, dtype=float)
        return jacobian_fd(lambda z: self(kappa, z), x)

    def jac_kappa(self, kappa, x):
        eps = 1e-7
        x = np.asarray(x, dtype=float)
        return (self(kappa + eps, x) - self(kappa - eps, x)) / (2 * eps)


class CallableHomotopy(HomotopyEvaluator):
    """Wrap a plain ``gamma(kappa, x)`` callable with optional Jacobians."""

    def __init__(self, fn, dim, jac_x=None, jac_kappa=None):
        self.fn = fn
        self.dim = dim
        self._jx = jac_x
        self._jk = jac_kappa

    def __call__(self, kappa, x):
        return np.atleast_1d(np.asarray(self.fn(kappa, np.asarray(x, dtype=float)), dtype=float))

    def jac_x(self, kappa, x):
        if self._jx is not None:
            return np.atleast_2d(np.asarray(self._jx(kappa, x), dtype=float))
        return super().jac_x(kappa, x)

    def jac_kappa(self, kappa, x):
        if self._jk is not None:
            return np.atleast_1d(np.asarray(self._jk(kappa, x), dtype=float))
        return super().jac_kappa(kappa, x)


def as_evaluator(gamma, dim=None):
    if isinstance(gamma, HomotopyEvaluator):
        return gamma
    if dim is None:
        raise ConfigurationError("dim is required to wrap a plain callable")
    return CallableHomotopy(gamma, dim)


def convex_homotopy(F, G, kappa, x):
    """``kappa F(x) + (1 - kappa) G(x)``."""
    return kappa * np.asarray(F(x), dtype=float) + (1.0 - kappa) * np.asarray(G(x), dtype=float)


class ConvexHomotopy(HomotopyEvaluator):
    def __init__(self, objective, auxiliary):
        self.objective = objective
        self.auxiliary = auxiliary
        self.dim = objective.dim

    def __call__(self, kappa, x):
        return convex_homotopy(self.objective, self.auxiliary, kappa, x)

    def jac_x(self, kappa, x):
        return kappa * self.objective.jac(x) + (1.0 - kappa) * self.auxiliary.jac(x)

    def jac_kappa(self, kappa, x):
        return self.objective(x) - self.auxiliary(x)


# ---------------------------------------------------------------- TFC pieces

SUPPORT_KINDS = ("poly", "exp_pos", "exp_neg")


@dataclass(frozen=True)
class SupportCase:
    """Scalar support functions ``P1(eta) I`` and ``P2(eta) I``."""

    kind: str = "poly"
    eta0: float = 0.0
    etaf: float = 1.0

    def __post_init__(self):
        if self.kind not in SUPPORT_KINDS:
            raise ConfigurationError(f"unknown support case {self.kind!r}")
        if not self.eta0 < self.etaf:
            raise ConfigurationError("eta0 must be smaller than etaf")

    @property
    def tau(self):
        return math.exp(self.eta0 - self.etaf)

    def eta(self, kappa):
        return (1.0 - kappa) * self.eta0 + kappa * self.etaf

    def p1(self, eta):
        return 1.0

    def p2(self, eta):
        if self.kind == "poly":
            return eta
        if self.kind == "exp_pos":
            return math.exp(eta)
        return math.exp(-eta)

    def P1(self, eta, n):
        return self.p1(eta) * np.eye(n)

    def P2(self, eta, n):
        return self.p2(eta) * np.eye(n)

    def block(self, n):
        """The ``2n x 2n`` boundary matrix whose inverse holds the Q blocks."""
        return np.block([[self.P1(self.eta0, n), self.P2(self.eta0, n)],
                         [self.P1(self.etaf, n), self.P2(self.etaf, n)]])


@dataclass(frozen=True)
class QMatrices:
    q11: np.ndarray
    q12: np.ndarray
    q21: np.ndarray
    q22: np.ndarray

    def full(self):
        return np.block([[self.q11, self.q12], [self.q21, self.q22]])


def q_matrices(support, n):
    """Invert the support boundary matrix directly and split it into blocks."""
    M = support.block(n)
    if np.linalg.cond(M) > 1e12:
        raise ConfigurationError("support boundary matrix is singular")
    Q = np.linalg.inv(M)
    return QMatrices(Q[:n, :n], Q[:n, n:], Q[n:, :n], Q[n:, n:])


def q_matrices_blockwise(support, n):
    """Closed-form block expressions; needs ``P1(eta0)`` and ``P2(etaf)`` invertible."""
    inv = np.linalg.inv
    P10, P20 = support.P1(support.eta0, n), support.P2(support.eta0, n)
    P1f, P2f = support.P1(support.etaf, n), support.P2(support.etaf, n)
    q11 = inv(P10 - P20 @ inv(P2f) @ P1f)
    q21 = -inv(P2f) @ P1f @ q11
    q22 = inv(P2f - P1f @ inv(P10) @ P20)
    q12 = -inv(P10) @ P20 @ q22
    return QMatrices(q11, q12, q21, q22)


@dataclass(frozen=True)
class BasisFunction:
    """State-dependent basis ``h(kappa, x) -> R^m``; ``m`` must equal ``n``."""

    m: int
    fn: Callable
    jac: Optional[Callable] = None
    name: str = "custom"

    def __call__(self, kappa, x):
        return np.asarray(self.fn(kappa, np.asarray(x, dtype=float)), dtype=float)

    def jac_x(self, kappa, x):
        if self.jac is not None:
            return np.asarray(self.jac(kappa, np.asarray(x, dtype=float)), dtype=float)
        return jacobian_fd(lambda z: self(kappa, z), np.asarray(x, dtype=float))


def _guarded_exp(x):
    x = np.asarray(x, dtype=float)
    if x.max(initial=-np.inf) > EXP_CLAMP:
        raise EvaluationError("basis exponent above clamp", x)
    return np.exp(x)


def exp_kappa2_basis(n):
    """The default basis ``h_i = exp(x_i) kappa^2``."""

    def fn(kappa, x):
        return _guarded_exp(x) * kappa**2

    def jac(kappa, x):
        return np.diag(_guarded_exp(x) * kappa**2)

    return BasisFunction(n, fn, jac, name="exp_kappa2")


def validate_basis(basis, n, samples=20, seed=0):
    """Sample-based check that ``m = n`` and that no component vanishes for
    ``kappa in (0, 1]``.  The basis must also be nonlinear in ``kappa``."""
    if basis.m != n:
        raise ConfigurationError(f"basis dimension {basis.m} must equal n = {n}")
    rng = np.random.default_rng(seed)
    nonlinear = False
    for _ in range(samples):
        x = rng.uniform(-2.0, 2.0, n)
        for kappa in rng.uniform(0.05, 1.0, 3):
            hv = basis(kappa, x)
            if hv.shape != (n,):
                raise ConfigurationError("basis output has the wrong shape")
            if np.any(hv == 0.0):
                raise ConfigurationError("basis has a vanishing component")
        h0, h1, hm = basis(0.0, x), basis(1.0, x), basis(0.5, x)
        if not np.allclose(hm, 0.5 * (h0 + h1), rtol=1e-9, atol=1e-12):
            nonlinear = True
    if not nonlinear:
        raise ConfigurationError("basis must be nonlinear in kappa")


@dataclass(eq=False)
class TfcHomotopy(HomotopyEvaluator):
    """TFC homotopy bundle; ``omega`` is replaced wholesale at path switches.

    ``baseline`` optionally replaces the blended ``Gamma_0`` by another
    evaluator with the same end values (``G`` at 0, ``F`` at 1), e.g. a
    parameter embedded in an ODE right-hand side.
    """

    objective: object
    auxiliary: object
    support: SupportCase = field(default_factory=SupportCase)
    basis: Optional[BasisFunction] = None
    omega: Optional[np.ndarray] = None
    validate: bool = True
    baseline: Optional[HomotopyEvaluator] = None

    def __post_init__(self):
        n = self.objective.dim
        self.dim = n
        if self.basis is None:
            self.basis = exp_kappa2_basis(n)
        elif self.validate:
            validate_basis(self.basis, n)
        if self.basis.m != n:
            raise ConfigurationError("basis dimension must equal n")
        self.q = q_matrices(self.support, n)
        self._coef_cache = {}
        if self.omega is None:
            self.omega = np.zeros((n, self.basis.m))
        self.omega = np.array(self.omega, dtype=float)

    # all support cases are scalar multiples of I, so the combined blocks are too
    def coefficients(self, kappa):
        """``(A(k), B(k))`` as n x n matrices: ``sum_i P_i Q_i1`` and ``sum_i P_i Q_i2``."""
        key = float(kappa)
        hit = self._coef_cache.get(key)
        if hit is not None:
            return hit
        n = self.dim
        eta = self.support.eta(kappa)
        P1, P2 = self.support.P1(eta, n), self.support.P2(eta, n)
        out = (P1 @ self.q.q11 + P2 @ self.q.q21, P1 @ self.q.q12 + P2 @ self.q.q22)
        for M in out:
            M.flags.writeable = False
        if len(self._coef_cache) > 4096:
            self._coef_cache.clear()
        self._coef_cache[key] = out
        return out

    def _omega(self, omega):
        return self.omega if omega is None else np.asarray(omega, dtype=float)

    def gamma0(self, kappa, x):
        if self.baseline is not None:
            return self.baseline(kappa, x)
        A, B = self.coefficients(kappa)
        return A @ self.auxiliary(x) + B @ self.objective(x)

    def gamma_omega(self, kappa, x):
        A, B = self.coefficients(kappa)
        h = self.basis
        return h(kappa, x) - A @ h(0.0, x) - B @ h(1.0, x)

    def __call__(self, kappa, x, omega=None):
        x = np.asarray(x, dtype=float)
        return self._omega(omega) @ self.gamma_omega(kappa, x) + self.gamma0(kappa, x)

    def gamma0_jac_x(self, kappa, x):
        if self.baseline is not None:
            return self.baseline.jac_x(kappa, x)
        A, B = self.coefficients(kappa)
        return A @ self.auxiliary.jac(x) + B @ self.objective.jac(x)

    def gamma_omega_jac_x(self, kappa, x):
        A, B = self.coefficients(kappa)
        h = self.basis
        return h.jac_x(kappa, x) - A @ h.jac_x(0.0, x) - B @ h.jac_x(1.0, x)

    def jac_x(self, kappa, x, omega=None):
        x = np.asarray(x, dtype=float)
        return self._omega(omega) @ self.gamma_omega_jac_x(kappa, x) + self.gamma0_jac_x(kappa, x)

    def jac_kappa(self, kappa, x, omega=None):
        eps = 1e-7
        return (self(kappa + eps, x, omega) - self(kappa - eps, x, omega)) / (2 * eps)

    def at_kappas(self, kappas, x, omega=None):
        """Residuals at several ``kappa`` for one ``x``; F, G and the basis
        boundary values are evaluated once."""
        x = np.asarray(x, dtype=float)
        W = self._omega(omega)
        if self.baseline is None:
            Fx, Gx = self.objective(x), self.auxiliary(x)
        h0, h1 = self.basis(0.0, x), self.basis(1.0, x)
        out = []
        for k in kappas:
            A, B = self.coefficients(k)
            if self.baseline is None:
                g0 = A @ Gx + B @ Fx
            else:
                g0 = self.baseline(k, x)
            out.append(W @ (self.basis(k, x) - A @ h0 - B @ h1) + g0)
        return out

    def with_omega(self, omega):
        """Copy sharing everything but the weight matrix."""
        new = TfcHomotopy.__new__(TfcHomotopy)
        new.__dict__.update(self.__dict__)
        new.omega = np.array(omega, dtype=float)
        return new

    def memoized(self, size=64):
        """Copy whose ``F``, ``G`` and baseline results are cached by the exact
        bytes of their arguments.  Useful when many evaluations share ``x``
        and differ only in ``omega``, as in the switch optimizer."""
        new = TfcHomotopy.__new__(TfcHomotopy)
        new.__dict__.update(self.__dict__)
        new.objective = _Memo(self.objective, size)
        new.auxiliary = _Memo(self.auxiliary, size)
        new.basis = _Memo(self.basis, 4 * size)
        if self.baseline is not None:
            new.baseline = _Memo(self.baseline, size)
        return new


class _Memo:
    """LRU cache over ``f(*args)`` and ``f.jac``/``f.jac_x`` keyed on argument bytes."""

    def __init__(self, inner, size=64):
        self.inner = inner
        self.size = size
        self.dim = getattr(inner, "dim", None)
        self._cache = OrderedDict()

    def _get(self, tag, fn, args):
        key = (tag,) + tuple(np.asarray(a, dtype=float).tobytes() for a in args)
        hit = self._cache.get(key)
        if hit is None:
            hit = np.asarray(fn(*args), dtype=float)
            self._cache[key] = hit
            if len(self._cache) > self.size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return hit.copy()

    def __call__(self, *args):
        return self._get("f", self.inner, args)

    def jac(self, *args):
        return self._get("j", self.inner.jac, args)

    def jac_x(self, *args):
        return self._get("jx", self.inner.jac_x, args)

    def __getattr__(self, name):
        return getattr(self.inner, name)


def gamma0(h, kappa, x):
    return h.gamma0(kappa, x)


def gamma_omega(h, kappa, x):
    return h.gamma_omega(kappa, x)


def tfc_gamma(h, kappa, x, omega=None):
    return h(kappa, x, omega)


def tfc_gamma_jac_x(h, kappa, x, omega=None):
    return h.jac_x(kappa, x, omega)


def vectorize_omega(h, omega):
    """Row-stack ``omega`` and return the matching block-diagonal operator.

    Returns ``(omega_col, tilde)`` where ``tilde(kappa, x)`` is the
    ``n x mn`` matrix with ``gamma_omega(kappa, x)^T`` repeated along the
    diagonal, so that ``omega @ gamma_omega == tilde(kappa, x) @ omega_col``.
    """
    omega = np.asarray(omega, dtype=float)
    n = omega.shape[0]

    def tilde(kappa, x):
        return np.kron(np.eye(n), h.gamma_omega(kappa, x)[None, :])

    return omega.reshape(-1).copy(), tilde


def unvectorize_omega(omega_col, n):
    return np.asarray(omega_col, dtype=float).reshape(n, -1)


def regularize_omega(h, kappa, x, target_sigma=1e-2):
    """Weight matrix that lifts every singular value of ``d Gamma/dx`` to at
    least ``target_sigma``.

    With ``d Gamma_0/dx = U^T diag(s) V``, the shift ``S = U^T diag(l) V``
    uses ``l_i = max(target_sigma - s_i, 0)`` and the returned weights
    ``W = S D^T (D D^T)^{-1}`` (``D = d Gamma_W/dx``) satisfy ``W D = S``.
    """
    x = np.asarray(x, dtype=float)
    D0 = h.gamma0_jac_x(kappa, x)
    D = h.gamma_omega_jac_x(kappa, x)
    sD = np.linalg.svd(D, compute_uv=False)
    if sD[-1] <= 1e-12 * max(1.0, sD[0]):
        raise RegularizationError("d Gamma_W / dx is rank deficient")
    U, s, V = svd(D0)
    lam = np.maximum(target_sigma - s, 0.0)
    S = U.T @ np.diag(lam) @ V
    return S @ D.T @ np.linalg.inv(D @ D.T)
