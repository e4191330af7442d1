"""Dense linear algebra and root-finding kernels.

Thin wrappers over LAPACK (via scipy/numpy) plus a central-difference
Jacobian and a damped Newton corrector.  The corrector raises two distinct
exceptions, :class:`SingularPointError` and :class:`NoConvergenceError`,
which the path trackers use as their failure signals.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

PIVOT_TOL = 1e-14


class SingularMatrixError(ArithmeticError):
    """Raised when an LU pivot falls below :data:`PIVOT_TOL`."""


class EvaluationError(ArithmeticError):
    """A user map returned a non-finite value."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = None if x is None else np.array(x, dtype=float)


class SingularPointError(ArithmeticError):
    """Newton iterate hit a singular Jacobian."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = None if x is None else np.array(x, dtype=float)


class NoConvergenceError(ArithmeticError):
    """Newton iteration cap reached without meeting the tolerances."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = None if x is None else np.array(x, dtype=float)


def _lu(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise EvaluationError("matrix has non-finite entries")
    with warnings.catch_warnings():
        # exact singularity is reported through the pivot check instead
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    return lu, piv


def factor_dense(A):
    """LU factors of ``A``; raises :class:`SingularMatrixError` on a small pivot."""
    lu, piv = _lu(A)
    if np.min(np.abs(np.diag(lu))) < PIVOT_TOL:
        raise SingularMatrixError("pivot below threshold")
    return lu, piv


def solve_factored(factors, b):
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factors[0].shape[0]:
        raise ValueError("dimension mismatch between A and b")
    return scipy.linalg.lu_solve(factors, b, check_finite=False)


def solve_dense(A, b):
    """Solve ``A x = b`` by partial-pivoting LU.

    Raises :class:`SingularMatrixError` if any pivot is below ``1e-14`` in
    magnitude.
    """
    return solve_factored(factor_dense(A), b)


def determinant(A):
    """Determinant as the signed product of the LU pivots."""
    lu, piv = _lu(A)
    sign = 1.0
    for i, p in enumerate(piv):
        if p != i:
            sign = -sign
    return float(sign * np.prod(np.diag(lu)))


def svd(A):
    """Singular value decomposition in the ``A = U.T @ diag(s) @ V`` orientation.

    Returns ``(U, s, V)`` with ``s`` descending.  Both ``U`` and ``V`` are
    square and orthogonal.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise EvaluationError("matrix has non-finite entries")
    try:
        u, s, vh = np.linalg.svd(A, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("SVD did not converge") from exc
    return u.T, s, vh


def sigma_diag(s, shape):
    """Embed singular values ``s`` into an ``shape`` rectangular diagonal."""
    D = np.zeros(shape)
    k = len(s)
    D[:k, :k] = np.diag(s)
    return D


def jacobian_fd(f, x, h=None, f_args=()):
    """Central-difference Jacobian of ``f`` at ``x``.

    Column ``j`` is ``(f(x + h_j e_j) - f(x - h_j e_j)) / (2 h_j)`` with the
    default step ``h_j = 1e-6 * max(1, |x_j|)``.  ``h`` may be a scalar or a
    per-coordinate array.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if h is None:
        steps = 1e-6 * np.maximum(1.0, np.abs(x))
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=float), (n,))
        if np.any(steps <= 0):
            raise ValueError("finite-difference step must be positive")
    cols = []
    for j in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[j] += steps[j]
        xm[j] -= steps[j]
        fp = np.atleast_1d(np.asarray(f(xp, *f_args), dtype=float))
        fm = np.atleast_1d(np.asarray(f(xm, *f_args), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError("non-finite value in finite differences", x)
        cols.append((fp - fm) / (2.0 * steps[j]))
    return np.column_stack(cols)


def newton_solve(f, jac=None, x0=None, tol_f=1e-12, tol_x=1e-12, max_iters=50,
                 max_backtracks=8, max_step=None, full_output=False):
    """Damped Newton iteration for ``f(x) = 0``.

    Converges when ``||f(x)||_inf <= tol_f`` or when the full Newton step
    satisfies ``||dx||_inf <= tol_x * (1 + ||x||_inf)``.  When the residual
    norm does not decrease the step is halved, at most ``max_backtracks``
    times; if that still fails the iteration is declared non-convergent.
    A trial step is accepted if the residual 2-norm decreases or if the
    simplified Newton correction ``J^{-1} f(x + t dx)`` (old factors) is
    shorter than ``(1 - t/4) |dx|``.  The second test is invariant under
    rescaling of ``f`` and keeps full steps in narrow curved valleys where
    the residual alone would force tiny damping factors.
    ``max_step`` optionally caps the infinity norm of each update.
    With ``full_output`` the iteration count is returned alongside ``x``.

    The Jacobian is factored at every iterate, including one that already
    satisfies the residual test, so a root with a singular Jacobian raises.

    Raises :class:`SingularPointError` or :class:`NoConvergenceError`.
    """
    x = np.array(x0, dtype=float, ndmin=1)

    def evaluate(z):
        try:
            r = np.atleast_1d(np.asarray(f(z), dtype=float))
        except (EvaluationError, OverflowError, FloatingPointError):
            return None
        if not np.all(np.isfinite(r)):
            return None
        return r

    r = evaluate(x)
    if r is None:
        raise EvaluationError("residual not finite at the initial guess", x)
    # decrease is judged in the 2-norm, for which the Newton step is always
    # a descent direction; convergence is judged in the inf-norm
    rnorm = np.max(np.abs(r)) if r.size else 0.0
    merit = float(r @ r)

    def done(z, k):
        return (z, k) if full_output else z

    for it in range(max_iters):
        # the Jacobian is checked before the residual so that a singular
        # root is reported rather than silently accepted
        try:
            J = jac(x) if jac is not None else jacobian_fd(f, x)
            factors = factor_dense(J)
            dx = -solve_factored(factors, r)
        except SingularMatrixError as exc:
            raise SingularPointError("singular Jacobian", x) from exc
        except EvaluationError as exc:
            raise NoConvergenceError("Jacobian evaluation failed", x) from exc
        if rnorm <= tol_f:
            return done(x, it)
        if max_step is not None:
            big = np.max(np.abs(dx))
            if big > max_step:
                dx *= max_step / big
        if np.max(np.abs(dx)) <= tol_x * (1.0 + np.max(np.abs(x))):
            x_new = x + dx
            r_new = evaluate(x_new)
            if r_new is not None:
                return done(x_new, it + 1)
            return done(x, it)
        t = 1.0
        dx_norm = np.linalg.norm(dx)
        for _ in range(max_backtracks + 1):
            x_new = x + t * dx
            r_new = evaluate(x_new)
            if r_new is not None:
                m_new = float(r_new @ r_new)
                if m_new < merit:
                    break
                dx_bar = solve_factored(factors, r_new)
                if np.linalg.norm(dx_bar) <= (1.0 - t / 4.0) * dx_norm:
                    break
            t *= 0.5
        else:
            raise NoConvergenceError("line search failed to reduce residual", x)
        x, r, merit = x_new, r_new, m_new
        rnorm = np.max(np.abs(r))
    if rnorm <= tol_f:
        return done(x, max_iters)
    raise NoConvergenceError(f"no convergence in {max_iters} iterations", x)
