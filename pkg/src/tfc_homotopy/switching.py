"""Path-switch optimizer for the second layer of the TFC tracker.

Given a stalled or runaway path at ``kappa_L``, look for a new weight
matrix ``W`` and restart point ``x0`` that sit on a consistent,
non-singular homotopy path whose projected residual ahead of ``kappa_L``
is small.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .linalg import (EvaluationError, NoConvergenceError, SingularPointError,
                     determinant, newton_solve)

log = logging.getLogger(__name__)

PENALTY_WEIGHTS = (1e2, 1e4, 1e6, 1e8)
_BAD = 1e20
# forward-difference step; 1e-8 is below the noise floor of shooting residuals
FD_STEP = 1e-7


@dataclass
class SwitchProblem:
    homotopy: object
    kappa_L: float
    guess_omega: np.ndarray
    guess_x: np.ndarray
    discount: float = 0.5
    horizon: int = 15
    n_predicted: int = 2
    delta: float = 1e-4
    dkappa: float = 0.01
    tol_f: float = 1e-12
    tol_x: float = 1e-12
    seed: int = 0
    max_fevals: int = 2000
    restarts: int = 5
    noise: float = 0.5
    max_consecutive_fails: int = 3
    max_corrector_iters: int = 30
    probe: bool = True

    def __post_init__(self):
        if not 0.0 <= self.kappa_L < 1.0:
            raise ValueError("kappa_L must lie in [0, 1)")
        if self.n_predicted < 1 or self.delta <= 0:
            raise ValueError("need n_predicted >= 1 and delta > 0")
        self.guess_omega = np.array(self.guess_omega, dtype=float, ndmin=2)
        self.guess_x = np.array(self.guess_x, dtype=float, ndmin=1)

    @classmethod
    def from_config(cls, homotopy, kappa_L, guess_omega, guess_x, config, **kw):
        return cls(homotopy, kappa_L, guess_omega, guess_x,
                   discount=config.discount, horizon=config.horizon,
                   n_predicted=config.n_predicted, delta=config.sing_det_threshold,
                   dkappa=config.dkappa_default, tol_f=config.tol_f,
                   tol_x=config.tol_x, seed=config.seed,
                   max_consecutive_fails=config.max_consecutive_fails,
                   max_corrector_iters=config.max_corrector_iters, **kw)

    @property
    def n(self):
        return self.guess_x.size

    def predicted_kappas(self):
        k = self.kappa_L
        ks = [min(k + self.dkappa, 1.0)]
        ks += [min(k + i * self.horizon * self.dkappa, 1.0)
               for i in range(1, self.n_predicted + 1)]
        return ks

    def split(self, z):
        m = self.guess_omega.shape[1]
        nm = self.n * m
        return z[:nm].reshape(self.n, m), z[nm:]

    def join(self, omega, x0):
        return np.concatenate([np.asarray(omega, dtype=float).reshape(-1),
                               np.asarray(x0, dtype=float)])


@dataclass
class SwitchResult:
    omega: np.ndarray
    x0: np.ndarray
    objective_value: float
    constraint_norm: float
    det_at_start: float
    iterations: int
    status: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.status == "converged"


def objective_J(p, omega, x0):
    """Near-side residual norm plus discounted far-side norms, all at ``x0``."""
    res = p.homotopy.at_kappas(p.predicted_kappas(), x0, omega)
    weights = [1.0] + [p.discount**i for i in range(1, p.n_predicted + 1)]
    return float(sum(w * np.linalg.norm(r) for w, r in zip(weights, res)))


def ceq(p, omega, x0):
    """Consistency residual at ``kappa_L``; all ones if the Jacobian determinant
    is within ``delta`` of zero."""
    D = p.homotopy.jac_x(p.kappa_L, x0, omega)
    if abs(determinant(D)) <= p.delta:
        return np.ones(p.n)
    return p.homotopy(p.kappa_L, x0, omega)


def _penalty(z, p, mu, counter):
    counter[0] += 1
    omega, x0 = p.split(z)
    try:
        J = objective_J(p, omega, x0)
        c = ceq(p, omega, x0)
    except (EvaluationError, ArithmeticError, ValueError):
        return _BAD
    val = J + mu * float(c @ c)
    if not np.isfinite(val):
        return _BAD
    return min(val, _BAD)


def _lbfgsb(z, p, mu, counter, bounds=None):
    return minimize(_penalty, z, args=(p, mu, counter), method="L-BFGS-B", bounds=bounds,
                    options={"maxfun": p.max_fevals, "maxiter": p.max_fevals,
                             "eps": FD_STEP, "ftol": 1e-15, "gtol": 1e-10, "maxls": 50})


def _minimize_stage(z, p, mu, counter):
    """One penalty stage.  Returns ``(z_new, hit_eval_cap)``.

    The unit first step of L-BFGS-B can land where the residual cannot be
    evaluated; the flat ``_BAD`` plateau then stalls the line search.  In
    that case retry inside shrinking boxes around ``z`` and, failing that,
    use a derivative-free Powell search.
    """
    f0 = _penalty(z, p, mu, counter)
    capped = False
    radius = None
    for _ in range(4):
        bounds = None if radius is None else [(v - r, v + r) for v, r in
                                              zip(z, radius * (1.0 + np.abs(z)))]
        res = _lbfgsb(z, p, mu, counter, bounds)
        capped = capped or res.status == 1
        ok = np.all(np.isfinite(res.x)) and np.isfinite(res.fun) and res.fun < _BAD
        if ok and res.fun <= f0 and np.linalg.norm(res.x - z) > 1e-12 * (1 + np.linalg.norm(z)):
            return res.x, capped
        if ok and res.fun <= f0 and np.linalg.norm(res.jac) <= 1e-8:
            return z, capped  # genuinely stationary
        radius = 0.1 if radius is None else radius / 4
    res = minimize(_penalty, z, args=(p, mu, counter), method="Powell",
                   options={"maxfev": p.max_fevals})
    if np.all(np.isfinite(res.x)) and res.fun <= f0:
        return res.x, capped
    return z, capped


def _polish(p, omega, x0):
    """Restore exact consistency at ``kappa_L`` by Newton in ``x`` alone."""
    h = p.homotopy
    x = newton_solve(lambda z: h(p.kappa_L, z, omega),
                     lambda z: h.jac_x(p.kappa_L, z, omega),
                     x0, tol_f=p.tol_f, tol_x=p.tol_x, max_iters=50)
    return x


def probe_path(p, omega, x0):
    """Track the candidate path with ``W`` frozen from ``kappa_L`` up to the
    far-side horizon ``kappa_L + zeta*dkappa`` using the DCM step rule.

    Returns the last ``kappa`` reached; a candidate whose path folds back
    inside the horizon J was scored on would stall the first layer at once.
    """
    h = p.homotopy
    k_end = min(p.kappa_L + p.horizon * p.dkappa, 1.0)
    k, x, dk, fails = p.kappa_L, np.array(x0, dtype=float), p.dkappa, 0
    while k < k_end - 1e-15:
        kn = min(k + dk, k_end)
        try:
            x = newton_solve(lambda z: h(kn, z, omega), lambda z: h.jac_x(kn, z, omega),
                             x, tol_f=p.tol_f, tol_x=p.tol_x, max_iters=p.max_corrector_iters)
        except (NoConvergenceError, SingularPointError, EvaluationError, ArithmeticError):
            fails += 1
            if fails >= p.max_consecutive_fails:
                break
            dk /= 2
            continue
        k, dk, fails = kn, p.dkappa, 0
    return k


def solve_switch(p):
    """Minimize ``J`` subject to ``ceq = 0`` over ``(W, x0)``.

    Exterior quadratic penalty ``J + mu |ceq|^2`` for increasing ``mu``,
    each stage solved by L-BFGS-B with finite-difference gradients on
    ``[vec(W), x0]``.  The final point is made exactly consistent by a
    Newton solve in ``x0`` with ``W`` frozen.  A candidate counts as failed
    if it is infeasible or if ``probe_path`` stalls before the far-side
    horizon; the guess is then perturbed with Gaussian noise and the whole
    sequence repeated.  If no candidate passes the probe, the feasible one
    with the lowest ``J`` is returned.
    """
    if hasattr(p.homotopy, "memoized"):
        # most finite-difference probes move W only; reuse F, G at fixed x0
        p = replace(p, homotopy=p.homotopy.memoized())
    rng = np.random.default_rng(p.seed)
    z_guess = p.join(p.guess_omega, p.guess_x)
    counter = [0]
    best = None
    hit_cap = False
    attempts = []
    for attempt in range(p.restarts + 1):
        if attempt == 0:
            z = z_guess.copy()
        else:
            z = z_guess + rng.normal(0.0, p.noise, z_guess.size)
        for mu in PENALTY_WEIGHTS:
            z, capped = _minimize_stage(z, p, mu, counter)
            hit_cap = hit_cap or capped
        omega, x0 = p.split(z)
        try:
            x0 = _polish(p, omega, x0)
            D = p.homotopy.jac_x(p.kappa_L, x0, omega)
            det = determinant(D)
            c = p.homotopy(p.kappa_L, x0, omega)
            J = objective_J(p, omega, x0)
        except (NoConvergenceError, SingularPointError, EvaluationError, ArithmeticError) as exc:
            attempts.append({"attempt": attempt, "error": type(exc).__name__})
            log.debug("switch attempt %d failed: %s", attempt, exc)
            continue
        cn = float(np.linalg.norm(c))
        feasible = abs(det) > p.delta and cn <= p.tol_f * 100 and np.isfinite(J)
        rec = {"attempt": attempt, "J": J, "det": det, "cnorm": cn, "feasible": bool(feasible)}
        attempts.append(rec)
        if not feasible:
            continue
        cand = SwitchResult(omega, x0, J, cn, det, counter[0], "converged")
        if best is None or J < best.objective_value:
            best = cand
        if not p.probe:
            break
        reach = probe_path(p, omega, x0)
        rec["probe_kappa"] = reach
        if reach >= min(p.kappa_L + p.horizon * p.dkappa, 1.0) - 1e-12:
            best = cand
            break
    diag = {"seed": p.seed, "attempts": attempts, "fevals": counter[0]}
    if best is None:
        omega, x0 = p.split(z_guess)
        status = "max_iters" if hit_cap else "infeasible"
        return SwitchResult(omega, x0, float("nan"), float("nan"), float("nan"),
                            counter[0], status, diag)
    best.diagnostics = diag
    return best


def default_switcher(homotopy, kappa_L, x_guess, omega_guess, config, **kw):
    p = SwitchProblem.from_config(homotopy, kappa_L, omega_guess, x_guess, config, **kw)
    return solve_switch(p)
