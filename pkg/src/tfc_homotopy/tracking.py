"""Path-following drivers.

Discrete continuation and pseudo-arclength follow one fixed path.  The
two-layer TFC tracker switches paths at limit points and on runaway growth.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .core import PathTrace, TrackerConfig
from .homotopy import as_evaluator
from .linalg import (EvaluationError, NoConvergenceError, SingularPointError,
                     newton_solve)

log = logging.getLogger(__name__)

_CORRECTOR_ERRORS = (NoConvergenceError, SingularPointError, EvaluationError)


class IrregularPointError(ArithmeticError):
    """The augmented matrix ``[Gamma_k | Gamma_x]`` has rank below n."""


def _inf(x):
    return float(np.max(np.abs(x)))


def _correct(gamma, kappa, x, config, omega=None):
    if omega is None:
        f = lambda z: gamma(kappa, z)
        J = lambda z: gamma.jac_x(kappa, z)
    else:
        f = lambda z: gamma(kappa, z, omega)
        J = lambda z: gamma.jac_x(kappa, z, omega)
    return newton_solve(f, J, x, tol_f=config.tol_f, tol_x=config.tol_x,
                        max_iters=config.max_corrector_iters)


def _start(gamma, x_start, config, omega=None):
    x = np.array(x_start, dtype=float, ndmin=1)
    r = gamma(0.0, x) if omega is None else gamma(0.0, x, omega)
    if _inf(r) > config.tol_f:
        x = _correct(gamma, 0.0, x, config, omega)
    return x


def dcm_track(gamma, x_start, config=None, dim=None):
    """Discrete continuation: step ``kappa`` forward, correct from the previous
    solution, halve the step on corrector failure.

    Ends with ``success`` at ``kappa = 1``, ``limit_point_stall`` after
    ``max_consecutive_fails`` failures in a row, or ``diverged`` when an
    accepted point leaves the ``growth_threshold`` box.
    """
    config = config or TrackerConfig()
    x_start = np.array(x_start, dtype=float, ndmin=1)
    gamma = as_evaluator(gamma, dim or x_start.size)
    trace = PathTrace()
    t0 = time.perf_counter()
    x = _start(gamma, x_start, config)
    trace.add_point(0.0, x)
    kappa_old, dk, fails = 0.0, config.dkappa_default, 0
    halvings = 0
    while kappa_old < 1.0:
        kappa = min(kappa_old + dk, 1.0)
        try:
            x_new = _correct(gamma, kappa, x, config)
        except _CORRECTOR_ERRORS:
            fails += 1
            if fails >= config.max_consecutive_fails:
                trace.add_event("limit_point_detected", kappa_old, x,
                                {"failed_kappa": kappa})
                trace.outcome = "limit_point_stall"
                break
            dk /= 2.0
            halvings += 1
            trace.add_event("step_halved", kappa_old, x, {"dkappa": dk})
            continue
        x, kappa_old, fails = x_new, kappa, 0
        trace.add_point(kappa, x)
        if _inf(x) > config.growth_threshold:
            trace.add_event("threshold_crossed", kappa, x)
            trace.outcome = "diverged"
            break
        dk = min(1.0 - kappa, config.dkappa_default)
    else:
        trace.add_event("converged", 1.0, x)
        trace.outcome = "success"
    trace.stats = {"accepted": len(trace.points), "halvings": halvings,
                   "switches": 0, "wall_time": time.perf_counter() - t0}
    return trace


@dataclass
class TangentState:
    kappa_dot: float
    x_dot: np.ndarray
    arclength_step: float = 0.0

    @property
    def vector(self):
        return np.concatenate([[self.kappa_dot], self.x_dot])


def _augmented(gamma, kappa, x):
    return np.column_stack([gamma.jac_kappa(kappa, x), gamma.jac_x(kappa, x)])


def pam_tangent(gamma, point, prev=None, ds=0.0, dim=None):
    """Unit null vector of ``[Gamma_k | Gamma_x]`` at ``point = (kappa, x)``.

    Oriented along ``prev`` when given, otherwise with ``kappa_dot > 0``.
    """
    kappa, x = point
    x = np.array(x, dtype=float, ndmin=1)
    gamma = as_evaluator(gamma, dim or x.size)
    M = _augmented(gamma, kappa, x)
    _, s, vt = np.linalg.svd(M)
    n = M.shape[0]
    if s[n - 1] <= 1e-12 * max(1.0, s[0]):
        raise IrregularPointError("augmented Jacobian is rank deficient")
    t = vt[-1]
    if prev is not None:
        if t @ prev.vector < 0:
            t = -t
    elif t[0] < 0:
        t = -t
    return TangentState(float(t[0]), t[1:].copy(), ds)


def _close_on(gamma, kappa_end, p_a, p_b, config):
    """Interpolate between two path points onto ``kappa = kappa_end`` and correct."""
    (ka, xa), (kb, xb) = p_a, p_b
    w = 0.0 if kb == ka else (kappa_end - ka) / (kb - ka)
    guess = xa + w * (xb - xa)
    return _correct(gamma, kappa_end, guess, config)


def pam_track(gamma, x_start, ds=None, config=None, dim=None, ds_max=None,
              max_steps=200_000, growth=1.5, max_halvings=3):
    """Pseudo-arclength continuation.

    Each step predicts ``ds`` along the tangent and corrects on the bordered
    system ``[Gamma; t . (y - y_i) - ds]``.  ``ds`` is halved on corrector
    failure (at most ``max_halvings`` times in a row) and grows by
    ``growth`` after quick corrections along a nearly straight stretch, up
    to ``ds_max``; it shrinks back toward ``ds`` where the tangent turns.
    """
    config = config or TrackerConfig()
    x_start = np.array(x_start, dtype=float, ndmin=1)
    gamma = as_evaluator(gamma, dim or x_start.size)
    ds0 = config.dkappa_default if ds is None else ds
    ds_max = 100.0 * ds0 if ds_max is None else ds_max
    trace = PathTrace()
    t0 = time.perf_counter()
    x = _start(gamma, x_start, config)
    trace.add_point(0.0, x)
    kappa = 0.0
    y = np.concatenate([[kappa], x])
    try:
        tan = pam_tangent(gamma, (kappa, x), ds=ds0)
    except IrregularPointError:
        trace.outcome = "corrector_failure"
        return trace
    step = ds0
    fails = halvings = 0
    left_start = False
    for _ in range(max_steps):
        tv = tan.vector
        yi = y

        def H(z):
            return np.concatenate([gamma(z[0], z[1:]), [tv @ (z - yi) - step]])

        def HJ(z):
            return np.vstack([_augmented(gamma, z[0], z[1:]), tv])

        try:
            y_new, iters = newton_solve(H, HJ, yi + step * tv, tol_f=config.tol_f,
                                        tol_x=config.tol_x,
                                        max_iters=config.max_corrector_iters,
                                        full_output=True)
            tan_new = pam_tangent(gamma, (y_new[0], y_new[1:]), prev=tan, ds=step)
        except (*_CORRECTOR_ERRORS, IrregularPointError):
            fails += 1
            if fails > max_halvings:
                trace.add_event("limit_point_detected", y[0], y[1:])
                trace.outcome = "limit_point_stall"
                break
            step /= 2.0
            halvings += 1
            trace.add_event("step_halved", y[0], y[1:], {"ds": step})
            continue
        fails = 0
        prev_pt = (y[0], y[1:])
        y, tan = y_new, tan_new
        kappa, x = y[0], y[1:]
        if kappa > 0.0:
            left_start = True
        if kappa >= 1.0:
            try:
                x1 = _close_on(gamma, 1.0, prev_pt, (kappa, x), config)
            except _CORRECTOR_ERRORS:
                trace.add_point(kappa, x)
                trace.outcome = "corrector_failure"
                break
            trace.add_point(1.0, x1)
            trace.add_event("converged", 1.0, x1)
            trace.outcome = "success"
            break
        if kappa <= 0.0 and left_start:
            try:
                x0 = _close_on(gamma, 0.0, prev_pt, (kappa, x), config)
            except _CORRECTOR_ERRORS:
                x0 = x
            trace.add_point(0.0, x0)
            trace.outcome = "returned_to_start"
            break
        trace.add_point(kappa, x, payload={"ds": step})
        if _inf(x) > config.growth_threshold:
            trace.add_event("threshold_crossed", kappa, x)
            trace.outcome = "diverged"
            break
        # grow only on straight stretches so folds are resolved at the base step
        if iters <= 3 and tan.vector @ tv > 0.999:
            step = min(step * growth, ds_max)
        elif tan.vector @ tv < 0.99:
            step = max(step / growth, ds0)
    else:
        trace.outcome = "aborted"
    trace.stats = {"accepted": len(trace.points), "halvings": halvings,
                   "switches": 0, "wall_time": time.perf_counter() - t0}
    return trace


LADDER_FLOOR = 4  # T_h / 2**4 = T_h / 16


def two_layer_track(h, config=None, switcher=None, x_start=None):
    """Two-layer TFC continuation.

    The first layer is discrete continuation on ``Gamma(k, x, W_j)``.  The
    second layer runs ``switcher`` to obtain ``(W_{j+1}, x_{0,j+1})`` when
    the corrector fails ``max_consecutive_fails`` times in a row (limit
    point) or when an accepted point leaves the ``growth_threshold`` box.
    A runaway path that recurs after a growth switch, or a failed growth
    switch, restarts the search from the latest recorded point below
    ``T_h/2``, then ``T_h/4``, down to ``T_h/16``.
    """
    from .switching import default_switcher

    config = config or TrackerConfig()
    switcher = switcher or default_switcher
    trace = PathTrace()
    t0 = time.perf_counter()
    n = h.dim
    j = 0
    omega = np.zeros((n, h.basis.m))
    omegas = [omega]
    trace.omegas = omegas
    x_base = h.auxiliary.base_point if x_start is None else x_start
    try:
        x = _start(h, x_base, config, omega)
    except _CORRECTOR_ERRORS:
        trace.outcome = "corrector_failure"
        return trace
    trace.add_point(0.0, x, segment=0)
    kappa_old, dk, fails = 0.0, config.dkappa_default, 0
    halvings = 0
    ladder = 0          # current level of the growth-retry ladder
    growth_armed = False  # a growth switch happened and kappa = 1 not yet reached
    Th = config.growth_threshold

    def finish(outcome):
        trace.outcome = outcome
        trace.stats = {"accepted": len(trace.points), "halvings": halvings,
                       "switches": j, "wall_time": time.perf_counter() - t0}
        return trace

    def do_switch(kappa_s, x_guess, omega_guess, reason):
        res = switcher(h, kappa_s, x_guess, omega_guess, config)
        payload = {"reason": reason, "j": j + 1, "status": res.status,
                   "J": res.objective_value, "det": res.det_at_start,
                   "constraint_norm": res.constraint_norm,
                   "omega": np.asarray(res.omega), "x0": np.asarray(res.x0)}
        if res.converged:
            trace.add_event("switch_solved", kappa_s, res.x0, payload)
            return res
        trace.add_event("switch_failed", kappa_s, x_guess, payload)
        return None

    def ladder_seed(level):
        bound = Th / 2**level
        for i in range(len(trace.points) - 1, -1, -1):
            k, xp = trace.points[i]
            if _inf(xp) < bound and k < 1.0:
                return k, xp, omegas[trace.segments[i]]
        return None

    def growth_recovery(kappa_s, x_s, omega_s):
        """Run growth switches down the ladder; return the adopted result."""
        nonlocal ladder
        while True:
            if j >= config.max_switches:
                return "max_switches_exceeded"
            if ladder == 0:
                seed = (kappa_s, x_s, omega_s)
            else:
                if ladder > LADDER_FLOOR:
                    return "aborted"
                seed = ladder_seed(ladder)
                if seed is None:
                    return "aborted"
                trace.add_event("ladder_retry", seed[0], seed[1],
                                {"level": ladder, "bound": Th / 2**ladder})
            res = do_switch(seed[0], seed[1], seed[2], "growth")
            if res is not None:
                return seed[0], res
            ladder += 1

    while kappa_old < 1.0:
        kappa = min(kappa_old + dk, 1.0)
        try:
            x_new = _correct(h, kappa, x, config, omega)
        except _CORRECTOR_ERRORS:
            fails += 1
            if fails < config.max_consecutive_fails:
                dk /= 2.0
                halvings += 1
                trace.add_event("step_halved", kappa_old, x, {"dkappa": dk})
                continue
            trace.add_event("limit_point_detected", kappa_old, x,
                            {"failed_kappa": kappa, "j": j})
            if j >= config.max_switches:
                return finish("max_switches_exceeded")
            res = do_switch(kappa_old, x, omega, "limit_point")
            if res is None:
                if growth_armed:
                    # a failed switch on a post-growth path continues the ladder
                    ladder += 1
                    out = growth_recovery(None, None, None)
                    if isinstance(out, str):
                        trace.add_event("aborted", kappa_old, x)
                        return finish(out)
                    kappa_old, res = out
                else:
                    trace.add_event("aborted", kappa_old, x)
                    return finish("aborted")
            j += 1
            omega = np.array(res.omega)
            omegas.append(omega)
            x = np.array(res.x0)
            trace.add_point(kappa_old, x, segment=j)
            dk, fails = min(1.0 - kappa_old, config.dkappa_default), 0
            continue

        x, fails = x_new, 0
        trace.add_point(kappa, x, segment=j)
        if _inf(x) > Th:
            trace.add_event("threshold_crossed", kappa, x, {"j": j})
            if growth_armed:
                ladder += 1
            growth_armed = True
            out = growth_recovery(kappa, x, omega)
            if isinstance(out, str):
                trace.add_event("aborted", kappa, x)
                return finish(out)
            kappa_s, res = out
            j += 1
            omega = np.array(res.omega)
            omegas.append(omega)
            x = np.array(res.x0)
            kappa_old = kappa_s
            trace.add_point(kappa_old, x, segment=j)
            dk = min(1.0 - kappa_old, config.dkappa_default)
            continue
        kappa_old = kappa
        dk = min(1.0 - kappa, config.dkappa_default)

    trace.add_event("converged", 1.0, x, {"j": j})
    return finish("success")
