"""Batch L-BFGS with a cubic-interpolating strong-Wolfe line search."""
from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class Termination(str, enum.Enum):
    GRADIENT = "gradient-tolerance"
    OBJECTIVE = "objective-tolerance"
    MAX_ITER = "max-iterations"
    LINE_SEARCH = "line-search-failure"


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 500
    grad_tol: float = 1e-6
    obj_rel_tol: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 40

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.grad_tol <= 0 or self.obj_rel_tol < 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class OptimizeResult:
    theta: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    evaluations: int
    reason: Termination
    initial_value: float


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return t if math.isfinite(t) else None


class _LineSearchFailure(Exception):
    pass


def _strong_wolfe(f, x, fx, gx, p, step0, c1, c2, max_evals):
    """Bracketing phase plus zoom; returns (step, f, g, n_evals)."""
    dg0 = float(gx @ p)
    evals = 0

    def phi(t):
        nonlocal evals
        evals += 1
        v, g = f(x + t * p)
        return float(v), g, float(g @ p)

    def zoom(lo, f_lo, g_lo, dg_lo, hi, f_hi, dg_hi):
        while evals < max_evals:
            t = _cubic_min(lo, f_lo, dg_lo, hi, f_hi, dg_hi)
            left, right = min(lo, hi), max(lo, hi)
            width = right - left
            # safeguard: keep the trial point inside the bracket interior
            if t is None or not (left + 0.1 * width <= t <= right - 0.1 * width):
                t = 0.5 * (lo + hi)
            if width <= 1e-16 * max(1.0, right):
                break
            ft, gt, dgt = phi(t)
            if not math.isfinite(ft) or ft > fx + c1 * t * dg0 or ft >= f_lo:
                hi, f_hi, dg_hi = t, ft if math.isfinite(ft) else math.inf, dgt
                if not math.isfinite(f_hi):
                    dg_hi = 0.0
            else:
                if abs(dgt) <= -c2 * dg0:
                    return t, ft, gt
                if dgt * (hi - lo) >= 0:
                    hi, f_hi, dg_hi = lo, f_lo, dg_lo
                lo, f_lo, g_lo, dg_lo = t, ft, gt, dgt
        if lo > 0 and f_lo < fx:
            return lo, f_lo, g_lo
        raise _LineSearchFailure

    t_prev, f_prev, g_prev, dg_prev = 0.0, fx, gx, dg0
    t = step0
    t_max = 1e10 * max(step0, 1.0)
    first = True
    while evals < max_evals:
        ft, gt, dgt = phi(t)
        if not math.isfinite(ft):
            # overshoot into overflow; shrink towards the last good point
            t = t_prev + 0.1 * (t - t_prev)
            continue
        if ft > fx + c1 * t * dg0 or (not first and ft >= f_prev):
            t, fz, gz = zoom(t_prev, f_prev, g_prev, dg_prev, t, ft, dgt)
            return t, fz, gz, evals
        if abs(dgt) <= -c2 * dg0:
            return t, ft, gt, evals
        if dgt >= 0:
            t, fz, gz = zoom(t, ft, gt, dgt, t_prev, f_prev, dg_prev)
            return t, fz, gz, evals
        t_prev, f_prev, g_prev, dg_prev = t, ft, gt, dgt
        t = min(2.0 * t, t_max)
        first = False
    if t_prev > 0 and f_prev < fx:
        return t_prev, f_prev, g_prev, evals
    raise _LineSearchFailure


def _two_loop(g: np.ndarray, history: deque) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def minimize(
    f: Objective,
    theta0,
    config: LbfgsConfig | None = None,
    trace: TextIO | None = None,
) -> OptimizeResult:
    """Minimize ``f`` from ``theta0``.

    ``f`` returns ``(value, gradient)``. A line-search failure is not an
    error: the best iterate so far is returned with that termination reason.
    If ``trace`` is given, one line per iteration is written to it:
    ``iter value |g|_inf step``.
    """
    cfg = config or LbfgsConfig()
    x = np.array(theta0, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(x)):
        raise ValueError("theta0 must be finite")
    fx, g = f(x)
    fx = float(fx)
    g = np.asarray(g, dtype=np.float64)
    if not math.isfinite(fx) or not np.all(np.isfinite(g)):
        raise ArithmeticError("objective is not finite at theta0")
    f0 = fx
    evals = 1
    history: deque = deque(maxlen=cfg.memory)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    reason = Termination.MAX_ITER
    it = 0
    if gnorm <= cfg.grad_tol:
        reason = Termination.GRADIENT
    else:
        while it < cfg.max_iterations:
            p = _two_loop(g, history)
            dg = float(g @ p)
            if not dg < 0:
                # not a descent direction: restart from steepest descent
                history.clear()
                p = -g
                dg = -float(g @ g)
            step0 = 1.0 if history else min(1.0, 1.0 / max(float(np.sum(np.abs(g))), 1e-300))
            try:
                step, f_new, g_new, n = _strong_wolfe(
                    f, x, fx, g, p, step0, cfg.c1, cfg.c2, cfg.max_ls_evals
                )
            except _LineSearchFailure:
                reason = Termination.LINE_SEARCH
                break
            evals += n
            it += 1
            s = step * p
            x_new = x + s
            g_new = np.asarray(g_new, dtype=np.float64)
            y = g_new - g
            sy = float(s @ y)
            if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
                history.append((s, y, 1.0 / sy))
            f_old = fx
            x, fx, g = x_new, float(f_new), g_new
            gnorm = float(np.max(np.abs(g)))
            if trace is not None:
                trace.write(f"{it} {fx:.12g} {gnorm:.6g} {step:.6g}\n")
            if gnorm <= cfg.grad_tol:
                reason = Termination.GRADIENT
                break
            if (f_old - fx) <= cfg.obj_rel_tol * max(abs(f_old), abs(fx), 1.0):
                reason = Termination.OBJECTIVE
                break
    log.debug("L-BFGS stopped after %d iterations: %s", it, reason.value)
    return OptimizeResult(
        theta=x,
        value=fx,
        grad_norm=gnorm,
        iterations=it,
        evaluations=evals,
        reason=reason,
        initial_value=f0,
    )
