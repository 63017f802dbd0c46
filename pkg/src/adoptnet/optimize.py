"""Quasi-Newton maximizer used by all likelihood fits.

BFGS with an Armijo backtracking line search, started from zeros (or a
caller-supplied warm start), inf-norm gradient tolerance 1e-6, at most 500
iterations. The line search only ever accepts an ascent step, so objective
values are non-decreasing across iterations; warm-started M-steps therefore
can never lower the objective they start from, which is what makes the EM
trajectory provably monotone.

Maximization convention throughout: ``fg`` returns (loglik, gradient) and we
move uphill.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GTOL = 1e-6
MAX_ITER = 500


class ConvergenceError(RuntimeError):
    """Optimizer failed to converge. Carries the best iterate found."""

    def __init__(self, message: str, result: "OptResult"):
        super().__init__(message)
        self.result = result


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    grad_norm: float
    converged: bool
    n_iter: int
    message: str
    h_inv: np.ndarray | None = None


def maximize(
    fg,
    x0: np.ndarray,
    gtol: float = GTOL,
    max_iter: int = MAX_ITER,
    armijo_c1: float = 1e-4,
    max_backtracks: int = 60,
    h0: np.ndarray | None = None,
) -> OptResult:
    """Maximize ``fg(x) -> (value, gradient)`` by BFGS from ``x0``.

    Convergence is declared when the gradient inf-norm drops below ``gtol``.
    Stalling (no acceptable ascent step even at tiny step sizes) also stops
    the loop; the caller inspects ``converged`` and decides whether a stall
    at a numerically flat point is acceptable.

    ``h0`` seeds the inverse-Hessian approximation; callers re-solving a
    slowly drifting objective (EM M-steps) pass the previous call's
    ``h_inv`` back in so the first direction is already Newton-like.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    f, g = fg(x)
    f, g = float(f), np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.isfinite(g).all():
        raise ValueError("objective or gradient not finite at the start point")
    h_inv = np.eye(n) if h0 is None else np.asarray(h0, dtype=float).copy()

    for it in range(max_iter):
        gnorm = float(np.max(np.abs(g))) if n else 0.0
        if gnorm < gtol:
            return OptResult(x, f, g, gnorm, True, it, "gradient tolerance reached", h_inv)

        d = h_inv @ g
        slope = float(g @ d)
        if slope <= 0:
            # curvature update went bad; fall back to steepest ascent
            h_inv = np.eye(n)
            d = g.copy()
            slope = float(g @ g)
            if slope == 0.0:
                return OptResult(x, f, g, gnorm, True, it, "zero gradient", h_inv)

        step = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * d
            f_new, g_new = fg(x_new)
            f_new = float(f_new)
            if np.isfinite(f_new) and f_new >= f + armijo_c1 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            gnorm = float(np.max(np.abs(g)))
            return OptResult(
                x, f, g, gnorm, False, it,
                "line search stalled (no ascent step found)", h_inv,
            )

        g_new = np.asarray(g_new, dtype=float)
        s = x_new - x
        yk = g - g_new  # note: maximizing, so the usual y flips sign
        sy = float(s @ yk)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(yk)) and sy > 0:
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(s, yk)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new

    gnorm = float(np.max(np.abs(g)))
    if gnorm < gtol:
        return OptResult(x, f, g, gnorm, True, max_iter,
                         "gradient tolerance reached", h_inv)
    return OptResult(
        x, f, g, gnorm, False, max_iter,
        f"no convergence in {max_iter} iterations", h_inv,
    )


def central_difference_gradient(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function; the reference used by
    gradient tests."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        out[i] = (fn(x + e) - fn(x - e)) / (2 * eps)
    return out
