"""Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems."""

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int


def _add(x, step):
    return x + step


def levenberg_marquardt(fun, jac, x0, retract=_add, max_iter=500, rtol=1e-12, lam0=1e-3):
    """Minimise ``0.5 * |fun(x)|**2``.

    ``retract(x, step)`` applies an update, which lets callers use local
    parameterisations (e.g. rotation increments). Stops when an accepted step
    lowers the cost by less than ``rtol`` relative, when no damping yields a
    decrease (the cost sits at a floating-point floor), or raises
    :class:`NoConvergence` after ``max_iter`` iterations.
    """
    x = np.array(x0, dtype=np.float64)
    r = fun(x)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise NoConvergence("residual is not finite at the initial point")
    lam = lam0
    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return LMResult(x, 0.0, it - 1)
        J = jac(x)
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                x_new = retract(x, step)
                r_new = fun(x_new)
                cost_new = float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    break
            lam *= 4.0
            if lam > 1e16:
                return LMResult(x, cost, it)
        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 3.0, 1e-15)
        if decrease <= rtol * (cost + decrease):
            return LMResult(x, cost, it)
    raise NoConvergence(f"no convergence after {max_iter} iterations (cost {cost:.6g})")
