"""Damped least-squares solvers for the axis and coefficient estimates.

Two small dense solvers, both operating on a residual callback
``r(x) -> ndarray (m,)`` and minimizing ``sum(r**2)``:

- :func:`gauss_newton`: fresh finite-difference Jacobian each iteration,
  step-halving line search. Used where the residual is cheap and
  well-behaved (hinge axes, joint positions).
- :func:`secant_lm`: Levenberg-Marquardt with a Broyden rank-one secant
  Jacobian, periodically refreshed by finite differences. Used where the
  residual is only defined through other estimates (3-DoF axes, reference
  frame fusion coefficients) and exact derivatives are awkward.

Accepted-step costs are non-increasing for both solvers; rejected trial
points never move the iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteResidual, SingularSystem


@dataclass
class SolverOptions:
    max_iter: int = 60
    damping_init: float = 1e-3
    tol_step: float = 1e-9
    tol_grad: float = 1e-9
    finite_diff_h: float = 1e-6
    refresh_every: int = 10  # full Jacobian refresh period for secant_lm

    def __post_init__(self):
        for name in ("max_iter", "damping_init", "tol_step", "tol_grad",
                     "finite_diff_h", "refresh_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SolverOptions.{name} must be positive")


@dataclass
class SolverResult:
    x: np.ndarray
    converged: bool
    cost_history: list[float] = field(default_factory=list)
    n_iter: int = 0
    jacobian: np.ndarray | None = None


def _eval(residual_fn, x, where: str) -> np.ndarray:
    r = np.atleast_1d(np.asarray(residual_fn(x), dtype=float))
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual(f"residual is non-finite at {where}: x={x}")
    return r


def fd_jacobian(residual_fn, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian of the residual vector."""
    x = np.asarray(x, dtype=float)
    r0 = _eval(residual_fn, x, "finite-difference base point")
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        jac[:, i] = (_eval(residual_fn, x + step, "fd+") -
                     _eval(residual_fn, x - step, "fd-")) / (2.0 * h)
    return jac


def gauss_newton(residual_fn, x0, opts: SolverOptions | None = None) -> SolverResult:
    """Gauss-Newton with step-halving line search."""
    opts = opts or SolverOptions()
    x = np.asarray(x0, dtype=float).copy()
    r = _eval(residual_fn, x, "initial point")
    cost = float(r @ r)
    history = [cost]

    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        jac = fd_jacobian(residual_fn, x, opts.finite_diff_h)
        grad = jac.T @ r
        if np.linalg.norm(grad, np.inf) < opts.tol_grad:
            converged = True
            break
        delta, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        if not np.all(np.isfinite(delta)):
            raise SingularSystem("Gauss-Newton step is non-finite")

        # halve until the trial cost actually drops
        alpha = 1.0
        accepted = False
        for _ in range(30):
            x_try = x + alpha * delta
            r_try = _eval(residual_fn, x_try, "trial point")
            cost_try = float(r_try @ r_try)
            if cost_try < cost:
                x, r, cost = x_try, r_try, cost_try
                history.append(cost)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = np.linalg.norm(grad, np.inf) < max(opts.tol_grad, 1e-8 * (1 + cost))
            break
        if np.linalg.norm(alpha * delta) < opts.tol_step * (np.linalg.norm(x) + opts.tol_step):
            converged = True
            break

    return SolverResult(x=x, converged=converged, cost_history=history, n_iter=it)


def secant_lm(residual_fn, x0, opts: SolverOptions | None = None) -> SolverResult:
    """Secant Levenberg-Marquardt (Broyden updates, damped normal equations).

    Damping is multiplied by 10 on a rejected step and divided by 3 on an
    accepted one; the Jacobian approximation is rebuilt from central
    differences every ``opts.refresh_every`` iterations.
    """
    opts = opts or SolverOptions()
    x = np.asarray(x0, dtype=float).copy()
    r = _eval(residual_fn, x, "initial point")
    cost = float(r @ r)
    history = [cost]

    jac = fd_jacobian(residual_fn, x, opts.finite_diff_h)
    mu = opts.damping_init
    n = x.size
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        if it % opts.refresh_every == 0:
            jac = fd_jacobian(residual_fn, x, opts.finite_diff_h)
        grad = jac.T @ r
        if np.linalg.norm(grad, np.inf) < opts.tol_grad:
            converged = True
            break
        a = jac.T @ jac + mu * np.eye(n)
        try:
            delta = np.linalg.solve(a, -grad)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("damped normal equations are singular") from exc
        if not np.all(np.isfinite(delta)):
            raise SingularSystem("secant L-M step is non-finite")

        step_norm = float(np.linalg.norm(delta))
        if step_norm < opts.tol_step * (np.linalg.norm(x) + opts.tol_step):
            converged = True
            break

        x_try = x + delta
        r_try = _eval(residual_fn, x_try, "trial point")
        cost_try = float(r_try @ r_try)
        if cost_try < cost:
            # Broyden rank-one update keeps the secant condition J delta = dr
            jac = jac + np.outer(r_try - r - jac @ delta, delta) / (step_norm ** 2)
            x, r, cost = x_try, r_try, cost_try
            history.append(cost)
            mu /= 3.0
        else:
            mu *= 10.0
            if mu > 1e12:
                break

    return SolverResult(x=x, converged=converged, cost_history=history,
                        n_iter=it, jacobian=jac)
