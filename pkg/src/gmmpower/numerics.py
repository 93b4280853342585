"""Dense SPD linear algebra and the two unconstrained minimizers.

BFGS (with a strong-Wolfe line search) is the primary minimizer; Nelder-Mead
is the derivative-free alternate kept for cross-checking estimates.  Both
restart from the current iterate with a fresh state when progress stalls,
up to ``MinimizerOptions.restarts`` times.

Matrices are plain ``numpy.ndarray`` objects.  SPD systems are always solved
through a Cholesky factorization (never explicit inverses built any other
way); a failed pivot raises ``SingularMatrixError`` carrying its index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidParameterError, NumericFailureError, SingularMatrixError

Vector = np.ndarray
Matrix = np.ndarray


@dataclass(frozen=True)
class MinimizerOptions:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    objective_tolerance: float = 1e-12
    restarts: int = 2

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be positive")
        for name in ("gradient_tolerance", "step_tolerance", "objective_tolerance"):
            if getattr(self, name) <= 0.0:
                raise InvalidParameterError(f"{name} must be > 0")
        if self.restarts < 0:
            raise InvalidParameterError("restarts must be non-negative")


@dataclass
class MinimizeResult:
    argmin: Vector
    objective_value: float
    gradient_norm: float
    iterations: int
    converged: bool
    method: str  # "bfgs" or "nelder-mead"


# ---------------------------------------------------------------------------
# SPD solves
# ---------------------------------------------------------------------------


def cholesky_spd(a: Matrix) -> Matrix:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises ``SingularMatrixError`` with the failing pivot index when the
    matrix is not numerically positive definite.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise InvalidParameterError(f"matrix must be square, got shape {a.shape}")
    scale = np.max(np.abs(a)) if n else 0.0
    if not np.allclose(a, a.T, atol=1e-10 * max(scale, 1.0)):
        raise InvalidParameterError("matrix is not symmetric within 1e-10 relative")
    lower = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not np.isfinite(d) or d <= 0.0:
            raise SingularMatrixError(
                f"matrix is not positive definite (pivot {j})", pivot=j
            )
        lower[j, j] = math.sqrt(d)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def _solve_lower(lower: Matrix, b: Matrix) -> Matrix:
    z = np.array(b, dtype=float)
    for j in range(lower.shape[0]):
        z[j] = (z[j] - lower[j, :j] @ z[:j]) / lower[j, j]
    return z


def _solve_upper(upper_t: Matrix, b: Matrix) -> Matrix:
    # upper_t is the lower factor; we solve L'x = b by back substitution
    n = upper_t.shape[0]
    x = np.array(b, dtype=float)
    for j in range(n - 1, -1, -1):
        x[j] = (x[j] - upper_t[j + 1 :, j] @ x[j + 1 :]) / upper_t[j, j]
    return x


def solve_spd(a: Matrix, b: Matrix) -> Matrix:
    """Solve A X = B for symmetric positive definite A via Cholesky."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise InvalidParameterError(
            f"dimension mismatch: A is {a.shape}, B has leading dimension {b.shape[0]}"
        )
    lower = cholesky_spd(a)
    return _solve_upper(lower, _solve_lower(lower, b))


def spd_inverse(a: Matrix) -> Matrix:
    """Inverse of an SPD matrix, computed as a Cholesky solve against I."""
    return solve_spd(a, np.eye(a.shape[0]))


def quadratic_form(v: Vector, a: Matrix) -> float:
    """v' A v for symmetric A."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape != (v.shape[0], v.shape[0]):
        raise InvalidParameterError(
            f"dimension mismatch: v has length {v.shape[0]}, A is {a.shape}"
        )
    return float(v @ a @ v)


# ---------------------------------------------------------------------------
# BFGS with strong Wolfe line search
# ---------------------------------------------------------------------------

_WOLFE_C1 = 1e-4
_WOLFE_C2 = 0.9


def _line_search_wolfe(f, grad, x, direction, f0, g0, max_steps=30):
    """Strong Wolfe line search (bracket then zoom, bisection refinement).

    The sufficient-decrease test is widened by the objective's float
    resolution (approximate Wolfe in the sense of Hager-Zhang): near a
    minimizer the predicted decrease drops below what f can represent, and
    steps are then accepted on the curvature condition alone.

    Returns (alpha, f_new, g_new) or None when no acceptable step exists.
    """
    d0 = float(g0 @ direction)
    if d0 >= 0.0:
        return None
    noise = 1e-12 * (1.0 + abs(f0))

    def phi(alpha):
        fx = f(x + alpha * direction)
        if not np.isfinite(fx):
            raise NumericFailureError("objective became non-finite during line search", x)
        return fx

    def dphi(alpha):
        gx = grad(x + alpha * direction)
        if not np.all(np.isfinite(gx)):
            raise NumericFailureError("gradient became non-finite during line search", x)
        return gx, float(gx @ direction)

    def armijo(a, fa):
        return fa <= f0 + _WOLFE_C1 * a * d0 + noise

    def zoom(alo, ahi, flo):
        for _ in range(60):
            a = 0.5 * (alo + ahi)
            fa = phi(a)
            if not armijo(a, fa) or fa >= flo:
                ahi = a
            else:
                ga, da = dphi(a)
                if abs(da) <= -_WOLFE_C2 * d0:
                    return a, fa, ga
                if da * (ahi - alo) >= 0.0:
                    ahi = alo
                alo, flo = a, fa
            if abs(ahi - alo) <= 1e-18 * max(1.0, abs(alo)):
                break
        if alo > 0.0:
            ga, _ = dphi(alo)
            return alo, phi(alo), ga
        return None

    a_prev, f_prev = 0.0, f0
    a = 1.0
    for i in range(max_steps):
        fa = phi(a)
        if not armijo(a, fa) or (i > 0 and fa >= f_prev):
            return zoom(a_prev, a, f_prev)
        ga, da = dphi(a)
        if abs(da) <= -_WOLFE_C2 * d0:
            return a, fa, ga
        if da >= 0.0:
            return zoom(a, a_prev, fa)
        a_prev, f_prev = a, fa
        a *= 2.0
    return None


def minimize_bfgs(
    objective: Callable[[Vector], float],
    gradient: Callable[[Vector], Vector],
    x0: Vector,
    opts: MinimizerOptions | None = None,
) -> MinimizeResult:
    """Minimize a smooth function by BFGS.

    Convergence means the gradient 2-norm fell below
    ``opts.gradient_tolerance``.  On stalls (line-search failure, step below
    ``step_tolerance`` or objective change below ``objective_tolerance``) the
    Hessian approximation is reset to the identity and the search restarts
    from the current iterate, up to ``opts.restarts`` times.
    """
    opts = opts or MinimizerOptions()
    x = np.asarray(x0, dtype=float).copy()
    fx = float(objective(x))
    if not np.isfinite(fx):
        raise NumericFailureError("objective is not finite at the starting point", x)
    g = np.asarray(gradient(x), dtype=float)
    if not np.all(np.isfinite(g)):
        raise NumericFailureError("gradient is not finite at the starting point", x)

    dim = x.size
    identity = np.eye(dim)
    h = identity.copy()
    fresh_hessian = True  # rescale H on the first update after each (re)start
    iterations = 0
    restarts_used = 0
    converged = False

    while iterations < opts.max_iterations:
        if float(np.linalg.norm(g)) <= opts.gradient_tolerance:
            converged = True
            break
        direction = -(h @ g)
        if float(direction @ g) >= 0.0:
            h = identity.copy()
            fresh_hessian = True
            direction = -g
        step = _line_search_wolfe(objective, gradient, x, direction, fx, g)
        iterations += 1
        if step is None:
            if restarts_used < opts.restarts and not fresh_hessian:
                h = identity.copy()
                fresh_hessian = True
                restarts_used += 1
                continue
            break
        alpha, f_new, g_new = step
        s = alpha * direction
        y = g_new - g
        no_progress = (
            float(np.linalg.norm(s)) < opts.step_tolerance
            and abs(fx - f_new) <= opts.objective_tolerance * (1.0 + abs(fx))
        )
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            if fresh_hessian:
                h = (sy / float(y @ y)) * identity  # initial curvature scaling
                fresh_hessian = False
            rho = 1.0 / sy
            v = identity - rho * np.outer(s, y)
            h = v @ h @ v.T + rho * np.outer(s, s)
        x = x + s
        fx = f_new
        g = g_new
        if no_progress:
            if float(np.linalg.norm(g)) <= opts.gradient_tolerance:
                converged = True
                break
            if restarts_used < opts.restarts:
                h = identity.copy()
                fresh_hessian = True
                restarts_used += 1
                continue
            break
    else:
        converged = float(np.linalg.norm(g)) <= opts.gradient_tolerance

    return MinimizeResult(
        argmin=x,
        objective_value=fx,
        gradient_norm=float(np.linalg.norm(g)),
        iterations=iterations,
        converged=converged,
        method="bfgs",
    )


# ---------------------------------------------------------------------------
# Nelder-Mead simplex
# ---------------------------------------------------------------------------

_NM_REFLECT = 1.0
_NM_EXPAND = 2.0
_NM_CONTRACT = 0.5
_NM_SHRINK = 0.5
# per-coordinate initial simplex edge: max(0.05 * |x0_j|, 0.00025)
_NM_REL_EDGE = 0.05
_NM_ABS_EDGE = 0.00025


def _initial_simplex(x0: Vector) -> np.ndarray:
    dim = x0.size
    simplex = np.tile(x0, (dim + 1, 1))
    for j in range(dim):
        simplex[j + 1, j] += max(_NM_REL_EDGE * abs(x0[j]), _NM_ABS_EDGE)
    return simplex


def _simplex_diameter(simplex: np.ndarray) -> float:
    return float(np.max(np.abs(simplex[1:] - simplex[0])))


def minimize_nelder_mead(
    objective: Callable[[Vector], float],
    x0: Vector,
    opts: MinimizerOptions | None = None,
) -> MinimizeResult:
    """Minimize a function without derivatives by the Nelder-Mead simplex.

    Standard reflection/expansion/contraction/shrink coefficients
    (1, 2, 0.5, 0.5).  Convergence means the simplex diameter fell below
    ``opts.step_tolerance``; an objective spread below
    ``opts.objective_tolerance`` without a small diameter triggers a restart
    with a fresh simplex around the incumbent best point.
    """
    opts = opts or MinimizerOptions()
    x0 = np.asarray(x0, dtype=float)

    def safe_f(p):
        v = float(objective(p))
        if not np.isfinite(v):
            raise NumericFailureError("objective became non-finite", p)
        return v

    if not np.isfinite(objective(x0)):
        raise NumericFailureError("objective is not finite at the starting point", x0)

    simplex = _initial_simplex(x0)
    values = np.array([safe_f(p) for p in simplex])
    iterations = 0
    restarts_used = 0
    converged = False

    while iterations < opts.max_iterations:
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]
        diameter = _simplex_diameter(simplex)
        if diameter <= opts.step_tolerance:
            converged = True
            break
        spread = values[-1] - values[0]
        if spread <= opts.objective_tolerance * (1.0 + abs(values[0])):
            if restarts_used < opts.restarts:
                simplex = _initial_simplex(simplex[0])
                values = np.array([safe_f(p) for p in simplex])
                restarts_used += 1
                iterations += 1
                continue
            break
        iterations += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        reflected = centroid + _NM_REFLECT * (centroid - worst)
        f_reflected = safe_f(reflected)
        if f_reflected < values[0]:
            expanded = centroid + _NM_EXPAND * (centroid - worst)
            f_expanded = safe_f(expanded)
            if f_expanded < f_reflected:
                simplex[-1], values[-1] = expanded, f_expanded
            else:
                simplex[-1], values[-1] = reflected, f_reflected
            continue
        if f_reflected < values[-2]:
            simplex[-1], values[-1] = reflected, f_reflected
            continue
        if f_reflected < values[-1]:
            contracted = centroid + _NM_CONTRACT * (reflected - centroid)
        else:
            contracted = centroid - _NM_CONTRACT * (centroid - worst)
        f_contracted = safe_f(contracted)
        if f_contracted < min(f_reflected, values[-1]):
            simplex[-1], values[-1] = contracted, f_contracted
            continue
        # shrink toward the best vertex
        simplex[1:] = simplex[0] + _NM_SHRINK * (simplex[1:] - simplex[0])
        values[1:] = [safe_f(p) for p in simplex[1:]]

    best = int(np.argmin(values))
    return MinimizeResult(
        argmin=simplex[best].copy(),
        objective_value=float(values[best]),
        gradient_norm=float("nan"),
        iterations=iterations,
        converged=converged,
        method="nelder-mead",
    )


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def finite_diff_gradient(
    objective: Callable[[Vector], float],
    x: Vector,
    h: float | np.ndarray | None = None,
) -> Vector:
    """Central-difference gradient; default step 1e-6 * (1 + |x_j|) per axis."""
    x = np.asarray(x, dtype=float)
    if h is None:
        steps = 1e-6 * (1.0 + np.abs(x))
    else:
        steps = np.broadcast_to(np.asarray(h, dtype=float), x.shape).copy()
        if np.any(steps <= 0.0):
            raise InvalidParameterError("finite difference step must be > 0")
    grad = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = steps[j]
        hi = float(objective(x + e))
        lo = float(objective(x - e))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericFailureError("objective non-finite in finite differencing", x)
        grad[j] = (hi - lo) / (2.0 * steps[j])
    return grad
