"""Two-step GMM estimation: unrestricted, and restricted under H beta = h0.

Step 1 minimizes the moment quadratic form under an identity weighting;
step 2 re-minimizes under W = S^{-1} with S the uncentered second-moment
matrix of the step-1 subject moments.  By default the restricted fit reuses
the weighting from an unrestricted step-1 pass, so restricted and
unrestricted estimates minimize the same quadratic form (this is what makes
the distance-metric statistic non-negative by construction).  A sensitivity
variant (``weighting="own"``) lets the restricted fit run its own
constrained step-1 pass instead.

Restrictions are handled by null-space reparameterization: beta =
beta_part + N zeta with N an orthonormal basis of null(H), so the inner
problem stays unconstrained and the constraint holds to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EstimationFailureError,
    IdentificationError,
    InvalidHypothesisError,
    SingularMatrixError,
)
from .moments import MomentSystem, jacobian, moment_matrix, sample_moments, weight_target
from .numerics import (
    MinimizeResult,
    MinimizerOptions,
    minimize_bfgs,
    minimize_nelder_mead,
    spd_inverse,
)

#: G'WG condition number beyond which a diagnostic note is recorded.
_GSG_CONDITION_NOTE = 1e10

#: Iteration budget multiplier for the derivative-free alternate, which
#: needs far more iterations than BFGS to reach comparable accuracy.
_NM_BUDGET_FACTOR = 8


@dataclass
class GmmFit:
    """Result of one GMM estimation pass."""

    beta_hat: np.ndarray
    restricted: bool
    Q_value: float
    S_hat: np.ndarray
    W: np.ndarray = field(repr=False)
    G_hat: np.ndarray = field(repr=False)
    V_hat: np.ndarray
    optimizer: MinimizeResult
    step1_beta: np.ndarray
    s_regularized: bool = False
    diagnostics: dict = field(default_factory=dict)


def objective(ms: MomentSystem, beta: np.ndarray, w: np.ndarray) -> float:
    """GMM quadratic form Q(beta) = mbar(beta)' W mbar(beta)."""
    m = sample_moments(ms, beta)
    return float(m @ w @ m)


def objective_gradient(ms: MomentSystem, beta: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Analytic gradient 2 G' W mbar(beta)."""
    m = sample_moments(ms, beta)
    return 2.0 * (ms._jac.T @ (w @ m))


def _minimize(ms, w, x0, method, options, transform=None):
    """Minimize Q over beta, optionally through an affine reparameterization.

    ``transform`` maps the free coordinates z to beta = part + basis @ z.
    """
    if transform is None:
        f = lambda b: objective(ms, b, w)
        g = lambda b: objective_gradient(ms, b, w)
        to_beta = lambda z: z
    else:
        part, basis = transform
        to_beta = lambda z: part + basis @ z
        f = lambda z: objective(ms, to_beta(z), w)
        g = lambda z: basis.T @ objective_gradient(ms, to_beta(z), w)

    if method == "bfgs":
        res = minimize_bfgs(f, g, x0, options or MinimizerOptions())
    elif method == "nelder-mead":
        opts = options or MinimizerOptions(
            max_iterations=MinimizerOptions().max_iterations * _NM_BUDGET_FACTOR
        )
        res = minimize_nelder_mead(f, x0, opts)
    else:
        raise EstimationFailureError(f"unknown optimizer {method!r}")
    if not res.converged:
        raise EstimationFailureError(
            f"{method} failed to converge after {res.iterations} iterations "
            f"(gradient norm {res.gradient_norm:.3e})",
            diagnostics=res,
        )
    return to_beta(res.argmin), res


def _covariance_from(g_hat: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float]:
    gsg = g_hat.T @ w @ g_hat
    gsg = 0.5 * (gsg + gsg.T)
    try:
        v_hat = spd_inverse(gsg)
    except SingularMatrixError as exc:
        raise IdentificationError(
            f"G'S^-1G is singular at pivot {exc.pivot}: parameters not identified"
        ) from exc
    eigs = np.linalg.eigvalsh(gsg)
    condition = np.inf if eigs[0] <= 0 else eigs[-1] / eigs[0]
    return 0.5 * (v_hat + v_hat.T), condition


def fit_unrestricted(
    ms: MomentSystem,
    beta0: np.ndarray | None = None,
    *,
    method: str = "bfgs",
    options: MinimizerOptions | None = None,
) -> GmmFit:
    """Two-step GMM estimate of beta.

    Step 1 starts from ``beta0`` (defaults to zero); step 2 starts from the
    step-1 solution.  The returned fit carries S, W = S^{-1}, G and
    V = (G' S^{-1} G)^{-1}.
    """
    x0 = np.zeros(ms.p) if beta0 is None else np.asarray(beta0, dtype=float)
    beta1, _ = _minimize(ms, np.eye(ms.q), x0, method, options)
    s_hat, info = weight_target(ms, beta1, with_info=True)
    w = spd_inverse(s_hat)
    beta_hat, opt = _minimize(ms, w, beta1, method, options)
    g_hat = jacobian(ms)
    v_hat, condition = _covariance_from(g_hat, w)
    diagnostics = {"weighting_condition": info.condition}
    if condition > _GSG_CONDITION_NOTE:
        diagnostics["gsg_condition"] = condition
    return GmmFit(
        beta_hat=beta_hat,
        restricted=False,
        Q_value=objective(ms, beta_hat, w),
        S_hat=s_hat,
        W=w,
        G_hat=g_hat,
        V_hat=v_hat,
        optimizer=opt,
        step1_beta=beta1,
        s_regularized=info.regularized,
        diagnostics=diagnostics,
    )


def constraint_parameterization(h: np.ndarray, h0: np.ndarray):
    """Affine parameterization of {beta : H beta = h0}.

    Returns (beta_part, basis): a particular solution and an orthonormal
    basis of null(H) (possibly with zero columns when H is square).
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    h0 = np.atleast_1d(np.asarray(h0, dtype=float))
    s, p = h.shape
    if h0.shape != (s,):
        raise InvalidHypothesisError(f"h0 must have length {s}, got {h0.shape}")
    if s > p:
        raise InvalidHypothesisError(f"more restrictions ({s}) than parameters ({p})")
    u, sv, vt = np.linalg.svd(h)
    tol = max(s, p) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    if rank < s:
        raise InvalidHypothesisError(f"H has rank {rank} < {s}: restrictions are redundant")
    beta_part = vt[:s].T @ ((u.T @ h0) / sv)
    basis = vt[s:].T  # (p, p - s), orthonormal columns
    return beta_part, basis


def fit_restricted(
    ms: MomentSystem,
    h: np.ndarray,
    h0: np.ndarray,
    beta0: np.ndarray | None = None,
    *,
    weighting: np.ndarray | str | None = None,
    method: str = "bfgs",
    options: MinimizerOptions | None = None,
) -> GmmFit:
    """Two-step GMM estimate of beta subject to H beta = h0.

    ``weighting`` selects the step-1 weighting target:
      * an ndarray: reuse this S (the shared-weighting default protocol);
      * None: run a fresh *unrestricted* step-1 pass and use its S;
      * "own": run a *constrained* step-1 pass and use its S (sensitivity
        variant; statistics built from such a fit no longer share the
        unrestricted fit's quadratic form).
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    h0 = np.atleast_1d(np.asarray(h0, dtype=float))
    beta_part, basis = constraint_parameterization(h, h0)
    start = np.zeros(ms.p) if beta0 is None else np.asarray(beta0, dtype=float)
    free = basis.shape[1]

    def constrained_argmin(w, z0, opt_options):
        if free == 0:
            return beta_part.copy(), MinimizeResult(
                argmin=np.zeros(0),
                objective_value=objective(ms, beta_part, w),
                gradient_norm=0.0,
                iterations=0,
                converged=True,
                method=method,
            )
        return _minimize(ms, w, z0, method, opt_options, transform=(beta_part, basis))

    z_start = basis.T @ (start - beta_part) if free else np.zeros(0)

    if isinstance(weighting, str) and weighting == "own":
        beta1, _ = constrained_argmin(np.eye(ms.q), z_start, options)
        s_hat, info = weight_target(ms, beta1, with_info=True)
    elif weighting is None:
        beta1, _ = _minimize(ms, np.eye(ms.q), start, method, options)
        s_hat, info = weight_target(ms, beta1, with_info=True)
    else:
        s_hat = np.asarray(weighting, dtype=float)
        beta1 = start
        info = None
    w = spd_inverse(s_hat)
    z0 = basis.T @ (beta1 - beta_part) if free else np.zeros(0)
    beta_hat, opt = constrained_argmin(w, z0, options)

    violation = float(np.max(np.abs(h @ beta_hat - h0)))
    if violation > 1e-10:
        raise EstimationFailureError(
            f"restricted estimate violates the constraint by {violation:.3e}"
        )
    g_hat = jacobian(ms)
    v_hat, condition = _covariance_from(g_hat, w)
    diagnostics = {"constraint_violation": violation, "restriction_df": h.shape[0]}
    if info is not None:
        diagnostics["weighting_condition"] = info.condition
    if condition > _GSG_CONDITION_NOTE:
        diagnostics["gsg_condition"] = condition
    return GmmFit(
        beta_hat=beta_hat,
        restricted=True,
        Q_value=objective(ms, beta_hat, w),
        S_hat=s_hat,
        W=w,
        G_hat=g_hat,
        V_hat=v_hat,
        optimizer=opt,
        step1_beta=beta1,
        s_regularized=bool(info.regularized) if info is not None else False,
        diagnostics=diagnostics,
    )


def covariance(fit: GmmFit) -> np.ndarray:
    """Asymptotic covariance of sqrt(n) (beta_hat - beta): (G'S^-1G)^-1."""
    if not fit.optimizer.converged:
        raise EstimationFailureError("covariance requested from a non-converged fit")
    return fit.V_hat
