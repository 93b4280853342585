"""Wald and distance-metric tests, noncentrality parameters, and power curves.

Noncentrality conventions: the quadratic-form limit theory can be written
with the shift parameter delta = mu'A mu ("standard", matching the usual
noncentral chi-square parameterisation) or delta/2 ("half", the convention
of some linear-model texts).  Published power tables for this methodology
are consistent with the standard convention, which is the default here;
"half" stays available for sensitivity work.  Both are exposed everywhere a
noncentrality is produced, and reports record which one was used.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .distributions import ChiSqParams, chisq_quantile, power_from_ncp
from .errors import (
    EstimationFailureError,
    InvalidHypothesisError,
    InvalidParameterError,
    ProtocolError,
    SingularMatrixError,
)
from .gmm_estimator import GmmFit
from .numerics import solve_spd


class Convention(enum.Enum):
    STANDARD = "standard"
    HALF = "half"


def _as_convention(value) -> Convention:
    if isinstance(value, Convention):
        return value
    try:
        return Convention(value)
    except ValueError:
        raise InvalidParameterError(
            f"convention must be 'standard' or 'half', got {value!r}"
        ) from None


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    critical_value: float
    alpha: float
    reject: bool
    kind: str  # "wald" | "dm"


def _restriction(h, h0):
    h = np.atleast_2d(np.asarray(h, dtype=float))
    h0 = np.atleast_1d(np.asarray(h0, dtype=float))
    if h.shape[0] != h0.shape[0]:
        raise InvalidHypothesisError(
            f"H has {h.shape[0]} rows but h0 has length {h0.shape[0]}"
        )
    return h, h0


def wald_statistic(
    fit_unres: GmmFit, h, h0, n: int, alpha: float = 0.05
) -> TestResult:
    """Wald statistic n r' [H V H']^{-1} r with r = H beta_hat - h0."""
    h, h0 = _restriction(h, h0)
    if fit_unres.restricted:
        raise ProtocolError("wald_statistic requires the unrestricted fit")
    r = h @ fit_unres.beta_hat - h0
    middle = h @ fit_unres.V_hat @ h.T
    middle = 0.5 * (middle + middle.T)
    try:
        stat = float(n * (r @ solve_spd(middle, r)))
    except SingularMatrixError as exc:
        raise InvalidHypothesisError(
            f"H V H' is singular at pivot {exc.pivot}"
        ) from exc
    s = h.shape[0]
    crit = chisq_quantile(s, 1.0 - alpha)
    return TestResult(
        statistic=stat, df=s, critical_value=crit, alpha=alpha,
        reject=stat >= crit, kind="wald",
    )


def dm_statistic(
    fit_res: GmmFit,
    fit_unres: GmmFit,
    n: int,
    alpha: float = 0.05,
    *,
    allow_mismatched_weighting: bool = False,
) -> TestResult:
    """Distance-metric statistic n [Q(beta_tilde) - Q(beta_hat)].

    Both fits must have minimized the same weighted quadratic form (same S);
    under that protocol the statistic is non-negative by minimizer ordering
    and tiny negative round-off (within -1e-10) is clamped to zero.  Pass
    ``allow_mismatched_weighting=True`` only for the own-weighting
    sensitivity variant, whose statistic has no sign guarantee.
    """
    if not fit_res.restricted or fit_unres.restricted:
        raise ProtocolError("dm_statistic takes (restricted, unrestricted) fits")
    same_s = fit_res.S_hat.shape == fit_unres.S_hat.shape and np.array_equal(
        fit_res.S_hat, fit_unres.S_hat
    )
    if not same_s and not allow_mismatched_weighting:
        raise ProtocolError(
            "restricted and unrestricted fits used different weighting matrices"
        )
    stat = float(n * (fit_res.Q_value - fit_unres.Q_value))
    if same_s:
        if stat < -1e-10:
            raise EstimationFailureError(
                f"distance-metric statistic is {stat:.3e} < 0 under a shared "
                "weighting: one of the fits did not reach its minimum"
            )
        if stat < 0.0:
            stat = 0.0
    s = fit_res.diagnostics.get("restriction_df")
    if s is None:
        raise ProtocolError("restricted fit carries no restriction_df diagnostic")
    crit = chisq_quantile(s, 1.0 - alpha)
    return TestResult(
        statistic=stat, df=s, critical_value=crit, alpha=alpha,
        reject=stat >= crit, kind="dm",
    )


def noncentrality_general(
    beta0,
    h,
    h0,
    g0,
    s0,
    n: int,
    convention: Convention | str = Convention.STANDARD,
) -> float:
    """Noncentrality of the Wald/DM limit under a fixed alternative.

    delta = n (H beta0 - h0)' [H (G0' S0^{-1} G0)^{-1} H']^{-1} (H beta0 - h0),
    returned as-is under the standard convention, halved under "half".
    """
    convention = _as_convention(convention)
    h, h0 = _restriction(h, h0)
    beta0 = np.asarray(beta0, dtype=float)
    g0 = np.asarray(g0, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    if n < 1:
        raise InvalidParameterError(f"n must be positive, got {n}")
    gsg = g0.T @ solve_spd(s0, g0)
    gsg = 0.5 * (gsg + gsg.T)
    v0 = solve_spd(gsg, np.eye(gsg.shape[0]))
    middle = h @ v0 @ h.T
    middle = 0.5 * (middle + middle.T)
    r = h @ beta0 - h0
    try:
        delta = float(n * (r @ solve_spd(middle, r)))
    except SingularMatrixError as exc:
        raise InvalidHypothesisError(f"H V0 H' is singular at pivot {exc.pivot}") from exc
    return delta / 2.0 if convention is Convention.HALF else delta


def noncentrality_scalar(
    n: int, beta_alt: float, beta_null: float, sigma2: float
) -> float:
    """Scalar-restriction noncentrality n (beta_alt - beta_null)^2 / sigma2.

    ``sigma2`` is the asymptotic variance of sqrt(n) beta_hat_j, i.e. the
    j-th diagonal entry of V.
    """
    if not (sigma2 > 0.0):
        raise InvalidParameterError(f"sigma2 must be positive, got {sigma2}")
    if n < 1:
        raise InvalidParameterError(f"n must be positive, got {n}")
    return float(n) * (float(beta_alt) - float(beta_null)) ** 2 / float(sigma2)


def theoretical_power(df: int, ncp: float, alpha: float) -> float:
    """P(chi2_df(ncp) >= chi2 critical value at level alpha)."""
    return power_from_ncp(ChiSqParams(df=df, ncp=ncp, alpha=alpha))


# ---------------------------------------------------------------------------
# Power curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarEffect:
    """Scalar-coefficient effect: difference delta and asymptotic variance."""

    delta: float
    sigma2: float


@dataclass(frozen=True)
class MatrixEffect:
    """General effect: full parameter vector plus population G0, S0."""

    beta0: np.ndarray
    H: np.ndarray
    h0: np.ndarray
    G0: np.ndarray
    S0: np.ndarray


@dataclass(frozen=True)
class PowerRow:
    n: int
    ncp: float
    power: float
    convention: str


@dataclass
class PowerReport:
    rows: list[PowerRow]
    convention: str

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("n,ncp,power,convention\n")
            for row in self.rows:
                fh.write(f"{row.n},{row.ncp!r},{row.power!r},{row.convention}\n")


def power_curve(
    effect: ScalarEffect | MatrixEffect,
    grid,
    alpha: float = 0.05,
    df: int | None = None,
    convention: Convention | str | None = Convention.STANDARD,
) -> PowerReport:
    """Theoretical power over a grid of sample sizes.

    ``convention=None`` emits rows for both conventions.  For a scalar
    effect df defaults to 1; for a matrix effect it is rank(H).
    """
    grid = [int(v) for v in grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidParameterError("grid must be non-empty and strictly increasing")
    conventions = (
        [Convention.STANDARD, Convention.HALF]
        if convention is None
        else [_as_convention(convention)]
    )
    rows = []
    for conv in conventions:
        for n in grid:
            if isinstance(effect, ScalarEffect):
                s = df or 1
                ncp = noncentrality_scalar(n, effect.delta, 0.0, effect.sigma2)
                if conv is Convention.HALF:
                    ncp /= 2.0
            else:
                s = df or np.atleast_2d(effect.H).shape[0]
                ncp = noncentrality_general(
                    effect.beta0, effect.H, effect.h0, effect.G0, effect.S0, n, conv
                )
            rows.append(
                PowerRow(
                    n=n,
                    ncp=ncp,
                    power=theoretical_power(s, ncp, alpha),
                    convention=conv.value,
                )
            )
    label = conventions[0].value if len(conventions) == 1 else "both"
    return PowerReport(rows=rows, convention=label)
