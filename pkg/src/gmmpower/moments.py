"""Moment conditions for panel GMM with time-dependent covariates.

Each moment pairs a regressor derivative at time s with a residual at time
t: for the identity link the entry for (j, s, t) is x_is[j] * u_it.  The
set of admissible (s, t) pairs depends on the covariate class of the
regressor's underlying series:

    time-independent, Type I : all T^2 pairs
    Type II  (depends on own past)        : s >= t
    Type III (depends on past outcomes)   : s == t
    lagged outcome (predetermined)        : t >= s

All pair rules live in this module so an alternative convention is a
one-line change.  Sample means are accumulated in a canonical (sorted)
order, which makes ``sample_moments`` exactly invariant under subject
permutation and bit-stable under any threading of the caller.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMomentsError, SpecificationError
from .panel_model import (
    OUTCOME,
    CovariateType,
    ModelSpec,
    PanelData,
    Regressor,
    design_matrix,
)

#: Condition number beyond which the weighting target is ridge-regularized.
_CONDITION_LIMIT = 1e12
_RIDGE_SCALE = 1e-8


def _order_stable_sum(arr: np.ndarray) -> np.ndarray:
    """Column sums accumulated in sorted order: permutation invariant."""
    return np.sum(np.sort(arr, axis=0), axis=0)


def valid_pairs(ctype: CovariateType, t_max: int) -> list[tuple[int, int]]:
    """Admissible (s, t) pairs, 1-based, for a covariate of the given class."""
    if t_max < 1:
        raise SpecificationError("T must be >= 1")
    times = range(1, t_max + 1)
    if ctype in (CovariateType.TIME_INDEPENDENT, CovariateType.TYPE_I):
        return [(s, t) for s in times for t in times]
    if ctype is CovariateType.TYPE_II:
        return [(s, t) for s in times for t in times if s >= t]
    if ctype is CovariateType.TYPE_III:
        return [(s, s) for s in times]
    raise SpecificationError(f"unknown covariate type {ctype}")


def lagged_outcome_pairs(t_max: int) -> list[tuple[int, int]]:
    """Pairs for a predetermined lagged-outcome regressor: residual at or
    after the derivative time (t >= s)."""
    times = range(1, t_max + 1)
    return [(s, t) for s in times for t in times if t >= s]


def _pairs_for_regressor(reg: Regressor, spec: ModelSpec, t_max: int):
    if reg.kind == "intercept":
        return valid_pairs(CovariateType.TIME_INDEPENDENT, t_max)
    if reg.kind == "lag" and reg.name == OUTCOME:
        return lagged_outcome_pairs(t_max)
    ctype = spec.covariate_types.get(reg.name)
    if ctype is None:
        raise SpecificationError(
            f"regressor {reg.label!r} has no covariate type tag for {reg.name!r}"
        )
    return valid_pairs(ctype, t_max)


@dataclass
class MomentSystem:
    """Compiled moment conditions for one (data, spec) pair.

    ``pairs`` lists (regressor index j, derivative time s, residual time t),
    1-based times, ordered by (j, s, t).  Internal arrays cache the design
    tensor and the affine structure of the sample moments under the identity
    link: mbar(beta) = c0 + G beta with G constant in beta.
    """

    data: PanelData
    spec: ModelSpec
    pairs: list[tuple[int, int, int]]
    design: np.ndarray = field(repr=False)  # (n, T, p)
    _deriv: np.ndarray = field(repr=False)  # (n, q): x_{i,s}[j] per pair
    _t_idx: np.ndarray = field(repr=False)  # (q,) 0-based residual times
    _c0: np.ndarray = field(repr=False)  # (q,)
    _jac: np.ndarray = field(repr=False)  # (q, p)

    @property
    def q(self) -> int:
        return len(self.pairs)

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def n(self) -> int:
        return self.data.n_subjects


def build_moment_system(data: PanelData, spec: ModelSpec) -> MomentSystem:
    """Enumerate valid pairs and precompute the affine moment structure."""
    t_max = data.n_times
    x = design_matrix(data, spec)
    pairs = []
    for j, reg in enumerate(spec.regressors):
        for s, t in _pairs_for_regressor(reg, spec, t_max):
            pairs.append((j, s, t))
    n = data.n_subjects
    j_idx = np.array([p[0] for p in pairs])
    s_idx = np.array([p[1] - 1 for p in pairs])
    t_idx = np.array([p[2] - 1 for p in pairs])
    deriv = x[:, s_idx, j_idx]  # (n, q)
    c0 = _order_stable_sum(deriv * data.outcome[:, t_idx]) / n
    # jacobian entry for pair k and coefficient c: -(1/n) sum_i deriv[i,k] x[i,t_k,c]
    jac = -_order_stable_sum(deriv[:, :, None] * x[:, t_idx, :]) / n
    return MomentSystem(
        data=data,
        spec=spec,
        pairs=pairs,
        design=x,
        _deriv=deriv,
        _t_idx=t_idx,
        _c0=c0,
        _jac=jac,
    )


def moment_matrix(ms: MomentSystem, beta: np.ndarray) -> np.ndarray:
    """Per-subject moment vectors m_i(beta), stacked as an (n, q) matrix."""
    beta = np.asarray(beta, dtype=float)
    resid = ms.data.outcome - ms.design @ beta
    return ms._deriv * resid[:, ms._t_idx]


def subject_moments(ms: MomentSystem, beta: np.ndarray, i: int) -> np.ndarray:
    """Moment vector m_i(beta) for one subject (0-based index)."""
    beta = np.asarray(beta, dtype=float)
    resid = ms.data.outcome[i] - ms.design[i] @ beta
    return ms._deriv[i] * resid[ms._t_idx]


def sample_moments(ms: MomentSystem, beta: np.ndarray) -> np.ndarray:
    """mbar_n(beta): average of subject moments (affine in beta)."""
    beta = np.asarray(beta, dtype=float)
    return ms._c0 + ms._jac @ beta


def jacobian(ms: MomentSystem, beta: np.ndarray | None = None) -> np.ndarray:
    """G_n = (1/n) sum_i d m_i / d beta; constant in beta for the identity link."""
    return ms._jac.copy()


@dataclass(frozen=True)
class WeightInfo:
    regularized: bool
    condition: float
    ridge: float


def weight_target(
    ms: MomentSystem, beta: np.ndarray, *, with_info: bool = False
) -> np.ndarray | tuple[np.ndarray, WeightInfo]:
    """Uncentered second-moment matrix S = (1/n) sum_i m_i m_i'.

    When the condition number exceeds 1e12 (or S is numerically singular, as
    happens whenever distinct pairs duplicate the same moment), a ridge
    eps * I with eps = 1e-8 * trace(S)/q is added and flagged.
    """
    if ms.n <= ms.q:
        warnings.warn(
            f"n={ms.n} <= q={ms.q}: weighting target is rank deficient",
            stacklevel=2,
        )
    m = moment_matrix(ms, beta)
    if not np.any(m):
        raise DegenerateMomentsError("all subject moments are zero")
    s = m.T @ m / ms.n
    s = 0.5 * (s + s.T)
    eigs = np.linalg.eigvalsh(s)
    smallest, largest = eigs[0], eigs[-1]
    condition = np.inf if smallest <= 0.0 else largest / smallest
    regularized = condition > _CONDITION_LIMIT
    ridge = 0.0
    if regularized:
        ridge = _RIDGE_SCALE * np.trace(s) / ms.q
        s = s + ridge * np.eye(ms.q)
    if with_info:
        return s, WeightInfo(regularized=regularized, condition=condition, ridge=ridge)
    return s
