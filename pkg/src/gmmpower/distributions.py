"""Sampling streams and chi-square distribution functions.

The noncentral chi-square CDF is evaluated as a Poisson-weighted mixture of
central chi-square CDFs,

    P(X <= x) = sum_k  pois(k; ncp/2) * P(chi2_{df + 2k} <= x),

with the summation started at the modal Poisson index and expanded outward
until the uncovered tail weight drops below 1e-12.  This is accurate and
fast for the noncentrality range that power calculations need (ncp up to a
few thousand).

All CDF/quantile functions are pure; ``RngStream`` is single-owner and must
not be shared across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaincinv

from .errors import InvalidParameterError

#: Residual Poisson tail weight at which the mixture series is truncated.
_TAIL_WEIGHT = 1e-12


# ---------------------------------------------------------------------------
# Reproducible streams
# ---------------------------------------------------------------------------


@dataclass
class RngStream:
    """A reproducible random stream identified by (master_seed, stream_id).

    Identical identifiers produce identical variate sequences on every
    platform and under any parallel schedule; distinct ``stream_id`` values
    derived from one master seed are statistically independent.
    """

    master_seed: int
    stream_id: int
    generator: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        if self.generator is None:
            seq = np.random.SeedSequence((self.master_seed, self.stream_id))
            self.generator = np.random.Generator(np.random.PCG64(seq))


def make_stream(master_seed: int, stream_id: int) -> RngStream:
    """Derive the stream for one replication (or other work item)."""
    return RngStream(master_seed=master_seed, stream_id=stream_id)


def normal_sample(stream: RngStream, mean: float, sd: float) -> float:
    """Draw one N(mean, sd^2) variate, advancing the stream state.

    sd = 0 returns ``mean`` exactly (degenerate distribution).
    """
    if not (sd >= 0.0):
        raise InvalidParameterError(f"sd must be non-negative, got {sd}")
    if sd == 0.0:
        return float(mean)
    return float(stream.generator.normal(mean, sd))


# ---------------------------------------------------------------------------
# Chi-square family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChiSqParams:
    """Degrees of freedom, noncentrality and test level for a power query.

    ``ncp`` uses the standard noncentral chi-square parameterisation
    (delta = mu'A mu for a quadratic form in normals); callers working on
    the halved convention must convert before constructing this.
    """

    df: int
    ncp: float
    alpha: float

    def __post_init__(self):
        if int(self.df) != self.df or self.df < 1:
            raise InvalidParameterError(f"df must be a positive integer, got {self.df}")
        if not (self.ncp >= 0.0):
            raise InvalidParameterError(f"ncp must be non-negative, got {self.ncp}")
        if not (0.0 < self.alpha < 1.0):
            raise InvalidParameterError(f"alpha must lie in (0,1), got {self.alpha}")


def _check_df(df: int) -> int:
    if int(df) != df or df < 1:
        raise InvalidParameterError(f"df must be a positive integer, got {df}")
    return int(df)


def chisq_cdf(df: int, x) -> float | np.ndarray:
    """Central chi-square CDF P(chi2_df <= x); vectorised over ``x``."""
    df = _check_df(df)
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0.0, gammainc(df / 2.0, np.maximum(x, 0.0) / 2.0), 0.0)
    return float(out) if out.ndim == 0 else out


def chisq_quantile(df: int, p: float) -> float:
    """Central chi-square quantile: x with P(chi2_df <= x) = p."""
    df = _check_df(df)
    if not (0.0 < p < 1.0):
        raise InvalidParameterError(f"p must lie in (0,1), got {p}")
    return float(2.0 * gammaincinv(df / 2.0, p))


def _poisson_weights(half_ncp: float):
    """Poisson(half_ncp) weights covering all but _TAIL_WEIGHT probability.

    Expansion starts at the mode so the series stays in range even for
    large noncentralities where e^{-half_ncp} would underflow.
    """
    k0 = int(half_ncp)
    log_w0 = -half_ncp + k0 * math.log(half_ncp) - math.lgamma(k0 + 1.0)
    ks = [k0]
    ws = [math.exp(log_w0)]
    covered = ws[0]
    lo, hi = k0, k0
    w_lo, w_hi = ws[0], ws[0]
    while covered < 1.0 - _TAIL_WEIGHT:
        # grow on whichever side has the larger next weight
        next_hi = w_hi * half_ncp / (hi + 1.0)
        next_lo = w_lo * lo / half_ncp if lo > 0 else -1.0
        if next_hi >= next_lo:
            hi += 1
            w_hi = next_hi
            ks.append(hi)
            ws.append(w_hi)
        else:
            lo -= 1
            w_lo = next_lo
            ks.append(lo)
            ws.append(w_lo)
        covered += ws[-1]
        if len(ks) > 200_000:  # unreachable for sane ncp; guards infinite loop
            break
    return np.asarray(ks), np.asarray(ws)


def noncentral_chisq_cdf(df: int, ncp: float, x) -> float | np.ndarray:
    """Noncentral chi-square CDF P(chi2_df(ncp) <= x); vectorised over ``x``.

    ``ncp`` is the standard noncentrality parameter.
    """
    df = _check_df(df)
    if not (ncp >= 0.0):
        raise InvalidParameterError(f"ncp must be non-negative, got {ncp}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError("x must be finite")
    if ncp == 0.0:
        return chisq_cdf(df, x)
    xs = np.atleast_1d(x)
    out = np.zeros_like(xs)
    pos = xs > 0.0
    if np.any(pos):
        ks, ws = _poisson_weights(ncp / 2.0)
        # (K, m) grid of central CDFs at df + 2k
        grid = gammainc(df / 2.0 + ks[:, None], xs[None, pos] / 2.0)
        out[pos] = ws @ grid
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def noncentral_chisq_quantile(
    df: int, ncp: float, p, tol: float = 1e-8
) -> float | np.ndarray:
    """Quantile(s) of chi2_df(ncp) by bisection on the mixture CDF.

    Vectorised over ``p``: all requested probabilities are bisected in
    lockstep against shared Poisson weights, which keeps QQ grids cheap.
    """
    df = _check_df(df)
    p = np.asarray(p, dtype=float)
    ps = np.atleast_1d(p)
    if np.any((ps <= 0.0) | (ps >= 1.0)):
        raise InvalidParameterError("quantile probabilities must lie in (0,1)")
    if ncp == 0.0:
        out = 2.0 * gammaincinv(df / 2.0, ps)
        return float(out[0]) if p.ndim == 0 else out.reshape(p.shape)
    ks, ws = _poisson_weights(ncp / 2.0)

    def cdf(xs):
        grid = gammainc(df / 2.0 + ks[:, None], np.maximum(xs, 0.0)[None, :] / 2.0)
        return ws @ grid

    lo = np.zeros_like(ps)
    hi0 = df + ncp + 10.0 * math.sqrt(2.0 * df + 4.0 * ncp) + 10.0
    hi = np.full_like(ps, hi0)
    while np.any(cdf(hi) < ps.max()):
        hi *= 2.0
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < ps
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    return float(out[0]) if p.ndim == 0 else out.reshape(p.shape)


def power_from_ncp(params: ChiSqParams) -> float:
    """Rejection probability P(chi2_df(ncp) >= chi-square critical value).

    The critical value is the (1 - alpha) central chi-square quantile, so a
    zero noncentrality returns alpha exactly (test size under the null).
    """
    crit = chisq_quantile(params.df, 1.0 - params.alpha)
    return float(1.0 - noncentral_chisq_cdf(params.df, params.ncp, crit))
