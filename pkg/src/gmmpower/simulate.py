"""Synthetic longitudinal generators, the Monte Carlo runner, and QQ data.

Two data-generating processes are implemented, one per time-dependent
covariate class:

* ``type2`` - the covariate follows its own AR(1) and feeds the outcome:
      y_it = g0 + g1 x_it + g2 x_{i,t-1} + b_i + e_it,
      x_it = rho x_{i,t-1} + eps_it,
  with b_i ~ N(0, sigma_b2), e ~ N(0, sigma_e2), eps ~ N(0, sigma_eps2)
  mutually independent and x_i0 drawn from the stationary law
  N(0, sigma_eps2 / (1 - rho^2)).

* ``type3`` - outcome feedback drives the covariate:
      y_it = beta x_it + kappa y_{i,t-1} + u_it,
      x_it = gamma y_{i,t-1} + v_it,
  whose reduced outcome recursion y_t = (beta gamma + kappa) y_{t-1} +
  beta v_t + u_t is stationary when |beta gamma + kappa| < 1; y_i0 is drawn
  from N(0, (beta^2 sigma_v2 + sigma_u2) / (1 - (beta gamma + kappa)^2)).

Each replication derives its own stream from (master_seed, stream_id), so
reports are bit-identical at any worker count.  Null variants (tested
effect generated as zero) use a disjoint stream-id block.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import RngStream, make_stream, noncentral_chisq_quantile
from .errors import (
    EstimationFailureError,
    GmmPowerError,
    InvalidParameterError,
    NonstationaryParameterError,
)
from .gmm_estimator import GmmFit, fit_restricted, fit_unrestricted
from .inference import (
    Convention,
    dm_statistic,
    noncentrality_general,
    theoretical_power,
    wald_statistic,
)
from .moments import build_moment_system
from .panel_model import (
    OUTCOME,
    CovariateType,
    Hypothesis,
    ModelSpec,
    PanelData,
    covariate,
    intercept,
    lagged,
)

#: Fixed master seed of the population-moment oracle dataset.
ORACLE_SEED = 190_462_023

#: Subjects in the oracle dataset.
ORACLE_SIZE = 200_000

#: Stream-id block separating null-variant replications from alternatives.
_NULL_STREAM_BLOCK = 1 << 32

#: Abort threshold for per-replication estimation failures.
_MAX_FAILURE_FRACTION = 0.20


class Setting(enum.Enum):
    TYPE2 = "type2"
    TYPE3 = "type3"


def _as_setting(value) -> Setting:
    if isinstance(value, Setting):
        return value
    try:
        return Setting(value)
    except ValueError:
        raise InvalidParameterError(
            f"setting must be 'type2' or 'type3', got {value!r}"
        ) from None


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Type2Params:
    gamma0: float = 0.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    rho: float = 0.5
    sigma_b2: float = 4.0
    sigma_e2: float = 1.0
    sigma_eps2: float = 1.0


@dataclass(frozen=True)
class Type3Params:
    beta: float = 0.5
    kappa: float = 0.3
    gamma: float = 0.5
    sigma_u2: float = 1.0
    sigma_v2: float = 1.0


def generate_type2(
    n: int, t_max: int, params: Type2Params | None = None, stream: RngStream | None = None
) -> PanelData:
    """Simulate the autoregressive-covariate process (x tagged Type II).

    Draw order: x_i0, then eps (n x T), b, e; x and y built recursively.
    """
    params = params or Type2Params()
    if abs(params.rho) >= 1.0:
        raise NonstationaryParameterError(
            f"|rho| must be < 1 for a stationary covariate, got {params.rho}"
        )
    if stream is None:
        stream = make_stream(0, 0)
    gen = stream.generator
    x0 = gen.normal(0.0, np.sqrt(params.sigma_eps2 / (1.0 - params.rho**2)), n)
    eps = gen.normal(0.0, np.sqrt(params.sigma_eps2), (n, t_max))
    b = gen.normal(0.0, np.sqrt(params.sigma_b2), n)
    e = gen.normal(0.0, np.sqrt(params.sigma_e2), (n, t_max))
    x = np.empty((n, t_max))
    prev = x0
    for t in range(t_max):
        x[:, t] = params.rho * prev + eps[:, t]
        prev = x[:, t]
    x_lag = np.column_stack([x0, x[:, :-1]])
    y = params.gamma0 + params.gamma1 * x + params.gamma2 * x_lag + b[:, None] + e
    return PanelData(outcome=y, covariates={"x": x}, pre_sample={"x": x0})


def generate_type3(
    n: int, t_max: int, params: Type3Params | None = None, stream: RngStream | None = None
) -> PanelData:
    """Simulate the outcome-feedback process (x tagged Type III).

    Draw order: y_i0, then u (n x T), v (n x T); x and y built recursively.
    """
    params = params or Type3Params()
    a = params.beta * params.gamma + params.kappa
    if abs(a) >= 1.0:
        raise NonstationaryParameterError(
            f"|beta*gamma + kappa| must be < 1 for stationarity, got {a}"
        )
    if stream is None:
        stream = make_stream(0, 0)
    gen = stream.generator
    var_y = (params.beta**2 * params.sigma_v2 + params.sigma_u2) / (1.0 - a**2)
    y0 = gen.normal(0.0, np.sqrt(var_y), n)
    u = gen.normal(0.0, np.sqrt(params.sigma_u2), (n, t_max))
    v = gen.normal(0.0, np.sqrt(params.sigma_v2), (n, t_max))
    x = np.empty((n, t_max))
    y = np.empty((n, t_max))
    prev = y0
    for t in range(t_max):
        x[:, t] = params.gamma * prev + v[:, t]
        y[:, t] = params.beta * x[:, t] + params.kappa * prev + u[:, t]
        prev = y[:, t]
    return PanelData(outcome=y, covariates={"x": x}, pre_sample={OUTCOME: y0})


# ---------------------------------------------------------------------------
# Fitted model per setting
# ---------------------------------------------------------------------------


def type2_model_spec() -> ModelSpec:
    """Mean model {1, x_t, x_{t-1}}, x Type II; tests the x_t coefficient."""
    return ModelSpec(
        regressors=[intercept(), covariate("x"), lagged("x", 1)],
        covariate_types={"x": CovariateType.TYPE_II},
        hypothesis=Hypothesis(H=np.array([[0.0, 1.0, 0.0]]), h0=np.array([0.0])),
    )


def type3_model_spec() -> ModelSpec:
    """Mean model {x_t, y_{t-1}}, x Type III; tests the x_t coefficient."""
    return ModelSpec(
        regressors=[covariate("x"), lagged(OUTCOME, 1)],
        covariate_types={"x": CovariateType.TYPE_III},
        hypothesis=Hypothesis(H=np.array([[1.0, 0.0]]), h0=np.array([0.0])),
    )


def _true_beta(setting: Setting) -> np.ndarray:
    if setting is Setting.TYPE2:
        d = Type2Params()
        return np.array([d.gamma0, d.gamma1, d.gamma2])
    d = Type3Params()
    return np.array([d.beta, d.kappa])


def _generate(setting: Setting, n: int, t_max: int, null_variant: bool, stream: RngStream):
    if setting is Setting.TYPE2:
        params = Type2Params(gamma1=0.0) if null_variant else Type2Params()
        return generate_type2(n, t_max, params, stream)
    params = Type3Params(beta=0.0) if null_variant else Type3Params()
    return generate_type3(n, t_max, params, stream)


# ---------------------------------------------------------------------------
# Population oracle for theoretical power
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PopulationOracle:
    setting: Setting
    beta_true: np.ndarray
    G0: np.ndarray
    S0: np.ndarray
    H: np.ndarray
    h0: np.ndarray


_oracle_cache: dict[tuple[Setting, int, int, int], PopulationOracle] = {}


def population_oracle(
    setting, n_oracle: int = ORACLE_SIZE, t_max: int = 3, seed: int = ORACLE_SEED
) -> PopulationOracle:
    """Population-level G0, S0 from one large dataset at the true parameters.

    A dedicated fixed seed keeps the oracle independent of every simulation
    stream; results are cached per (setting, size, T, seed).
    """
    setting = _as_setting(setting)
    key = (setting, n_oracle, t_max, seed)
    if key not in _oracle_cache:
        stream = make_stream(seed, 0 if setting is Setting.TYPE2 else 1)
        data = _generate(setting, n_oracle, t_max, False, stream)
        spec = type2_model_spec() if setting is Setting.TYPE2 else type3_model_spec()
        ms = build_moment_system(data, spec)
        beta_true = _true_beta(setting)
        from .moments import jacobian, weight_target

        _oracle_cache[key] = PopulationOracle(
            setting=setting,
            beta_true=beta_true,
            G0=jacobian(ms),
            S0=weight_target(ms, beta_true),
            H=spec.hypothesis.H,
            h0=spec.hypothesis.h0,
        )
    return _oracle_cache[key]


def oracle_noncentrality(
    setting,
    n: int,
    convention: Convention | str = Convention.STANDARD,
    t_max: int = 3,
) -> float:
    """Noncentrality at sample size n from the population oracle."""
    orc = population_oracle(setting, t_max=t_max)
    return noncentrality_general(
        orc.beta_true, orc.H, orc.h0, orc.G0, orc.S0, n, convention
    )


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    setting: Setting | str = Setting.TYPE2
    n: int = 100
    T: int = 3
    replications: int = 500
    null_variant: bool = False
    optimizer: str = "bfgs"  # "bfgs" | "nelder-mead"
    alpha: float = 0.05
    master_seed: int = 20_250_809
    dm_weighting: str = "shared"  # "shared" | "own"
    convention: str = "standard"
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "setting", _as_setting(self.setting))
        if self.n < 1:
            raise InvalidParameterError(f"n must be positive, got {self.n}")
        if self.T < 2:
            raise InvalidParameterError("T must be >= 2 (lagged terms required)")
        if self.replications < 1:
            raise InvalidParameterError("replications must be >= 1")
        if self.optimizer not in ("bfgs", "nelder-mead"):
            raise InvalidParameterError(f"unknown optimizer {self.optimizer!r}")
        if not (0.0 < self.alpha < 1.0):
            raise InvalidParameterError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.dm_weighting not in ("shared", "own"):
            raise InvalidParameterError(
                f"dm_weighting must be 'shared' or 'own', got {self.dm_weighting!r}"
            )
        if self.convention not in ("standard", "half"):
            raise InvalidParameterError(
                f"convention must be 'standard' or 'half', got {self.convention!r}"
            )
        if self.threads < 1:
            raise InvalidParameterError("threads must be >= 1")


@dataclass(frozen=True)
class ReplicationRecord:
    replication: int
    wald: float
    dm: float
    wald_reject: bool
    dm_reject: bool
    converged: bool
    message: str = ""


@dataclass
class SimReport:
    config: SimConfig
    wald_rejection: float
    dm_rejection: float
    theoretical_power: float
    theoretical_size: float
    ncp: float
    convention: str
    failed_replications: int
    records: list[ReplicationRecord] = field(repr=False, default_factory=list)


def _replication(config: SimConfig, rep: int) -> ReplicationRecord:
    stream_id = rep + (_NULL_STREAM_BLOCK if config.null_variant else 0)
    stream = make_stream(config.master_seed, stream_id)
    try:
        data = _generate(config.setting, config.n, config.T, config.null_variant, stream)
        spec = (
            type2_model_spec() if config.setting is Setting.TYPE2 else type3_model_spec()
        )
        ms = build_moment_system(data, spec)
        hyp = spec.hypothesis
        fit_u = fit_unrestricted(ms, method=config.optimizer)
        wald = wald_statistic(fit_u, hyp.H, hyp.h0, config.n, config.alpha)
        if config.dm_weighting == "shared":
            fit_r = fit_restricted(
                ms, hyp.H, hyp.h0, fit_u.beta_hat,
                weighting=fit_u.S_hat, method=config.optimizer,
            )
            dm = dm_statistic(fit_r, fit_u, config.n, config.alpha)
        else:
            fit_r = fit_restricted(
                ms, hyp.H, hyp.h0, fit_u.beta_hat,
                weighting="own", method=config.optimizer,
            )
            dm = dm_statistic(
                fit_r, fit_u, config.n, config.alpha, allow_mismatched_weighting=True
            )
        return ReplicationRecord(
            replication=rep,
            wald=wald.statistic,
            dm=dm.statistic,
            wald_reject=wald.reject,
            dm_reject=dm.reject,
            converged=True,
        )
    except GmmPowerError as exc:
        return ReplicationRecord(
            replication=rep,
            wald=float("nan"),
            dm=float("nan"),
            wald_reject=False,
            dm_reject=False,
            converged=False,
            message=str(exc),
        )


def run_experiment(config: SimConfig) -> SimReport:
    """Run all replications and aggregate rejection rates.

    Rates are computed over converged replications only; more than 20%
    failures aborts with ``EstimationFailureError``.  Results are
    deterministic for a given config at any thread count.
    """
    reps = range(config.replications)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            records = list(pool.map(lambda r: _replication(config, r), reps))
    else:
        records = [_replication(config, r) for r in reps]
    records.sort(key=lambda rec: rec.replication)

    failed = sum(1 for rec in records if not rec.converged)
    if failed > _MAX_FAILURE_FRACTION * config.replications:
        raise EstimationFailureError(
            f"{failed}/{config.replications} replications failed to converge",
            diagnostics=[rec.message for rec in records if not rec.converged][:10],
        )
    ok = [rec for rec in records if rec.converged]
    n_ok = max(len(ok), 1)
    ncp = 0.0 if config.null_variant else oracle_noncentrality(
        config.setting, config.n, config.convention, t_max=config.T
    )
    return SimReport(
        config=config,
        wald_rejection=sum(rec.wald_reject for rec in ok) / n_ok,
        dm_rejection=sum(rec.dm_reject for rec in ok) / n_ok,
        theoretical_power=theoretical_power(1, ncp, config.alpha),
        theoretical_size=config.alpha,
        ncp=ncp,
        convention=str(Convention(config.convention).value),
        failed_replications=failed,
        records=records,
    )


# ---------------------------------------------------------------------------
# QQ diagnostics
# ---------------------------------------------------------------------------


def qq_points(statistics, df: int, ncp: float) -> np.ndarray:
    """Sorted statistics paired with noncentral chi-square quantiles.

    Returns an (m, 2) array of (theoretical_quantile, empirical_quantile)
    at plotting positions (i - 0.5)/m; quantiles are found by bisection on
    the mixture CDF to 1e-8.
    """
    stats = np.sort(np.asarray(statistics, dtype=float))
    m = stats.shape[0]
    if m < 10:
        raise InvalidParameterError(f"need at least 10 statistics, got {m}")
    probs = (np.arange(1, m + 1) - 0.5) / m
    theo = noncentral_chisq_quantile(df, ncp, probs)
    return np.column_stack([theo, stats])
