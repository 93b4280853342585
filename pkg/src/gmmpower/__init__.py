"""GMM estimation and statistical power analysis for longitudinal models
with time-dependent covariates."""

from . import errors
from .distributions import (
    ChiSqParams,
    RngStream,
    chisq_cdf,
    chisq_quantile,
    make_stream,
    noncentral_chisq_cdf,
    noncentral_chisq_quantile,
    normal_sample,
    power_from_ncp,
)
from .gmm_estimator import (
    GmmFit,
    covariance,
    fit_restricted,
    fit_unrestricted,
    objective,
    objective_gradient,
)
from .inference import (
    Convention,
    MatrixEffect,
    PowerReport,
    ScalarEffect,
    TestResult,
    dm_statistic,
    noncentrality_general,
    noncentrality_scalar,
    power_curve,
    theoretical_power,
    wald_statistic,
)
from .moments import (
    MomentSystem,
    build_moment_system,
    jacobian,
    moment_matrix,
    sample_moments,
    subject_moments,
    valid_pairs,
    weight_target,
)
from .numerics import (
    MinimizeResult,
    MinimizerOptions,
    finite_diff_gradient,
    minimize_bfgs,
    minimize_nelder_mead,
    quadratic_form,
    solve_spd,
    spd_inverse,
)
from .panel_model import (
    OUTCOME,
    CovariateType,
    Hypothesis,
    Link,
    ModelSpec,
    PanelData,
    Regressor,
    covariate,
    design_matrix,
    design_row,
    intercept,
    lagged,
    marginal_mean,
    read_panel_csv,
    residuals,
    write_panel_csv,
)
from .simulate import (
    ORACLE_SEED,
    ORACLE_SIZE,
    PopulationOracle,
    ReplicationRecord,
    Setting,
    SimConfig,
    SimReport,
    Type2Params,
    Type3Params,
    generate_type2,
    generate_type3,
    oracle_noncentrality,
    population_oracle,
    qq_points,
    run_experiment,
    type2_model_spec,
    type3_model_spec,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
