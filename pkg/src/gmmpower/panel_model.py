"""Longitudinal panel data and the marginal mean model.

A panel is balanced: every subject is observed at times 1..T, with optional
pre-sample (time 0) values supplying lagged terms at t = 1.  The marginal
mean is mu_it = g^{-1}(x_it' beta); only the identity link is implemented
(the link is an enum so the seam stays explicit).

The on-disk format is long CSV with header ``subject,time,<covariate...>,y``;
rows with ``time=0`` carry pre-sample values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecificationError

#: Column name of the outcome, both in CSV files and in lagged-outcome terms.
OUTCOME = "y"


class Link(enum.Enum):
    IDENTITY = "identity"


class CovariateType(enum.Enum):
    """Dependence class of a time-dependent covariate.

    TYPE_I covariates are independent of prior covariate values and prior
    outcomes; TYPE_II may depend on their own past; TYPE_III may depend on
    past outcomes (feedback).  The class determines which moment pairs are
    valid (see :mod:`gmmpower.moments`).
    """

    TIME_INDEPENDENT = "time-independent"
    TYPE_I = "I"
    TYPE_II = "II"
    TYPE_III = "III"


# ---------------------------------------------------------------------------
# Regressor terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Regressor:
    """One term of the mean model: intercept, covariate, or lagged series."""

    kind: str  # "intercept" | "covariate" | "lag"
    name: str = ""
    lag: int = 0

    def __post_init__(self):
        if self.kind not in ("intercept", "covariate", "lag"):
            raise SpecificationError(f"unknown regressor kind {self.kind!r}")
        if self.kind == "lag" and self.lag < 1:
            raise SpecificationError("lag terms require lag >= 1")

    @property
    def label(self) -> str:
        if self.kind == "intercept":
            return "intercept"
        if self.kind == "covariate":
            return self.name
        return f"lag({self.name},{self.lag})"


def intercept() -> Regressor:
    return Regressor(kind="intercept")


def covariate(name: str) -> Regressor:
    return Regressor(kind="covariate", name=name)


def lagged(name: str, lag: int = 1) -> Regressor:
    """Lagged covariate or (when ``name == OUTCOME``) lagged outcome."""
    return Regressor(kind="lag", name=name, lag=lag)


def parse_regressor(text: str) -> Regressor:
    """Parse ``"intercept"``, ``"x"`` or ``"lag(x,1)"`` into a Regressor."""
    text = text.strip()
    if text == "intercept" or text == "1":
        return intercept()
    if text.startswith("lag(") and text.endswith(")"):
        inner = text[4:-1]
        parts = [p.strip() for p in inner.split(",")]
        if len(parts) == 1:
            return lagged(parts[0], 1)
        if len(parts) == 2:
            try:
                k = int(parts[1])
            except ValueError as exc:
                raise SpecificationError(f"bad lag in regressor {text!r}") from exc
            return lagged(parts[0], k)
        raise SpecificationError(f"cannot parse regressor {text!r}")
    return covariate(text)


@dataclass(frozen=True)
class Hypothesis:
    """Linear restriction H beta = h0 with H full row rank (s x p)."""

    H: np.ndarray
    h0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))
        object.__setattr__(self, "h0", np.atleast_1d(np.asarray(self.h0, dtype=float)))
        if self.H.shape[0] != self.h0.shape[0]:
            raise SpecificationError(
                f"H has {self.H.shape[0]} rows but h0 has length {self.h0.shape[0]}"
            )

    @property
    def s(self) -> int:
        return self.H.shape[0]


@dataclass
class ModelSpec:
    """Mean-model specification: link, regressors, covariate types, hypothesis."""

    regressors: list[Regressor]
    covariate_types: dict[str, CovariateType] = field(default_factory=dict)
    hypothesis: Hypothesis | None = None
    link: Link = Link.IDENTITY

    @property
    def p(self) -> int:
        return len(self.regressors)

    def validate_against(self, data: "PanelData") -> None:
        for reg in self.regressors:
            if reg.kind == "intercept":
                continue
            if reg.kind == "covariate":
                if reg.name not in data.covariates:
                    raise SpecificationError(
                        f"regressor {reg.label!r} references unknown covariate"
                    )
            else:  # lag
                if reg.name != OUTCOME and reg.name not in data.covariates:
                    raise SpecificationError(
                        f"regressor {reg.label!r} references unknown series"
                    )
        if self.hypothesis is not None and self.hypothesis.H.shape[1] != self.p:
            raise SpecificationError(
                f"hypothesis H has {self.hypothesis.H.shape[1]} columns, model has p={self.p}"
            )


# ---------------------------------------------------------------------------
# Data container
# ---------------------------------------------------------------------------


@dataclass
class PanelData:
    """Balanced panel: outcome (n, T) plus named covariate series (n, T).

    ``pre_sample`` maps series names (covariates or the outcome) to their
    time-0 values, used to resolve lag-1 terms at t = 1.
    """

    outcome: np.ndarray
    covariates: dict[str, np.ndarray]
    pre_sample: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.outcome = np.asarray(self.outcome, dtype=float)
        if self.outcome.ndim != 2:
            raise SpecificationError("outcome must be a (subjects, times) array")
        n, t = self.outcome.shape
        if n < 1 or t < 1:
            raise SpecificationError("panel must contain at least one subject and time")
        if not np.all(np.isfinite(self.outcome)):
            raise SpecificationError("outcome contains non-finite values")
        cleaned = {}
        for name, series in self.covariates.items():
            arr = np.asarray(series, dtype=float)
            if arr.shape != (n, t):
                raise SpecificationError(
                    f"covariate {name!r} has shape {arr.shape}, expected {(n, t)}"
                )
            if not np.all(np.isfinite(arr)):
                raise SpecificationError(f"covariate {name!r} contains non-finite values")
            cleaned[name] = arr
        self.covariates = cleaned
        pre = {}
        for name, values in self.pre_sample.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != (n,):
                raise SpecificationError(
                    f"pre-sample {name!r} has shape {arr.shape}, expected {(n,)}"
                )
            if not np.all(np.isfinite(arr)):
                raise SpecificationError(f"pre-sample {name!r} contains non-finite values")
            pre[name] = arr
        self.pre_sample = pre

    @property
    def n_subjects(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_times(self) -> int:
        return self.outcome.shape[1]

    def series(self, name: str) -> np.ndarray:
        if name == OUTCOME:
            return self.outcome
        try:
            return self.covariates[name]
        except KeyError:
            raise SpecificationError(f"unknown series {name!r}") from None


# ---------------------------------------------------------------------------
# Design and residuals
# ---------------------------------------------------------------------------


def _term_values(data: PanelData, reg: Regressor, t: int) -> np.ndarray:
    """Values of one regressor for all subjects at 1-based time t."""
    n = data.n_subjects
    if reg.kind == "intercept":
        return np.ones(n)
    if reg.kind == "covariate":
        return data.series(reg.name)[:, t - 1]
    lag_time = t - reg.lag
    if lag_time >= 1:
        return data.series(reg.name)[:, lag_time - 1]
    if lag_time == 0:
        if reg.name not in data.pre_sample:
            raise SpecificationError(
                f"term {reg.label!r} needs pre-sample values for {reg.name!r} at time 0"
            )
        return data.pre_sample[reg.name]
    raise SpecificationError(f"term {reg.label!r} is unresolvable at time {t}")


def design_matrix(data: PanelData, spec: ModelSpec) -> np.ndarray:
    """Stacked regressor values, shape (n_subjects, T, p)."""
    spec.validate_against(data)
    n, t_max, p = data.n_subjects, data.n_times, spec.p
    x = np.empty((n, t_max, p))
    for j, reg in enumerate(spec.regressors):
        for t in range(1, t_max + 1):
            x[:, t - 1, j] = _term_values(data, reg, t)
    return x


def design_row(data: PanelData, spec: ModelSpec, i: int, t: int) -> np.ndarray:
    """Regressor vector x_it for subject index i (0-based) at time t (1-based)."""
    if not (1 <= t <= data.n_times):
        raise SpecificationError(f"time {t} outside 1..{data.n_times}")
    spec.validate_against(data)
    return np.array([_term_values(data, reg, t)[i] for reg in spec.regressors])


def marginal_mean(beta: np.ndarray, row: np.ndarray, link: Link = Link.IDENTITY) -> float:
    """Mean response for one design row; identity link returns row' beta."""
    beta = np.asarray(beta, dtype=float)
    row = np.asarray(row, dtype=float)
    if beta.shape != row.shape:
        raise SpecificationError(
            f"dimension mismatch: beta has shape {beta.shape}, row has {row.shape}"
        )
    if link is not Link.IDENTITY:
        raise SpecificationError(f"unsupported link {link}")
    return float(row @ beta)


def residuals(beta: np.ndarray, data: PanelData, spec: ModelSpec) -> np.ndarray:
    """u_it = y_it - mu_it(beta) for all subjects and times, shape (n, T)."""
    x = design_matrix(data, spec)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.p,):
        raise SpecificationError(f"beta must have length {spec.p}")
    return data.outcome - x @ beta


# ---------------------------------------------------------------------------
# Long CSV round trip
# ---------------------------------------------------------------------------


def write_panel_csv(data: PanelData, path) -> None:
    """Write long-format CSV; floats use shortest round-trip formatting."""
    names = sorted(data.covariates)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("subject,time," + ",".join(names) + f",{OUTCOME}\n")
        pre_names = set(data.pre_sample)
        if pre_names:
            for i in range(data.n_subjects):
                cells = [str(i + 1), "0"]
                cells += [
                    repr(float(data.pre_sample[name][i])) if name in pre_names else ""
                    for name in names
                ]
                cells.append(
                    repr(float(data.pre_sample[OUTCOME][i])) if OUTCOME in pre_names else ""
                )
                fh.write(",".join(cells) + "\n")
        for i in range(data.n_subjects):
            for t in range(1, data.n_times + 1):
                cells = [str(i + 1), str(t)]
                cells += [repr(float(data.covariates[name][i, t - 1])) for name in names]
                cells.append(repr(float(data.outcome[i, t - 1])))
                fh.write(",".join(cells) + "\n")


def read_panel_csv(path) -> PanelData:
    """Load a long-format CSV, rejecting unbalanced or malformed panels.

    Raises ``SpecificationError`` whose message includes the 1-based line
    number for malformed rows.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise SpecificationError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:2] != ["subject", "time"] or header[-1] != OUTCOME:
        raise SpecificationError(
            f"{path}: header must be 'subject,time,<covariate...>,{OUTCOME}', got {lines[0]!r}"
        )
    cov_names = header[2:-1]
    rows = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise SpecificationError(
                f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}"
            )
        try:
            subject = int(cells[0])
            time = int(cells[1])
            values = [float(c) if c.strip() != "" else np.nan for c in cells[2:]]
        except ValueError as exc:
            raise SpecificationError(f"{path}: line {lineno}: {exc}") from None
        if (subject, time) in rows:
            raise SpecificationError(
                f"{path}: line {lineno}: duplicate (subject,time)=({subject},{time})"
            )
        rows[(subject, time)] = values

    subjects = sorted({s for s, _ in rows})
    times = sorted({t for _, t in rows if t >= 1})
    if not times:
        raise SpecificationError(f"{path}: no observation rows (time >= 1)")
    t_max = max(times)
    if times != list(range(1, t_max + 1)):
        raise SpecificationError(f"{path}: observation times must be 1..{t_max}")
    for s in subjects:
        for t in range(1, t_max + 1):
            if (s, t) not in rows:
                raise SpecificationError(
                    f"{path}: unbalanced panel: subject {s} missing time {t}"
                )

    n = len(subjects)
    outcome = np.empty((n, t_max))
    covariates = {name: np.empty((n, t_max)) for name in cov_names}
    for i, s in enumerate(subjects):
        for t in range(1, t_max + 1):
            values = rows[(s, t)]
            for k, name in enumerate(cov_names):
                covariates[name][i, t - 1] = values[k]
            outcome[i, t - 1] = values[-1]

    pre_sample = {}
    pre_rows = {s for s, t in rows if t == 0}
    if pre_rows:
        if pre_rows != set(subjects):
            raise SpecificationError(f"{path}: pre-sample rows must cover every subject")
        for k, name in enumerate(cov_names + [OUTCOME]):
            col = np.array([rows[(s, 0)][k] for s in subjects])
            if not np.any(np.isnan(col)):
                pre_sample[name] = col
    return PanelData(outcome=outcome, covariates=covariates, pre_sample=pre_sample)
