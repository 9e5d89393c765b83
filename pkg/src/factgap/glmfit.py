"""Binary logistic regression with categorical fixed effects.

The response is a one-vs-rest indicator built from the ternary outcome (or an
arbitrary binary label), regressed on covariates plus dummy-coded factors with
one reference level dropped. Fitting is Newton-Raphson / IRLS on the Bernoulli
log-likelihood with step-halving; inference is Wald (coef / se against the
standard normal), with significance stars at the 10% / 5% / 1% levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    AnalysisError,
    DegenerateResponseError,
    FactorDegeneracyError,
    LevelError,
    RankError,
    SeparationError,
)
from .outcome import HALLUCINATION, SUCCESS, Outcome

TARGETS = ("success", "hallucination", "label")

STAR_THRESHOLDS = ((0.01, "‡"), (0.05, "†"), (0.10, "*"))

# coefficient magnitude past which a still-moving fit is treated as separated
SEPARATION_BOUND = 30.0


@dataclass
class RegressionSpec:
    """What to regress: target indicator, covariates, and fixed effects."""

    outcome_target: str
    covariate_names: list[str] = field(default_factory=list)
    fixed_effects: list[str] = field(default_factory=list)
    reference_levels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome_target not in TARGETS:
            raise AnalysisError(f"unknown outcome_target {self.outcome_target!r}; expected one of {TARGETS}")
        if not self.covariate_names and not self.fixed_effects:
            raise AnalysisError("spec needs at least one covariate or fixed effect")


@dataclass(frozen=True)
class LabeledRow:
    """A pre-labeled observation for outcome_target='label' regressions."""

    entity_id: str
    year: int
    label: int


@dataclass
class DesignMatrix:
    response: np.ndarray  # (n,) of 0/1
    matrix: np.ndarray  # (n, k), first column all ones
    column_names: list[str]
    covariate_names: list[str]
    factor_levels: dict[str, list[str]]  # observed levels; [0] is the reference
    dropped: int

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def k(self) -> int:
        return int(self.matrix.shape[1])


@dataclass
class FitResult:
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    z_scores: dict[str, float]
    p_values: dict[str, float]
    stars: dict[str, str]
    log_likelihood: float
    iterations: int
    converged: bool
    n: int
    dropped: int
    column_names: list[str]
    covariate_names: list[str]
    factor_levels: dict[str, list[str]]
    ll_trace: list[float] = field(default_factory=list)


def _row_response(row, target: str) -> int:
    if target == "label":
        if isinstance(row, LabeledRow):
            return int(row.label)
        return int(row.label)  # duck-typed: anything with a .label
    if not isinstance(row, Outcome):
        raise AnalysisError(f"target {target!r} requires Outcome rows, got {type(row).__name__}")
    wanted = SUCCESS if target == "success" else HALLUCINATION
    return 1 if row.y == wanted else 0


def build_design(rows: Sequence, covariates: Mapping[str, Mapping[tuple[str, int], float]],
                 spec: RegressionSpec,
                 factor_values: Mapping[str, Mapping[tuple[str, int], str]] | None = None,
                 ) -> DesignMatrix:
    """Assemble the design matrix: intercept, covariates, then factor dummies.

    `covariates` maps each covariate name to its (entity_id, year) -> value
    table. The "year" factor reads levels straight off each row; other factors
    (e.g. a league) come from `factor_values`. Rows missing any covariate or
    factor level are dropped and counted.
    """
    factor_values = factor_values or {}
    for name in spec.covariate_names:
        if name not in covariates:
            raise AnalysisError(f"covariate {name!r} not supplied")
    for name in spec.fixed_effects:
        if name != "year" and name not in factor_values:
            raise AnalysisError(f"factor {name!r} not supplied")

    kept_rows = []
    responses = []
    dropped = 0
    for row in rows:
        key = (row.entity_id, row.year)
        covs = []
        ok = True
        for name in spec.covariate_names:
            value = covariates[name].get(key)
            if value is None or not math.isfinite(value):
                ok = False
                break
            covs.append(value)
        levels = {}
        if ok:
            for name in spec.fixed_effects:
                if name == "year":
                    levels[name] = str(row.year)
                else:
                    level = factor_values[name].get(key)
                    if level is None:
                        ok = False
                        break
                    levels[name] = level
        if not ok:
            dropped += 1
            continue
        kept_rows.append((covs, levels))
        responses.append(_row_response(row, spec.outcome_target))

    if not kept_rows:
        raise DegenerateResponseError("no usable rows after dropping missing values")
    y = np.asarray(responses, dtype=float)
    if y.min() == y.max():
        raise DegenerateResponseError(
            f"response is all {int(y[0])}s for target {spec.outcome_target!r}")

    factor_levels: dict[str, list[str]] = {}
    for name in spec.fixed_effects:
        observed = sorted({levels[name] for _, levels in kept_rows})
        if len(observed) < 2:
            raise FactorDegeneracyError(f"factor {name!r} has a single level {observed[0]!r}")
        reference = spec.reference_levels.get(name, observed[0])
        if reference not in observed:
            raise AnalysisError(f"reference level {reference!r} not observed for factor {name!r}")
        factor_levels[name] = [reference] + [lv for lv in observed if lv != reference]

    column_names = ["intercept"] + list(spec.covariate_names)
    for name in spec.fixed_effects:
        column_names += [f"{name}={lv}" for lv in factor_levels[name][1:]]

    n, k = len(kept_rows), len(column_names)
    X = np.zeros((n, k))
    X[:, 0] = 1.0
    for i, (covs, levels) in enumerate(kept_rows):
        X[i, 1:1 + len(covs)] = covs
        col = 1 + len(spec.covariate_names)
        for name in spec.fixed_effects:
            non_ref = factor_levels[name][1:]
            lv = levels[name]
            if lv in non_ref:
                X[i, col + non_ref.index(lv)] = 1.0
            col += len(non_ref)

    for j, name in enumerate(column_names[1:], start=1):
        if np.ptp(X[:, j]) == 0.0:
            raise RankError(f"design column {name!r} is constant")

    return DesignMatrix(response=y, matrix=X, column_names=column_names,
                        covariate_names=list(spec.covariate_names),
                        factor_levels=factor_levels, dropped=dropped)


def _log_likelihood(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _name_collinear_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    # pivoted QR: columns past the numerical rank are the dependent ones
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    return sorted(names[j] for j in piv[rank:])


def fit_logit(design: DesignMatrix, tolerance: float = 1e-8, max_iter: int = 100) -> FitResult:
    """Maximize the Bernoulli log-likelihood by Newton steps with step-halving.

    Convergence is declared when the max-norm of the score X'(y - p) drops to
    `tolerance`. Standard errors come from the inverse observed information;
    separation is reported as an error instead of returning huge coefficients.
    """
    if max_iter < 1:
        raise AnalysisError("max_iter must be >= 1")
    X, y = design.matrix, design.response
    k = design.k
    beta = np.zeros(k)
    ll = _log_likelihood(X, y, beta)
    trace = [ll]
    converged = False
    iterations = 0

    for iterations in range(max_iter + 1):
        p = _sigmoid(X @ beta)
        score = X.T @ (y - p)
        if np.max(np.abs(score)) <= tolerance:
            converged = True
            break
        if iterations == max_iter:
            break
        w = p * (1.0 - p)
        info = X.T @ (w[:, None] * X)
        try:
            cho = scipy.linalg.cho_factor(info)
            step = scipy.linalg.cho_solve(cho, score)
        except scipy.linalg.LinAlgError:
            cols = _name_collinear_columns(np.sqrt(w)[:, None] * X, design.column_names)
            raise RankError("singular information matrix; collinear columns: "
                            + (", ".join(cols) if cols else "<numerically degenerate>")) from None
        scale = 1.0
        while True:
            candidate = beta + scale * step
            ll_new = _log_likelihood(X, y, candidate)
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
            if scale < 2.0 ** -40:
                candidate, ll_new = beta, ll  # no improving step in this direction
                break
        beta, ll = candidate, ll_new
        trace.append(ll)
        if np.max(np.abs(beta)) > SEPARATION_BOUND and scale * np.max(np.abs(step)) > 1e-3:
            raise SeparationError(
                "coefficients diverging (|coef| > "
                f"{SEPARATION_BOUND:g} with non-vanishing steps); the data are "
                "perfectly or quasi-perfectly separated")

    p = _sigmoid(X @ beta)
    w = p * (1.0 - p)
    info = X.T @ (w[:, None] * X)
    try:
        cho = scipy.linalg.cho_factor(info)
        cov = scipy.linalg.cho_solve(cho, np.eye(k))
    except scipy.linalg.LinAlgError:
        cols = _name_collinear_columns(np.sqrt(w)[:, None] * X, design.column_names)
        raise RankError("singular information matrix at the optimum; collinear columns: "
                        + (", ".join(cols) if cols else "<numerically degenerate>")) from None
    se = np.sqrt(np.diag(cov))

    names = design.column_names
    coefficients = {name: float(b) for name, b in zip(names, beta)}
    std_errors = {name: float(s) for name, s in zip(names, se)}
    z_scores = {name: (coefficients[name] / std_errors[name]) if std_errors[name] > 0 else math.inf
                for name in names}
    p_values = {name: wald_pvalue(z) for name, z in z_scores.items()}
    stars = {name: significance_stars(p) for name, p in p_values.items()}

    return FitResult(coefficients=coefficients, std_errors=std_errors, z_scores=z_scores,
                     p_values=p_values, stars=stars, log_likelihood=ll,
                     iterations=iterations, converged=converged, n=design.n,
                     dropped=design.dropped, column_names=names,
                     covariate_names=design.covariate_names,
                     factor_levels=design.factor_levels, ll_trace=trace)


def wald_pvalue(z: float) -> float:
    """Two-sided p-value 2*(1 - Phi(|z|)), via the complementary error function.

    Phi(|z|) = 1 - erfc(|z|/sqrt(2))/2, so p = erfc(|z|/sqrt(2)); erfc is
    evaluated by the C library's rational approximation, accurate to machine
    precision (well within 1e-7).
    """
    if not math.isfinite(z):
        return 0.0
    return math.erfc(abs(z) / math.sqrt(2.0))


def significance_stars(p: float) -> str:
    for threshold, mark in STAR_THRESHOLDS:
        if p < threshold:
            return mark
    return ""


def predict(fit: FitResult, covariates: Mapping[str, float] | None = None,
            factors: Mapping[str, str | int] | None = None) -> float:
    """Fitted probability for one row of covariate and factor values."""
    covariates = covariates or {}
    factors = factors or {}
    x = np.zeros(len(fit.column_names))
    x[0] = 1.0
    index = {name: j for j, name in enumerate(fit.column_names)}
    for name in fit.covariate_names:
        if name not in covariates:
            raise AnalysisError(f"missing covariate {name!r}")
        x[index[name]] = covariates[name]
    for name, levels in fit.factor_levels.items():
        if name not in factors:
            raise AnalysisError(f"missing factor {name!r}")
        level = str(factors[name])
        if level not in levels:
            raise LevelError(f"factor {name!r} level {level!r} unseen at fit time "
                             f"(known: {levels})")
        if level != levels[0]:
            x[index[f"{name}={level}"]] = 1.0
    eta = float(np.dot(x, [fit.coefficients[name] for name in fit.column_names]))
    return float(_sigmoid(np.asarray([eta]))[0])


def fit_to_dict(fit: FitResult) -> dict:
    """JSON-ready fit report: coefficient table plus diagnostics."""
    return {
        "coefficients": [
            {
                "name": name,
                "coef": fit.coefficients[name],
                "se": fit.std_errors[name],
                "z": fit.z_scores[name],
                "p": fit.p_values[name],
                "stars": fit.stars[name],
            }
            for name in fit.column_names
        ],
        "n": fit.n,
        "dropped": fit.dropped,
        "log_likelihood": fit.log_likelihood,
        "iterations": fit.iterations,
        "converged": fit.converged,
    }


def format_fit_table(fit: FitResult, title: str = "") -> str:
    """Plain-text coefficient table with significance stars."""
    width = max(len(name) for name in fit.column_names)
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'':{width}}  {'coef':>12}  {'se':>10}  {'z':>9}  {'p':>8}")
    for name in fit.column_names:
        coef = fit.coefficients[name]
        mark = fit.stars[name]
        lines.append(f"{name:{width}}  {coef:>12.4f}{mark:<1} {fit.std_errors[name]:>10.4f}  "
                     f"{fit.z_scores[name]:>9.2f}  {fit.p_values[name]:>8.4f}")
    lines.append(f"n={fit.n}  dropped={fit.dropped}  log_likelihood={fit.log_likelihood:.4f}  "
                 f"iterations={fit.iterations}  converged={fit.converged}")
    lines.append("significance: * p<0.10, † p<0.05, ‡ p<0.01")
    return "\n".join(lines) + "\n"
