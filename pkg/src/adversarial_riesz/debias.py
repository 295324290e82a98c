"""Debiased estimation of average moments with cross-fitting.

The debiased score adds a representer-weighted residual to the plug-in
moment,

    psi(z) = m(z; g) + a(x) (y - g(x)),

and the estimate is its sample mean with nuisances (a, g) fitted on the
other folds.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import norm as normal

from .core import (
    STREAM_FOLDS,
    Dataset,
    EvaluableFunction,
    Sample,
    apply_moment,
    rng_stream,
    thread_budget,
)
from .errors import ConfigurationError, LearnerError, WeakIdentificationError

Learner = Callable[[Dataset], Any]


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic partition of rows into K folds of sizes differing by at most one."""

    K: int
    assignment: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.assignment, dtype=np.intp)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")
        if a.size and (a.min() < 0 or a.max() >= self.K):
            raise ConfigurationError("fold labels must lie in [0, K)")

    @classmethod
    def make(cls, n: int, K: int = 5, seed: int | Sequence[int] = 0) -> "FoldPlan":
        if K < 2:
            raise ConfigurationError("cross-fitting needs K >= 2 folds")
        if n < 2 * K:
            raise ConfigurationError(f"n = {n} is too small for {K} folds")
        perm = rng_stream(seed, STREAM_FOLDS).permutation(n)
        assignment = np.empty(n, dtype=np.intp)
        for k, chunk in enumerate(np.array_split(perm, K)):
            assignment[chunk] = k
        return cls(K, assignment)

    @property
    def n(self) -> int:
        return self.assignment.size

    @property
    def folds(self) -> tuple[np.ndarray, ...]:
        return tuple(np.flatnonzero(self.assignment == k) for k in range(self.K))

    def train_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)


@dataclass(frozen=True)
class DebiasResult:
    theta_hat: float
    se: float
    ci: tuple[float, float]
    level: float
    plug_in: float
    psi: np.ndarray
    per_fold: tuple[dict[str, Any], ...] = ()
    no_split: bool = False

    @property
    def n(self) -> int:
        return self.psi.size

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta_hat": self.theta_hat,
            "se": self.se,
            "ci": list(self.ci),
            "level": self.level,
            "plug_in": self.plug_in,
            "per_fold": [dict(d) for d in self.per_fold],
            "no_split": self.no_split,
        }


def _values(fn: Any, x: np.ndarray) -> np.ndarray:
    return np.asarray(fn.values(x), dtype=np.float64)


def debiased_moment(sample: Sample, a: EvaluableFunction, g: EvaluableFunction, functional: Any) -> float:
    """m(z; g) + a(x) (y - g(x)) for one sample."""
    x = np.asarray(sample.x, dtype=np.float64)
    residual = sample.y - float(_values(g, x[None, :])[0])
    return apply_moment(functional, sample, g) + float(_values(a, x[None, :])[0]) * residual


def debiased_scores(dataset: Dataset, a: Any, g: Any, functional: Any) -> tuple[np.ndarray, np.ndarray]:
    """(psi, plug-in scores) for every row of ``dataset``."""
    plug = np.asarray(functional.scores(dataset, g), dtype=np.float64)
    residual = dataset.y - _values(g, dataset.x)
    return plug + _values(a, dataset.x) * residual, plug


def normal_interval(theta: float, se: float, level: float) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ConfigurationError("confidence level must be in (0, 1)")
    z = float(normal.ppf(0.5 + level / 2))
    return theta - z * se, theta + z * se


def _summarise(psi: np.ndarray, plug: np.ndarray, level: float, per_fold: Sequence[dict[str, Any]],
               no_split: bool) -> DebiasResult:
    theta = float(np.mean(psi))
    se = float(math.sqrt(np.var(psi) / psi.size))
    psi = psi.copy()
    psi.setflags(write=False)
    return DebiasResult(theta, se, normal_interval(theta, se, level), level, float(np.mean(plug)),
                        psi, tuple(per_fold), no_split)


def _fit_fold(k: int, train: Dataset, riesz_learner: Learner, regression_learners: Sequence[Learner],
              outcomes: Sequence[np.ndarray], train_idx: np.ndarray) -> tuple[Any, list[Any]]:
    try:
        a_hat = riesz_learner(train)
        g_hats = [learn(train.with_outcome(y[train_idx]))
                  for learn, y in zip(regression_learners, outcomes)]
    except Exception as exc:
        raise LearnerError(k, exc) from exc
    return a_hat, g_hats


def cross_fit_outcomes(dataset: Dataset, plan: FoldPlan, riesz_learner: Learner,
                       regression_learner: Learner, functional: Any,
                       outcomes: Sequence[np.ndarray], level: float = 0.95,
                       threads: int | None = None) -> list[DebiasResult]:
    """Cross-fitted estimates for several outcomes sharing one representer per fold.

    The representer depends only on x, so it is fitted once per fold; the
    regression is refitted for each outcome.
    """
    if plan.n != dataset.n:
        raise ConfigurationError(f"fold plan covers {plan.n} rows, dataset has {dataset.n}")
    outcomes = [np.asarray(y, dtype=np.float64) for y in outcomes]
    folds = plan.folds
    learners = [regression_learner] * len(outcomes)

    def work(k: int) -> tuple[Any, list[Any]]:
        train_idx = plan.train_index(k)
        return _fit_fold(k, dataset.subset(train_idx), riesz_learner, learners, outcomes, train_idx)

    workers = min(thread_budget(threads), plan.K)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(work, range(plan.K)))
    else:
        fits = [work(k) for k in range(plan.K)]

    results = []
    for j, y in enumerate(outcomes):
        psi = np.empty(dataset.n)
        plug = np.empty(dataset.n)
        per_fold = []
        for k, idx in enumerate(folds):
            a_hat, g_hats = fits[k]
            test = dataset.subset(idx).with_outcome(y[idx])
            psi[idx], plug[idx] = debiased_scores(test, a_hat, g_hats[j], functional)
            per_fold.append(_fold_diagnostics(k, test, a_hat, g_hats[j], plug[idx]))
        results.append(_summarise(psi, plug, level, per_fold, no_split=False))
    return results


def _fold_diagnostics(k: int, test: Dataset, a_hat: Any, g_hat: Any, plug: np.ndarray) -> dict[str, Any]:
    av = _values(a_hat, test.x)
    resid = test.y - _values(g_hat, test.x)
    return {
        "fold": k,
        "size": test.n,
        "riesz_norm": float(np.sqrt(np.mean(av * av))),
        "regression_mse": float(np.mean(resid * resid)),
        "plug_in": float(np.mean(plug)),
    }


def cross_fit_estimate(dataset: Dataset, plan: FoldPlan, riesz_learner: Learner,
                       regression_learner: Learner, functional: Any, level: float = 0.95,
                       threads: int | None = None) -> DebiasResult:
    """Cross-fitted debiased estimate; nuisances for fold k see only the other folds."""
    return cross_fit_outcomes(dataset, plan, riesz_learner, regression_learner, functional,
                              [dataset.y], level, threads)[0]


def no_split_estimate(dataset: Dataset, riesz_learner: Learner, regression_learner: Learner,
                      functional: Any, level: float = 0.95) -> DebiasResult:
    """Debiased estimate with nuisances fitted on all rows."""
    a_hat, (g_hat,) = _fit_fold(0, dataset, riesz_learner, [regression_learner], [dataset.y],
                                np.arange(dataset.n))
    psi, plug = debiased_scores(dataset, a_hat, g_hat, functional)
    return _summarise(psi, plug, level, [_fold_diagnostics(0, dataset, a_hat, g_hat, plug)],
                      no_split=True)


# --------------------------------------------------------------------------
# ratios of debiased estimates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioResult:
    theta_hat: float
    se: float
    ci: tuple[float, float]
    level: float
    numerator: float
    denominator: float

    def to_dict(self) -> dict[str, Any]:
        return {"theta_hat": self.theta_hat, "se": self.se, "ci": list(self.ci), "level": self.level,
                "numerator": self.numerator, "denominator": self.denominator}


def _components(part: Any) -> tuple[float, float, np.ndarray | None]:
    if isinstance(part, DebiasResult):
        return part.theta_hat, part.se, part.psi
    est, se = part
    return float(est), float(se), None


def delta_method_ratio(num: Any, den: Any, cov: float | None = None) -> tuple[float, float]:
    """Ratio num / den with a first-order standard error.

    ``num`` and ``den`` are DebiasResult objects (the covariance then comes
    from their stacked influence scores) or (estimate, se) pairs together with
    the covariance ``cov`` of the two estimates.
    """
    n_est, n_se, n_psi = _components(num)
    d_est, d_se, d_psi = _components(den)
    if cov is None:
        if n_psi is None or d_psi is None:
            cov = 0.0
        else:
            if n_psi.size != d_psi.size:
                raise ConfigurationError("influence scores must come from the same rows")
            cov = float(np.mean((n_psi - n_psi.mean()) * (d_psi - d_psi.mean())) / n_psi.size)
    if abs(d_est) <= 10.0 * d_se or d_est == 0.0:
        raise WeakIdentificationError(
            f"denominator {d_est:.4g} is within 10 standard errors ({d_se:.3g}) of zero"
        )
    ratio = n_est / d_est
    var = n_se**2 / d_est**2 + n_est**2 * d_se**2 / d_est**4 - 2.0 * n_est * cov / d_est**3
    return ratio, math.sqrt(max(var, 0.0))


def late_estimate(dataset: Dataset, plan: FoldPlan, riesz_learner: Learner, regression_learner: Learner,
                  functional: Any, treatment_key: str = "d", level: float = 0.95,
                  threads: int | None = None) -> RatioResult:
    """Local effect: debiased instrument effect on y over that on the treatment."""
    if treatment_key not in dataset.extras:
        raise ConfigurationError(f"dataset has no extra column {treatment_key!r}")
    num, den = cross_fit_outcomes(dataset, plan, riesz_learner, regression_learner, functional,
                                  [dataset.y, dataset.extras[treatment_key]], level, threads)
    ratio, se = delta_method_ratio(num, den)
    return RatioResult(ratio, se, normal_interval(ratio, se, level), level, num.theta_hat, den.theta_hat)


# --------------------------------------------------------------------------
# finite-difference linearisation of nonlinear moments
# --------------------------------------------------------------------------


MomentFn = Callable[[np.ndarray, np.ndarray, Any, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GateauxFunctional:
    """Difference quotient of a nonlinear moment around a preliminary fit.

    ``moment(x, y, theta, g_values)`` returns per-row moment values given the
    regression's values ``g_values`` at the rows; it is evaluated at
    g_hat and at g_hat + eps (f - g_hat).  The object exposes the same
    ``mean_over`` / ``scores`` interface as a linear moment functional.
    """

    moment: MomentFn
    theta_tilde: Any
    g_hat: EvaluableFunction
    epsilon: float | None = None
    name: str = "gateaux"
    outcome_free: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")

    def step(self, x: np.ndarray) -> float:
        """Configured epsilon, else cbrt(machine eps) * (1 + rms of g_hat at x)."""
        if self.epsilon is not None:
            return float(self.epsilon)
        g = _values(self.g_hat, x)
        return float(np.finfo(float).eps ** (1 / 3) * (1.0 + np.sqrt(np.mean(g * g))))

    def evaluate(self, x: np.ndarray, f: EvaluableFunction, y: np.ndarray | None = None,
                 eps: float | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        eps = self.step(x) if eps is None else float(eps)
        y = np.zeros(x.shape[0]) if y is None else np.asarray(y, dtype=np.float64)
        base = _values(self.g_hat, x)
        moved = base + eps * (_values(f, x) - base)
        hi = np.asarray(self.moment(x, y, self.theta_tilde, moved), dtype=np.float64)
        lo = np.asarray(self.moment(x, y, self.theta_tilde, base), dtype=np.float64)
        return (hi - lo) / eps

    def scores(self, dataset: Dataset, f: EvaluableFunction) -> np.ndarray:
        return self.evaluate(dataset.x, f, dataset.y)

    def mean_over(self, dataset: Dataset, f: EvaluableFunction) -> float:
        return float(np.mean(self.scores(dataset, f)))


def gateaux_functional(moment: MomentFn, theta_tilde: Any, g_hat: EvaluableFunction,
                       epsilon: float | None = None) -> GateauxFunctional:
    return GateauxFunctional(moment, theta_tilde, g_hat, epsilon)
