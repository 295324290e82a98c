"""Follow-the-leader training against best-responding representer oracles.

The test-function player runs follow-the-leader: at round t it plays the
exact maximiser of the criterion against the running average of past
representers.  The representer player best-responds to that test function.
For sign-valued representer classes the best response is a weighted
classification problem with labels sign(f) and weights |f|.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import linalg

from .core import Dataset, EvaluableFunction, MomentFunctional, ate
from .errors import ConfigurationError, LinAlgError, OracleError

log = logging.getLogger(__name__)

ABestResponse = Callable[[np.ndarray, Dataset], EvaluableFunction]
FLeader = Callable[[np.ndarray, Any, Dataset], EvaluableFunction]


@dataclass(frozen=True)
class PlayerOracle:
    """Pair of oracles for the two players.

    ``a_best_response(f_values, dataset)`` returns a member of the representer
    class maximising E_n[a f]; ``f_ftl(a_values, functional, dataset)``
    returns the test function maximising the criterion against ``a_values``.
    ``a_bound`` is the declared sup-norm bound of the representer class.
    """

    a_best_response: ABestResponse
    f_ftl: FLeader
    a_bound: float | None = None
    f_convex: bool = True
    name: str = ""


@dataclass(frozen=True)
class TrainTrace:
    values: np.ndarray
    a_functions: tuple[EvaluableFunction, ...]
    f_functions: tuple[EvaluableFunction, ...]
    T: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.T

    @property
    def a_bar(self) -> EvaluableFunction:
        return averaged(self.a_functions)

    @property
    def f_bar(self) -> EvaluableFunction:
        return averaged(self.f_functions)


def averaged(functions: Sequence[EvaluableFunction]) -> EvaluableFunction:
    """Lazy pointwise average; the class need not be closed under averaging."""
    fns = tuple(functions)
    if not fns:
        raise ConfigurationError("cannot average an empty list of functions")
    dims = {f.dim for f in fns if f.dim is not None}
    k = len(fns)

    def fn(x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[0])
        for f in fns:
            out += f.values(x)
        return out / k

    norms = [f.norm for f in fns]
    # triangle inequality: the mean of the norms bounds the norm of the mean
    bound = float(np.mean(norms)) if all(v is not None for v in norms) else None
    return EvaluableFunction(fn, norm=bound, dim=dims.pop() if len(dims) == 1 else None,
                             label=f"average of {k}")


def criterion_value(functional: Any, dataset: Dataset, a_values: np.ndarray,
                    f: EvaluableFunction, f_values: np.ndarray | None = None) -> float:
    """E_n[m(Z;f) - a f - f^2] with ``a`` given by its values at the data."""
    fv = f.values(dataset.x) if f_values is None else f_values
    return float(functional.mean_over(dataset, f) - np.mean(a_values * fv) - np.mean(fv * fv))


def _checked(values: np.ndarray, who: str, t: int) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise OracleError(f"{who} oracle returned non-finite values at round {t}")
    return values


def ftl_train(dataset: Dataset, functional: Any, oracles: PlayerOracle,
              T: int) -> tuple[EvaluableFunction, TrainTrace]:
    """Run T rounds and return the average representer with the trace.

    The empty average before round 1 is the zero function.
    """
    if T < 1:
        raise ConfigurationError("T must be at least 1")
    if not oracles.f_convex:
        raise ConfigurationError("follow-the-leader needs a convex test-function class")
    n = dataset.n
    a_sum = np.zeros(n)
    values = np.empty(T)
    a_fns: list[EvaluableFunction] = []
    f_fns: list[EvaluableFunction] = []
    worst_range = 0.0
    for t in range(1, T + 1):
        a_prev = a_sum / (t - 1) if t > 1 else np.zeros(n)
        f = oracles.f_ftl(a_prev, functional, dataset)
        fv = _checked(f.values(dataset.x), "test-function", t)
        values[t - 1] = criterion_value(functional, dataset, a_prev, f, fv)
        a = oracles.a_best_response(fv, dataset)
        av = _checked(a.values(dataset.x), "representer", t)
        worst_range = max(worst_range, float(np.max(np.abs(av))))
        if oracles.a_bound is not None and worst_range > oracles.a_bound * (1 + 1e-12) + 1e-12:
            raise OracleError(
                f"representer oracle left its declared range {oracles.a_bound} at round {t}"
            )
        a_sum += av
        a_fns.append(a)
        f_fns.append(f)
    trace = TrainTrace(values, tuple(a_fns), tuple(f_fns), T,
                       {"oracle": oracles.name, "max_abs_representer": worst_range})
    return averaged(a_fns), trace


def equilibrium_gap(dataset: Dataset, functional: Any, oracles: PlayerOracle,
                    trace: TrainTrace) -> float:
    """max_f l(a_bar, f) - min_a l(a, f_bar), using the oracles as exact best responses.

    Upper-bounds the suboptimality of a_bar whenever both oracles are exact.
    """
    a_bar, f_bar = trace.a_bar, trace.f_bar
    av = a_bar.values(dataset.x)
    f_best = oracles.f_ftl(av, functional, dataset)
    upper = criterion_value(functional, dataset, av, f_best)
    fv = f_bar.values(dataset.x)
    a_best = oracles.a_best_response(fv, dataset)
    lower = criterion_value(functional, dataset, a_best.values(dataset.x), f_bar, fv)
    return max(upper - lower, 0.0)


# --------------------------------------------------------------------------
# representer-player oracles
# --------------------------------------------------------------------------


def classification_reduction(f: EvaluableFunction | np.ndarray,
                             dataset: Dataset | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Labels sign(f(x_i)) with sign(0) = +1 and weights |f(x_i)|."""
    if isinstance(f, EvaluableFunction):
        if dataset is None:
            raise ConfigurationError("a dataset is needed to evaluate f")
        fv = f.values(dataset.x)
    else:
        fv = np.asarray(f, dtype=np.float64)
    labels = np.where(fv >= 0, 1.0, -1.0)
    return labels, np.abs(fv)


def _default_classifier() -> Any:
    from sklearn.tree import DecisionTreeClassifier

    return DecisionTreeClassifier(random_state=0)


def sign_class_oracle(make_classifier: Callable[[], Any] | None = None) -> ABestResponse:
    """Best response over {+1,-1}-valued functions via weighted classification.

    The default unrestricted decision tree separates any labelling of
    distinct points, so the response is exact over all sign functions.
    """
    factory = make_classifier or _default_classifier

    def respond(f_values: np.ndarray, dataset: Dataset) -> EvaluableFunction:
        labels, weights = classification_reduction(f_values)
        dim = dataset.dim
        if weights.sum() <= 0 or np.all(labels == labels[0]):
            c = float(labels[0]) if weights.sum() > 0 else 1.0
            return EvaluableFunction(lambda x: np.full(x.shape[0], c), norm=1.0, dim=dim,
                                     label="sign-constant")
        clf = factory()
        clf.fit(dataset.x, labels, sample_weight=weights)

        def fn(x: np.ndarray) -> np.ndarray:
            return np.where(clf.predict(x) >= 0, 1.0, -1.0)

        return EvaluableFunction(fn, norm=1.0, dim=dim, label="sign-classifier")

    return respond


def l1_linear_oracle(B: float, basis: Callable[[np.ndarray], np.ndarray] | None = None) -> ABestResponse:
    """Best response over {x -> theta . b(x) : ||theta||_1 <= B}: a signed vertex."""
    if B <= 0:
        raise ConfigurationError("B must be positive")
    feat = basis or (lambda x: x)

    def respond(f_values: np.ndarray, dataset: Dataset) -> EvaluableFunction:
        Bx = feat(dataset.x)
        g = Bx.T @ f_values / dataset.n
        j = int(np.argmax(np.abs(g)))
        coef = np.zeros(Bx.shape[1])
        coef[j] = B if g[j] >= 0 else -B
        coef.setflags(write=False)
        return EvaluableFunction(lambda x: feat(x) @ coef, norm=B, dim=dataset.dim,
                                 label=f"vertex({j})")

    return respond


def constant_oracle(bound: float = 1.0) -> ABestResponse:
    """Best response over constants in [-bound, bound]."""

    def respond(f_values: np.ndarray, dataset: Dataset) -> EvaluableFunction:
        c = bound if np.mean(f_values) >= 0 else -bound
        return EvaluableFunction(lambda x: np.full(x.shape[0], c), norm=bound, dim=dataset.dim,
                                 label="constant")

    return respond


def finite_class_oracle(members: Sequence[EvaluableFunction]) -> ABestResponse:
    """Exhaustive best response over a finite class; ties keep the first member."""
    members = tuple(members)
    if not members:
        raise ConfigurationError("finite class is empty")

    def respond(f_values: np.ndarray, dataset: Dataset) -> EvaluableFunction:
        scores = [float(np.mean(m.values(dataset.x) * f_values)) for m in members]
        return members[int(np.argmax(scores))]

    return respond


# --------------------------------------------------------------------------
# test-function oracles over finite-dimensional linear classes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearBasis:
    """Features b(x): selected columns of x, optionally with an intercept."""

    columns: tuple[int, ...] | None = None
    intercept: bool = True

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cols = x if self.columns is None else x[:, list(self.columns)]
        if self.intercept:
            cols = np.hstack([np.ones((x.shape[0], 1)), cols])
        return cols


def zero_basis(x: np.ndarray) -> np.ndarray:
    """Basis of the trivial class {0}."""
    return np.zeros((np.atleast_2d(x).shape[0], 1))


def basis_moments(functional: Any, dataset: Dataset, basis: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """c_j = E_n[m(Z; b_j)] for every basis function."""
    k = basis(dataset.x[:1]).shape[1]
    out = np.empty(k)
    for j in range(k):
        probe = EvaluableFunction(lambda x, j=j: basis(x)[:, j], dim=dataset.dim)
        out[j] = functional.mean_over(dataset, probe)
    return out


@dataclass(frozen=True)
class QuadraticProblem:
    """Criterion restricted to f = w . b(x):  c.w - h.w - w' S w - ridge |w|^2."""

    S: np.ndarray
    c: np.ndarray
    h: np.ndarray
    ridge: float

    def value(self, w: np.ndarray) -> float:
        return float((self.c - self.h) @ w - w @ self.S @ w - self.ridge * w @ w)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.c - self.h - 2.0 * (self.S @ w) - 2.0 * self.ridge * w


def quadratic_problem(a_values: np.ndarray, functional: Any, dataset: Dataset,
                      basis: Callable[[np.ndarray], np.ndarray], ridge: float = 0.0) -> QuadraticProblem:
    if ridge < 0:
        raise ConfigurationError("ridge must be non-negative")
    Bx = basis(dataset.x)
    n = dataset.n
    S = Bx.T @ Bx / n
    return QuadraticProblem(0.5 * (S + S.T), basis_moments(functional, dataset, basis),
                            Bx.T @ np.asarray(a_values, dtype=np.float64) / n, float(ridge))


def solve_quadratic(problem: QuadraticProblem, max_retries: int = 6) -> tuple[np.ndarray, float]:
    """Maximiser w = 1/2 (S + ridge I)^{-1} (c - h), retrying with extra ridge if singular.

    Returns (w, extra ridge used).
    """
    k = problem.S.shape[0]
    M = problem.S + problem.ridge * np.eye(k)
    rhs = 0.5 * (problem.c - problem.h)
    scale = max(float(np.trace(M)) / k, 1.0)
    extra = 0.0
    for attempt in range(max_retries + 1):
        try:
            factor = linalg.cho_factor(M + extra * np.eye(k))
            w = linalg.cho_solve(factor, rhs)
            if np.all(np.isfinite(w)):
                if extra > 0:
                    log.info("normal equations singular; solved with extra ridge %.3e", extra)
                return w, extra
        except linalg.LinAlgError:
            pass
        extra = scale * 10.0 ** (-12 + 2 * attempt)
    raise LinAlgError("normal equations stayed singular after ridge retries",
                      float(np.linalg.cond(M)))


def linear_class_function(w: np.ndarray, basis: Callable[[np.ndarray], np.ndarray],
                          dim: int | None) -> EvaluableFunction:
    w = np.array(w, dtype=np.float64)
    w.setflags(write=False)
    return EvaluableFunction(lambda x: basis(x) @ w, norm=float(np.linalg.norm(w)), dim=dim,
                             label="linear-class")


def linear_f_oracle(basis: Callable[[np.ndarray], np.ndarray] | None = None,
                    ridge: float = 0.0) -> FLeader:
    """Exact maximiser of the criterion over f = w . b(x)."""
    feat = basis or LinearBasis(intercept=False)

    def lead(a_values: np.ndarray, functional: Any, dataset: Dataset) -> EvaluableFunction:
        prob = quadratic_problem(a_values, functional, dataset, feat, ridge)
        w, _ = solve_quadratic(prob)
        return linear_class_function(w, feat, dataset.dim)

    return lead


def ate_f_oracle(a_values: np.ndarray, dataset: Dataset, ridge: float = 0.0,
                 basis: Callable[[np.ndarray], np.ndarray] | None = None,
                 kernel: Any = None, column: int | None = None) -> EvaluableFunction:
    """Minimiser of E_n[f^2 + a f - f(1,w) + f(0,w)] (+ ridge penalty) over the class.

    The class is the RKHS of ``kernel`` when given, otherwise the span of
    ``basis`` (default: intercept plus all columns).
    """
    col = column if column is not None else (dataset.treatment if dataset.treatment is not None else 0)
    functional = ate(col)
    if kernel is not None:
        from .rkhs import build_kernel_blocks, inner_maximizer, rkhs_test_function

        k = kernel.resolved(dataset.x)
        blocks = build_kernel_blocks(dataset, k, functional)
        gamma = inner_maximizer(blocks, a_values, ridge)
        return rkhs_test_function(dataset.x, k, functional, gamma)
    feat = basis or LinearBasis()
    prob = quadratic_problem(a_values, functional, dataset, feat, ridge)
    w, _ = solve_quadratic(prob)
    return linear_class_function(w, feat, dataset.dim)


def stationarity_residual(a_values: np.ndarray, dataset: Dataset, functional: Any,
                          basis: Callable[[np.ndarray], np.ndarray], w: np.ndarray,
                          ridge: float = 0.0) -> float:
    """Max-abs gradient of the restricted criterion at w, relative to |c - h|."""
    prob = quadratic_problem(a_values, functional, dataset, basis, ridge)
    g = prob.gradient(np.asarray(w, dtype=np.float64))
    return float(np.max(np.abs(g)) / max(1.0, float(np.max(np.abs(prob.c - prob.h)))))


def linear_game_oracles(B: float, basis: Callable[[np.ndarray], np.ndarray] | None = None,
                        f_basis: Callable[[np.ndarray], np.ndarray] | None = None,
                        ridge: float = 0.0) -> PlayerOracle:
    """l1-ball linear representers against an unrestricted linear test class."""
    return PlayerOracle(l1_linear_oracle(B, basis), linear_f_oracle(f_basis, ridge),
                        a_bound=None, name="linear")
