"""Datasets, linear moment functionals and the adversarial criterion.

A moment functional is stored as a finite signed combination of point
evaluations,

    m(z; f) = sum_l  c_l(z) * f(t_l(x)),

which covers treatment effects, policy effects, covariate transport and the
cross effect.  Every solver backend consumes this representation.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Mapping, NamedTuple, Sequence, Union

import numpy as np

from .errors import ConfigurationError, DataError, DomainError

ArrayFn = Callable[[np.ndarray], np.ndarray]
WeightFn = Callable[[np.ndarray, Union[np.ndarray, None]], np.ndarray]


def _frozen(a: Any, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.flatnonzero(~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1))
        raise DataError(f"{name} has missing or non-finite values in rows {bad.tolist()}")
    arr.setflags(write=False)
    return arr


class Sample(NamedTuple):
    """One row of a :class:`Dataset`."""

    x: np.ndarray
    y: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Read-only table of outcomes ``y`` and estimator inputs ``x``.

    For treatment problems column ``treatment`` of ``x`` (0 by default) holds
    the binary treatment and the remaining columns are covariates.  ``extras``
    carries additional per-row arrays, e.g. the realised treatment in an
    instrumental-variable design where ``x`` starts with the instrument.
    """

    y: np.ndarray
    x: np.ndarray
    treatment: int | None = None
    instrument: int | None = None
    columns: tuple[str, ...] | None = None
    outcome_name: str = "y"
    extras: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        y = _frozen(self.y, 1, "y")
        x = _frozen(self.x, 2, "x")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        if y.shape[0] < 2:
            raise DataError("a dataset needs at least 2 samples")
        for name, col in (("treatment", self.treatment), ("instrument", self.instrument)):
            if col is not None and not 0 <= col < x.shape[1]:
                raise DataError(f"{name} column {col} out of range for {x.shape[1]} columns")
        if self.treatment is not None:
            d = x[:, self.treatment]
            bad = np.flatnonzero((d != 0.0) & (d != 1.0))
            if bad.size:
                raise DataError(f"treatment column must be 0/1; offending rows {bad.tolist()}")
        columns = self.columns
        if columns is None:
            columns = tuple(f"x{j}" for j in range(x.shape[1]))
        elif len(columns) != x.shape[1]:
            raise DataError(f"{len(columns)} column names for {x.shape[1]} columns")
        extras = {}
        for key, val in dict(self.extras).items():
            arr = _frozen(val, 1, f"extras[{key!r}]")
            if arr.shape[0] != y.shape[0]:
                raise DataError(f"extras[{key!r}] has {arr.shape[0]} rows, expected {y.shape[0]}")
            extras[key] = arr
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "columns", tuple(columns))
        object.__setattr__(self, "extras", MappingProxyType(extras))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def row(self, i: int) -> Sample:
        return Sample(self.x[i], float(self.y[i]))

    def subset(self, index: Sequence[int] | np.ndarray) -> "Dataset":
        """Return the rows ``index`` as a new dataset with the same metadata."""
        idx = np.asarray(index, dtype=np.intp)
        return Dataset(
            y=self.y[idx],
            x=self.x[idx],
            treatment=self.treatment,
            instrument=self.instrument,
            columns=self.columns,
            outcome_name=self.outcome_name,
            extras={k: v[idx] for k, v in self.extras.items()},
        )

    def with_outcome(self, y: np.ndarray, name: str = "y") -> "Dataset":
        return Dataset(
            y=y,
            x=self.x,
            treatment=self.treatment,
            instrument=self.instrument,
            columns=self.columns,
            outcome_name=name,
            extras=dict(self.extras),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.y, self.x, *[self.extras[k] for k in sorted(self.extras)]):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.treatment, self.instrument, self.columns)).encode())
        return h.hexdigest()[:16]

    def ranges(self) -> dict[str, tuple[float, float]]:
        """Observed (min, max) per column; reported, never used to rescale."""
        out = {self.outcome_name: (float(self.y.min()), float(self.y.max()))}
        for j, name in enumerate(self.columns):
            out[name] = (float(self.x[:, j].min()), float(self.x[:, j].max()))
        return out


@dataclass(frozen=True)
class EvaluableFunction:
    """Deterministic map from points in R^dim to reals.

    ``fn`` is vectorised: it receives an ``(m, dim)`` array and returns ``m``
    values.  ``norm`` is an optional norm report (l1 norm of coefficients or
    RKHS norm) used by the penalised criterion.
    """

    fn: ArrayFn
    norm: float | None = None
    dim: int | None = None
    label: str = ""

    def values(self, x: np.ndarray) -> np.ndarray:
        pts = np.asarray(x, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        if self.dim is not None and pts.shape[1] != self.dim:
            raise DomainError(f"function expects dimension {self.dim}, got {pts.shape[1]}")
        out = np.asarray(self.fn(pts), dtype=np.float64).reshape(-1)
        if out.shape[0] != pts.shape[0]:
            raise DomainError(f"function returned {out.shape[0]} values for {pts.shape[0]} points")
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        out = self.values(x)
        return float(out[0]) if x.ndim == 1 else out


def constant(c: float, dim: int | None = None) -> EvaluableFunction:
    return EvaluableFunction(lambda x: np.full(x.shape[0], float(c)), norm=abs(c), dim=dim,
                             label=f"const({c})")


def linear(coef: np.ndarray, intercept: float = 0.0) -> EvaluableFunction:
    """x -> x @ coef + intercept, reporting the l1 norm of ``coef``."""
    coef = np.array(coef, dtype=np.float64)
    coef.setflags(write=False)
    return EvaluableFunction(lambda x: x @ coef + intercept, norm=float(np.abs(coef).sum()),
                             dim=coef.shape[0], label="linear")


def combine(coefs: Sequence[float], fns: Sequence[EvaluableFunction]) -> EvaluableFunction:
    """Pointwise linear combination sum_k coefs[k] * fns[k](x)."""
    coefs = [float(c) for c in coefs]
    fns = list(fns)
    dims = {f.dim for f in fns if f.dim is not None}
    if len(dims) > 1:
        raise DomainError(f"cannot combine functions of dimensions {sorted(dims)}")

    def fn(x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[0])
        for c, f in zip(coefs, fns):
            out += c * f.values(x)
        return out

    return EvaluableFunction(fn, dim=dims.pop() if dims else None, label="combination")


@dataclass(frozen=True)
class RieszEstimate:
    """Fitted representer together with backend coefficients and diagnostics."""

    function: EvaluableFunction
    backend: str
    coefficients: np.ndarray
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray | float:
        return self.function(x)

    def values(self, x: np.ndarray) -> np.ndarray:
        return self.function.values(x)


# --------------------------------------------------------------------------
# moment functionals
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SetColumn:
    """Transform that overwrites one column with a constant, e.g. x -> (1, w)."""

    column: int
    value: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=np.float64, copy=True)
        out[:, self.column] = self.value
        return out


@dataclass(frozen=True)
class Shift:
    """Transform x -> x + offset."""

    offset: tuple[float, ...]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x + np.asarray(self.offset)


@dataclass(frozen=True)
class ColumnWeight:
    """Weight equal to one column of x, optionally affinely mapped: a + b * x_j."""

    column: int
    scale: float = 1.0
    offset: float = 0.0

    def __call__(self, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        return self.offset + self.scale * x[:, self.column]


@dataclass(frozen=True)
class Term:
    """One signed point evaluation ``weight(z) * f(transform(x))``.

    ``weight`` is a constant or a callable ``(x, y) -> (n,)``; a callable
    marked ``uses_outcome`` depends on the outcome and cannot be folded into
    kernel blocks.  ``transform=None`` means the identity.
    """

    weight: float | WeightFn
    transform: ArrayFn | None = None
    uses_outcome: bool = False

    def weights(self, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        if callable(self.weight):
            return np.asarray(self.weight(x, y), dtype=np.float64).reshape(-1)
        return np.full(x.shape[0], float(self.weight))

    def points(self, x: np.ndarray) -> np.ndarray:
        if self.transform is None:
            return x
        pts = np.asarray(self.transform(x), dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        return pts


@dataclass(frozen=True)
class MomentFunctional:
    """m(z; f) = sum over terms of weight(z) * f(transform(x)); linear in f."""

    terms: tuple[Term, ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def outcome_free(self) -> bool:
        return not any(t.uses_outcome for t in self.terms)

    def evaluate(self, x: np.ndarray, f: EvaluableFunction, y: np.ndarray | None = None) -> np.ndarray:
        """Per-row values m(z_i; f) for the rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(x.shape[0])
        for term in self.terms:
            w = term.weights(x, y)
            pts = term.points(x)
            if pts.shape[0] != x.shape[0]:
                raise DomainError("transform changed the number of rows")
            out += w * f.values(pts)
        return out

    def mean_over(self, dataset: Dataset, f: EvaluableFunction) -> float:
        return float(np.mean(self.evaluate(dataset.x, f, dataset.y)))

    def scores(self, dataset: Dataset, f: EvaluableFunction) -> np.ndarray:
        return self.evaluate(dataset.x, f, dataset.y)


def ate(column: int = 0) -> MomentFunctional:
    """Average treatment effect: m(z; f) = f(1, w) - f(0, w)."""
    return MomentFunctional(
        (Term(1.0, SetColumn(column, 1.0)), Term(-1.0, SetColumn(column, 0.0))), name="ate"
    )


def cross_effect(column: int = 0) -> MomentFunctional:
    """Cross effect: m(z; f) = d * f(0, w)."""
    return MomentFunctional((Term(ColumnWeight(column), SetColumn(column, 0.0)),), name="cross")


def transport(transform: ArrayFn) -> MomentFunctional:
    """Policy effect of moving covariates: m(z; f) = f(t(x)) - f(x)."""
    return MomentFunctional((Term(1.0, transform), Term(-1.0, None)), name="transport")


def shift_transport(offset: Sequence[float]) -> MomentFunctional:
    return transport(Shift(tuple(float(v) for v in offset)))


def policy_effect(new_policy: ArrayFn, base_policy: ArrayFn) -> MomentFunctional:
    """Average policy effect of two covariate policies: f(pi_1(x)) - f(pi_0(x))."""
    return MomentFunctional((Term(1.0, new_policy), Term(-1.0, base_policy)), name="apol")


def zero_functional() -> MomentFunctional:
    return MomentFunctional((Term(0.0, None),), name="zero")


FUNCTIONALS: dict[str, Callable[..., MomentFunctional]] = {
    "ate": ate,
    "cross": cross_effect,
    "transport": shift_transport,
}


def make_functional(name: str, **kwargs: Any) -> MomentFunctional:
    try:
        factory = FUNCTIONALS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown functional {name!r}; choose from {sorted(FUNCTIONALS)}"
        ) from None
    return factory(**kwargs)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def apply_moment(functional: MomentFunctional, sample: Sample, f: EvaluableFunction) -> float:
    """m(z; f) for a single sample."""
    x = np.asarray(sample.x, dtype=np.float64)[None, :]
    return float(functional.evaluate(x, f, np.array([sample.y]))[0])


def empirical_moment(functional: MomentFunctional, dataset: Dataset, f: EvaluableFunction) -> float:
    """E_n[m(Z; f)]."""
    return functional.mean_over(dataset, f)


def empirical_norm(f: EvaluableFunction, dataset: Dataset) -> float:
    """||f||_{2,n} with the 1/n convention."""
    v = f.values(dataset.x)
    return float(np.sqrt(np.mean(v * v)))


def adversarial_criterion(
    a: EvaluableFunction,
    f: EvaluableFunction,
    dataset: Dataset,
    functional: MomentFunctional,
    lam: float = 0.0,
    mu: float = 0.0,
) -> float:
    """E_n[m(Z;f) - a(X) f(X)] - ||f||_{2,n}^2 - lam ||f||^2 + mu ||a||^2."""
    if lam < 0 or mu < 0:
        raise ConfigurationError("penalties must be non-negative")
    if lam > 0 and f.norm is None:
        raise ConfigurationError("lam > 0 requires a norm report on the test function")
    if mu > 0 and a.norm is None:
        raise ConfigurationError("mu > 0 requires a norm report on the representer")
    fv = f.values(dataset.x)
    av = a.values(dataset.x)
    value = functional.mean_over(dataset, f) - np.mean(av * fv) - np.mean(fv * fv)
    if lam > 0:
        value -= lam * f.norm**2
    if mu > 0:
        value += mu * a.norm**2
    return float(value)


def estimate_continuity_constant(
    functional: MomentFunctional, dataset: Dataset, probe_fns: Sequence[EvaluableFunction]
) -> float:
    """Empirical lower bound on the mean-squared continuity constant M.

    Returns max over probes of sqrt(E_n[m(Z;f)^2]) / ||f||_{2,n}.
    """
    if not probe_fns:
        raise ConfigurationError("at least one probe function is required")
    best = 0.0
    for f in probe_fns:
        denom = empirical_norm(f, dataset)
        if denom <= 0:
            raise ConfigurationError("probe functions must have positive empirical norm")
        m = functional.scores(dataset, f)
        best = max(best, float(np.sqrt(np.mean(m * m))) / denom)
    return best


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

# stream purposes, used as the first spawn key
STREAM_SAMPLE = 0
STREAM_FOLDS = 1
STREAM_STRUCTURE = 2


def rng_stream(seed: int | Sequence[int], *keys: int) -> np.random.Generator:
    """Counter-based Philox generator for the stream ``keys`` under ``seed``.

    Streams are addressed by integer keys such as (purpose, replicate, fold),
    so results do not depend on the order in which work is scheduled.
    """
    entropy = int(seed) if np.ndim(seed) == 0 else [int(s) for s in seed]
    ss = np.random.SeedSequence(entropy, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


THREADS_ENV = "ADVERSARIAL_RIESZ_THREADS"


def thread_budget(requested: int | None = None) -> int:
    """Worker threads: explicit request, else the environment variable, else all cores."""
    if requested is not None:
        if requested < 1:
            raise ConfigurationError("thread budget must be at least 1")
        return int(requested)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if value < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be at least 1")
        return value
    return os.cpu_count() or 1
