"""Data-generating processes with known representers, and a Monte Carlo harness."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import expit

from .core import (
    STREAM_SAMPLE,
    STREAM_STRUCTURE,
    Dataset,
    EvaluableFunction,
    MomentFunctional,
    ate,
    rng_stream,
    shift_transport,
    thread_budget,
)
from .errors import ConfigurationError, DomainError, UnsupportedFunctionalError


@dataclass(frozen=True)
class FiniteSupport:
    """Finite distribution over x; probabilities are renormalised to sum to one."""

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        p = np.array(self.probs, dtype=np.float64)
        if pts.ndim != 2 or p.ndim != 1 or pts.shape[0] != p.shape[0]:
            raise ConfigurationError("support needs (k, dim) points and k probabilities")
        if np.any(p < 0) or p.sum() <= 0:
            raise ConfigurationError("probabilities must be non-negative with positive total")
        if len({tuple(r) for r in pts}) != pts.shape[0]:
            raise ConfigurationError("support points must be distinct")
        p = p / p.sum()
        pts.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", p)

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.probs, values))

    def lookup(self, values: np.ndarray, label: str = "table") -> EvaluableFunction:
        """Function defined only on the support points by a value table."""
        table = {tuple(r): float(v) for r, v in zip(self.points, values)}

        def fn(x: np.ndarray) -> np.ndarray:
            try:
                return np.array([table[tuple(r)] for r in x])
            except KeyError as exc:
                raise DomainError(f"point {exc.args[0]} is outside the finite support") from None

        return EvaluableFunction(fn, dim=self.points.shape[1], label=label)


@dataclass(frozen=True)
class SyntheticDGP:
    """Sampler with known regression g0, representer a0 and target theta0."""

    name: str
    sampler: Callable[[int, Any], Dataset]
    g0: EvaluableFunction
    a0: EvaluableFunction
    theta0: float
    functional: MomentFunctional
    support: FiniteSupport | None = None
    overlap: float | None = None
    info: dict[str, Any] = field(default_factory=dict)

    def sample(self, n: int, seed: int | Sequence[int] = 0) -> Dataset:
        return self.sampler(n, seed)

    @property
    def support_size(self) -> int | None:
        return self.info.get("support_size")


def _sample_rng(seed: int | Sequence[int]) -> np.random.Generator:
    return rng_stream(seed, STREAM_SAMPLE)


def _ate_representer(propensity: Callable[[np.ndarray], np.ndarray], dim: int) -> EvaluableFunction:
    def a0(x: np.ndarray) -> np.ndarray:
        d, pi = x[:, 0], propensity(x[:, 1:])
        return d / pi - (1 - d) / (1 - pi)

    return EvaluableFunction(a0, dim=dim, label="inverse-propensity")


def make_ate_dgp(dim: int = 3, sparsity: int | None = None, propensity_strength: float = 1.0,
                 noise_sd: float = 1.0, seed: int = 0, tau: float = 1.0,
                 overlap: float | None = None, nonlinearity: float = 1.0) -> SyntheticDGP:
    """Binary treatment with logistic propensity on uniform covariates.

    x = (d, w) with w ~ U[-1, 1]^dim.  The propensity index uses ``sparsity``
    covariates with weights summing to one in absolute value, so
    pi(w) lies in [expit(-s), expit(s)] for s = propensity_strength and the
    overlap constant is M = 1 + exp(s).  The regression is

        g0(d, w) = tau d + 0.5 d w_1 + gamma . w + nonlinearity * cos(pi w_1),

    whose treatment effect averages to exactly tau.
    """
    if dim < 1:
        raise ConfigurationError("dim must be at least 1")
    s = dim if sparsity is None else int(sparsity)
    if not 1 <= s <= dim:
        raise ConfigurationError(f"sparsity must be in [1, {dim}]")
    if propensity_strength < 0:
        raise ConfigurationError("propensity_strength must be non-negative")
    implied = 1.0 + math.exp(propensity_strength)
    if overlap is not None and implied > overlap:
        raise ConfigurationError(
            f"propensity in [{expit(-propensity_strength):.4f}, {expit(propensity_strength):.4f}] "
            f"violates the declared overlap M = {overlap}"
        )
    M = implied if overlap is None else float(overlap)
    rng = rng_stream(seed, STREAM_STRUCTURE)
    idx = np.sort(rng.choice(dim, size=s, replace=False))
    pweights = np.zeros(dim)
    pweights[idx] = rng.choice([-1.0, 1.0], size=s) / s
    gamma = rng.uniform(-1.0, 1.0, size=dim)
    strength = float(propensity_strength)

    def propensity(w: np.ndarray) -> np.ndarray:
        return expit(strength * (w @ pweights))

    def g0(x: np.ndarray) -> np.ndarray:
        d, w = x[:, 0], x[:, 1:]
        return tau * d + 0.5 * d * w[:, 0] + w @ gamma + nonlinearity * np.cos(np.pi * w[:, 0])

    def sampler(n: int, sample_seed: Any = 0) -> Dataset:
        r = _sample_rng(sample_seed)
        w = r.uniform(-1.0, 1.0, size=(n, dim))
        d = (r.uniform(size=n) < propensity(w)).astype(float)
        x = np.column_stack([d, w])
        y = g0(x) + noise_sd * r.standard_normal(n)
        return Dataset(y=y, x=x, treatment=0,
                       columns=("d",) + tuple(f"w{j + 1}" for j in range(dim)))

    return SyntheticDGP(
        name="ate", sampler=sampler, g0=EvaluableFunction(g0, dim=dim + 1, label="g0"),
        a0=_ate_representer(propensity, dim + 1), theta0=float(tau), functional=ate(0),
        overlap=M,
        info={"support_size": s, "propensity_support": idx.tolist(), "noise_sd": noise_sd,
              "propensity": propensity},
    )


def make_discrete_ate_dgp(w_values: np.ndarray, w_probs: Sequence[float],
                          propensity: Sequence[float],
                          g0: Callable[[np.ndarray], np.ndarray] | None = None,
                          noise_sd: float = 0.0) -> SyntheticDGP:
    """ATE design with finitely many covariate values, for exact expectations.

    The support of x = (d, w) enumerates w in the given order, d = 0 before d = 1.
    """
    wv = np.atleast_2d(np.asarray(w_values, dtype=np.float64))
    if wv.shape[0] == 1 and len(w_probs) > 1:
        wv = wv.T
    pw = np.asarray(w_probs, dtype=np.float64)
    pi = np.asarray(propensity, dtype=np.float64)
    k = wv.shape[0]
    if pw.shape != (k,) or pi.shape != (k,):
        raise ConfigurationError("need one probability and one propensity per covariate value")
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise ConfigurationError("propensities must lie strictly inside (0, 1)")
    pw = pw / pw.sum()
    q = wv.shape[1]
    g = g0 or (lambda x: x[:, 0] + x[:, 1:].sum(axis=1))
    points, probs = [], []
    for j in range(k):
        for d in (0.0, 1.0):
            points.append(np.concatenate([[d], wv[j]]))
            probs.append(pw[j] * (pi[j] if d else 1 - pi[j]))
    support = FiniteSupport(np.array(points), np.array(probs))
    table = {tuple(r): p for r, p in zip(wv, pi)}

    def prop(w: np.ndarray) -> np.ndarray:
        try:
            return np.array([table[tuple(r)] for r in w])
        except KeyError as exc:
            raise DomainError(f"covariate value {exc.args[0]} is outside the support") from None

    g_fn = EvaluableFunction(g, dim=q + 1, label="g0")
    theta0 = float(np.dot(pw, g(np.column_stack([np.ones(k), wv])) - g(np.column_stack([np.zeros(k), wv]))))

    def sampler(n: int, sample_seed: Any = 0) -> Dataset:
        r = _sample_rng(sample_seed)
        j = r.choice(k, size=n, p=pw)
        d = (r.uniform(size=n) < pi[j]).astype(float)
        x = np.column_stack([d, wv[j]])
        y = g(x) + noise_sd * r.standard_normal(n)
        return Dataset(y=y, x=x, treatment=0,
                       columns=("d",) + tuple(f"w{i + 1}" for i in range(q)))

    M = float(max(1 / pi.min(), 1 / (1 - pi.max())))
    return SyntheticDGP(name="discrete-ate", sampler=sampler, g0=g_fn, a0=_ate_representer(prop, q + 1),
                        theta0=theta0, functional=ate(0), support=support, overlap=M,
                        info={"support_size": None, "noise_sd": noise_sd})


def toeplitz_covariance(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def make_sparse_linear_dgp(p: int = 50, sparsity: int = 3, rho: float = 0.5, noise_sd: float = 1.0,
                           seed: int = 0) -> SyntheticDGP:
    """Gaussian design where the shift functional has a sparse linear representer.

    x ~ N(0, Sigma) with Sigma_ij = rho^|i-j|.  The representer coefficients
    theta have ``sparsity`` nonzeros, and the functional m(z; f) = f(x + u) - f(x)
    uses u = Sigma theta, so E[m(Z; f)] = E[(theta . X) f(X)] for every linear f.
    The outcome is linear with coefficients beta, so theta0 = beta . u.
    """
    if not 1 <= sparsity <= p:
        raise ConfigurationError(f"sparsity must be in [1, {p}]")
    rng = rng_stream(seed, STREAM_STRUCTURE)
    sigma = toeplitz_covariance(p, rho)
    chol = np.linalg.cholesky(sigma)
    theta = np.zeros(p)
    idx = np.sort(rng.choice(p, size=sparsity, replace=False))
    theta[idx] = rng.choice([-1.0, 1.0], size=sparsity) * rng.uniform(0.5, 1.0, size=sparsity)
    beta = np.zeros(p)
    bidx = rng.choice(p, size=min(p, 5), replace=False)
    beta[bidx] = rng.uniform(-1.0, 1.0, size=bidx.size)
    u = sigma @ theta
    theta.setflags(write=False)
    beta.setflags(write=False)

    def sampler(n: int, sample_seed: Any = 0) -> Dataset:
        r = _sample_rng(sample_seed)
        x = r.standard_normal((n, p)) @ chol.T
        y = x @ beta + noise_sd * r.standard_normal(n)
        return Dataset(y=y, x=x, columns=tuple(f"x{j + 1}" for j in range(p)))

    return SyntheticDGP(
        name="sparse-linear", sampler=sampler,
        g0=EvaluableFunction(lambda x: x @ beta, dim=p, label="g0"),
        a0=EvaluableFunction(lambda x: x @ theta, norm=float(np.abs(theta).sum()), dim=p, label="a0"),
        theta0=float(beta @ u), functional=shift_transport(u),
        info={"support_size": sparsity, "representer_coef": theta, "covariance": sigma,
              "regression_coef": beta, "offset": u},
    )


def representer_mse(dgp: SyntheticDGP, coef: np.ndarray) -> float:
    """Exact E[(a0(X) - coef . X)^2] for the sparse linear design."""
    if "covariance" not in dgp.info:
        raise UnsupportedFunctionalError("exact representer error needs a Gaussian linear design")
    diff = np.asarray(coef, dtype=np.float64) - dgp.info["representer_coef"]
    return float(diff @ dgp.info["covariance"] @ diff)


def make_iv_dgp(dim: int = 2, complier_share: float = 0.6, tau: float = 1.0, noise_sd: float = 1.0,
                instrument_strength: float = 0.5, seed: int = 0) -> SyntheticDGP:
    """Binary instrument with one-sided and two-sided noncompliance.

    x = (z, w); the realised treatment is stored in ``extras['d']``.  Units are
    compliers, always-takers or never-takers (the latter two split the
    remaining mass evenly), and untreated outcomes depend on the type, so
    naive comparisons are confounded.  The treatment effect is tau for every
    unit, so the local effect among compliers is tau.  The ATE functional on the
    instrument column has the instrument's inverse-propensity representer.
    """
    if not 0 < complier_share <= 1:
        raise ConfigurationError("complier_share must be in (0, 1]")
    rng = rng_stream(seed, STREAM_STRUCTURE)
    gamma = rng.uniform(-1.0, 1.0, size=dim)
    strength = float(instrument_strength)
    other = 0.5 * (1.0 - complier_share)

    def propensity(w: np.ndarray) -> np.ndarray:
        return expit(strength * w[:, 0])

    def sampler(n: int, sample_seed: Any = 0) -> Dataset:
        r = _sample_rng(sample_seed)
        w = r.uniform(-1.0, 1.0, size=(n, dim))
        z = (r.uniform(size=n) < propensity(w)).astype(float)
        kind = r.choice(3, size=n, p=[complier_share, other, other])
        d = np.where(kind == 0, z, np.where(kind == 1, 1.0, 0.0))
        y = tau * d + w @ gamma + 0.8 * (kind == 1) - 0.8 * (kind == 2) + noise_sd * r.standard_normal(n)
        x = np.column_stack([z, w])
        return Dataset(y=y, x=x, instrument=0, extras={"d": d},
                       columns=("z",) + tuple(f"w{j + 1}" for j in range(dim)))

    def g0(x: np.ndarray) -> np.ndarray:
        z, w = x[:, 0], x[:, 1:]
        return tau * (complier_share * z + other) + w @ gamma

    return SyntheticDGP(name="iv", sampler=sampler, g0=EvaluableFunction(g0, dim=dim + 1, label="g0"),
                        a0=_ate_representer(propensity, dim + 1), theta0=float(tau), functional=ate(0),
                        overlap=1.0 + math.exp(strength),
                        info={"support_size": 1, "complier_share": complier_share})


# --------------------------------------------------------------------------
# exact population quantities on finite support
# --------------------------------------------------------------------------


def _require_support(dgp: SyntheticDGP) -> FiniteSupport:
    if dgp.support is None:
        raise UnsupportedFunctionalError(f"DGP {dgp.name!r} has no finite support")
    return dgp.support


def population_moment(dgp: SyntheticDGP, f: EvaluableFunction) -> float:
    """Exact E[m(Z; f)] by enumeration of the support."""
    sup = _require_support(dgp)
    return sup.expect(dgp.functional.evaluate(sup.points, f))


def population_criterion(dgp: SyntheticDGP, a: EvaluableFunction) -> float:
    """max over pointwise f of E[m(Z;f) - a f - f^2], attained at f = (a0 - a) / 2."""
    sup = _require_support(dgp)
    gap = dgp.a0.values(sup.points) - a.values(sup.points)
    f_vals = 0.5 * gap
    f = sup.lookup(f_vals, label="maximiser")
    av = a.values(sup.points)
    return population_moment(dgp, f) - sup.expect(av * f_vals) - sup.expect(f_vals * f_vals)


# --------------------------------------------------------------------------
# Monte Carlo harness
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloSummary:
    theta0: float
    n: int
    replications: int
    bias: float
    median_bias: float
    rmse: float
    coverage: float
    mean_ci_width: float
    plug_in_bias: float | None
    plug_in_median_bias: float | None
    failures: int
    records: tuple[dict[str, Any], ...]

    def to_dict(self, include_records: bool = False) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in (
            "theta0", "n", "replications", "bias", "median_bias", "rmse", "coverage",
            "mean_ci_width", "plug_in_bias", "plug_in_median_bias", "failures")}
        if include_records:
            out["records"] = [dict(r) for r in self.records]
        return out


def _field(result: Any, name: str) -> Any:
    if isinstance(result, dict):
        return result.get(name)
    return getattr(result, name, None)


def monte_carlo(dgp: SyntheticDGP, estimator: Callable[[Dataset, tuple[int, ...]], Any],
                replications: int, n: int, seed: int = 0,
                threads: int | None = None) -> MonteCarloSummary:
    """Run ``estimator(dataset, stream_key)`` on independent samples.

    Replicate r samples from stream (seed, r); the estimator receives the key
    (seed, r) to derive its own fold streams.  Results may carry theta_hat,
    se, ci and plug_in as attributes or dict keys.  Failures are recorded,
    excluded from the summary and counted.
    """
    if replications < 1:
        raise ConfigurationError("replications must be at least 1")

    def one(r: int) -> dict[str, Any]:
        key = (int(seed), r)
        try:
            ds = dgp.sample(n, key)
            res = estimator(ds, key)
        except Exception as exc:  # noqa: BLE001 - failures are part of the record
            return {"replicate": r, "failed": True, "error": f"{type(exc).__name__}: {exc}"}
        th = float(_field(res, "theta_hat"))
        ci = _field(res, "ci")
        rec = {"replicate": r, "failed": False, "theta_hat": th,
               "se": None if _field(res, "se") is None else float(_field(res, "se"))}
        if ci is not None:
            lo, hi = float(ci[0]), float(ci[1])
            rec.update(ci_lo=lo, ci_hi=hi, covered=bool(lo <= dgp.theta0 <= hi))
        pi = _field(res, "plug_in")
        if pi is not None:
            rec["plug_in"] = float(pi)
        return rec

    workers = min(thread_budget(threads), replications)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(replications)))
    else:
        records = [one(r) for r in range(replications)]

    ok = [r for r in records if not r["failed"]]
    th0 = dgp.theta0
    nan = float("nan")
    if ok:
        err = np.array([r["theta_hat"] - th0 for r in ok])
        bias, med, rmse = float(err.mean()), float(np.median(err)), float(np.sqrt(np.mean(err**2)))
        with_ci = [r for r in ok if "covered" in r]
        coverage = float(np.mean([r["covered"] for r in with_ci])) if with_ci else nan
        width = float(np.mean([r["ci_hi"] - r["ci_lo"] for r in with_ci])) if with_ci else nan
        pl = [r["plug_in"] - th0 for r in ok if "plug_in" in r]
        pbias = float(np.mean(pl)) if pl else None
        pmed = float(np.median(pl)) if pl else None
    else:
        bias = med = rmse = coverage = width = nan
        pbias = pmed = None
    return MonteCarloSummary(th0, n, replications, bias, med, rmse, coverage, width, pbias, pmed,
                             len(records) - len(ok), tuple(records))


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------


def export_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    """Write outcome, x columns and extras with a header; floats round-trip exactly."""
    header = [dataset.outcome_name, *dataset.columns, *sorted(dataset.extras)]
    cols = [dataset.y, *dataset.x.T, *[dataset.extras[k] for k in sorted(dataset.extras)]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def export_records_csv(summary: MonteCarloSummary, path: str | os.PathLike) -> None:
    """Per-replicate series for plotting."""
    keys = ["replicate", "failed", "theta_hat", "se", "ci_lo", "ci_hi", "covered", "plug_in", "error"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        writer.writeheader()
        for rec in summary.records:
            writer.writerow({k: rec.get(k, "") for k in keys})
