"""l1-penalised adversarial estimator over (sparse) linear functions.

The estimator solves

    min_{||theta||_1 <= B}  max_{i in [2p]}  E_n[m(Z; f_i) - f_i(X) <theta, X>] + lam ||theta||_1

with test functions f_i = +x_i (i < p) and f_i = -x_{i-p}.  The primary
solver plays optimistic FTRL with an entropic regulariser for the theta-player
(over the scaled positive orthant rho = (rho+, rho-)) against optimistic Hedge
for the test-function player.  The duality gap of a candidate is certified
exactly: the inner max is a finite max and the outer minimum is a linear
program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .core import Dataset, EvaluableFunction, MomentFunctional, RieszEstimate, empirical_moment
from .errors import ConfigurationError, DataError, NumericError

FeatureMap = Callable[[np.ndarray], np.ndarray]

_FEAS_TOL = 1e-12


@dataclass(frozen=True)
class SparseGame:
    """Data of the zero-sum game: augmented design, its second moment and the
    moments of the 2p signed coordinate test functions."""

    V: np.ndarray
    gram: np.ndarray
    moment_vec: np.ndarray
    B: float
    lam: float
    features: FeatureMap | None = None

    @property
    def p(self) -> int:
        return self.moment_vec.shape[0] // 2

    @property
    def gram_inf(self) -> float:
        """max_ij |E_n[V V^T]_ij|."""
        return float(np.max(np.abs(self.gram))) if self.gram.size else 0.0

    @property
    def second_moment(self) -> np.ndarray:
        """E_n[X X^T] (the upper-left p x p block of the gram)."""
        return self.gram[: self.p, : self.p]

    @property
    def coordinate_moments(self) -> np.ndarray:
        return self.moment_vec[: self.p]


@dataclass(frozen=True)
class GameIterate:
    rho: np.ndarray
    w: np.ndarray
    t: int


@dataclass
class SparseSolution:
    theta: np.ndarray
    gap: float
    objective: float
    trace: list[dict[str, float]] = field(default_factory=list)
    rho_bar: np.ndarray | None = None
    w_bar: np.ndarray | None = None
    eta: float | None = None
    T: int = 0


def _design(dataset: Dataset, features: FeatureMap | None) -> np.ndarray:
    x = dataset.x if features is None else np.asarray(features(dataset.x), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != dataset.n:
        raise DataError(f"feature map returned shape {x.shape} for {dataset.n} rows")
    return x


def coordinate_probe(i: int, sign: float = 1.0, features: FeatureMap | None = None,
                     dim: int | None = None) -> EvaluableFunction:
    if features is None:
        return EvaluableFunction(lambda x: sign * x[:, i], dim=dim, label=f"{'+' if sign > 0 else '-'}x{i}")
    return EvaluableFunction(lambda x: sign * np.asarray(features(x))[:, i], dim=dim,
                             label=f"{'+' if sign > 0 else '-'}b{i}")


def build_game(
    dataset: Dataset,
    functional: MomentFunctional,
    B: float,
    lam: float,
    features: FeatureMap | None = None,
) -> SparseGame:
    """Assemble V = (X; -X), E_n[V V^T] and the signed coordinate moments.

    ``features`` optionally maps raw inputs to a dictionary b(x); the linear
    class is then x -> <theta, b(x)>.  ``functional`` may be any object with a
    ``mean_over(dataset, f)`` method.
    """
    if not B > 0:
        raise ConfigurationError("the l1 radius B must be positive")
    if lam < 0:
        raise ConfigurationError("lam must be non-negative")
    X = _design(dataset, features)
    n, p = X.shape
    if p < 1:
        raise DataError("need at least one feature")
    V = np.hstack([X, -X])
    gram = V.T @ V / n
    c = np.array([empirical_moment(functional, dataset, coordinate_probe(i, 1.0, features, dataset.dim))
                  for i in range(p)])
    moment_vec = np.concatenate([c, -c])
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(moment_vec))):
        raise DataError("game contains non-finite entries")
    for arr in (V, gram, moment_vec):
        arr.setflags(write=False)
    return SparseGame(V=V, gram=gram, moment_vec=moment_vec, B=float(B), lam=float(lam),
                      features=features)


def theta_to_rho(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return np.concatenate([np.maximum(theta, 0.0), np.maximum(-theta, 0.0)])


def inner_max(theta: np.ndarray, game: SparseGame) -> tuple[float, int]:
    """Exact best response value over the 2p test functions and its index.

    Ties go to the lowest index.
    """
    payoff = game.moment_vec - game.gram @ theta_to_rho(theta)
    i = int(np.argmax(payoff))
    return float(payoff[i]), i


def objective(theta: np.ndarray, game: SparseGame) -> float:
    """max_i E_n[m(Z;f_i) - f_i(X)<theta,X>] + lam ||theta||_1."""
    value, _ = inner_max(theta, game)
    return value + game.lam * float(np.abs(theta).sum())


def minimax_value(game: SparseGame) -> tuple[float, np.ndarray]:
    """Exact minimum of :func:`objective` over the l1 ball (linear program).

    Variables are (theta+, theta-, s); the objective is s + lam 1'(theta+ + theta-)
    subject to |c - S theta|_inf <= s and 1'(theta+ + theta-) <= B.
    """
    p = game.p
    S = game.second_moment
    c = game.coordinate_moments
    cost = np.concatenate([np.full(2 * p, game.lam), [1.0]])
    ones = np.ones((p, 1))
    # c - S(tp - tm) <= s   and   -(c - S(tp - tm)) <= s
    A = np.vstack([
        np.hstack([-S, S, -ones]),
        np.hstack([S, -S, -ones]),
        np.concatenate([np.ones(2 * p), [0.0]])[None, :],
    ])
    b = np.concatenate([-c, c, [game.B]])
    bounds = [(0, None)] * (2 * p) + [(None, None)]
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise NumericError(f"reference linear program failed: {res.message}")
    theta = res.x[:p] - res.x[p: 2 * p]
    return objective(theta, game), theta


def duality_gap(theta: np.ndarray, game: SparseGame, reference: float | None = None) -> float:
    """objective(theta) minus the exact minimax value (clipped at 0)."""
    if reference is None:
        reference, _ = minimax_value(game)
    return max(0.0, objective(theta, game) - reference)


def auto_step_size(game: SparseGame) -> float:
    g = game.gram_inf
    return 1.0 / (4.0 * g) if g > 0 else 1.0


def gap_bound(game: SparseGame, T: int) -> float:
    """epsilon(T) = 16 ||E_n VV'||_inf (4 B^2 log(B v 1) + (B+1) log 2p) / T."""
    B = game.B
    return 16.0 * game.gram_inf * (4 * B * B * math.log(max(B, 1.0))
                                   + (B + 1) * math.log(2 * game.p)) / T


def prescribed_iterations(game: SparseGame, eps: float) -> int:
    """Number of iterations after which the averaged iterate is eps-optimal."""
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    return max(1, math.ceil(gap_bound(game, 1) / eps))


def _project_log(log_rho: np.ndarray, log_B: float) -> np.ndarray:
    log_s = logsumexp(log_rho)
    if log_s > log_B:
        return np.exp(log_rho - log_s + log_B)
    return np.exp(log_rho)


def _check_feasible(rho: np.ndarray, w: np.ndarray, B: float, t: int) -> None:
    if np.any(rho < 0) or rho.sum() > B * (1 + 1e-12) + _FEAS_TOL:
        raise NumericError(f"rho left the scaled simplex at iteration {t}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > _FEAS_TOL:
        raise NumericError(f"w left the probability simplex at iteration {t}")


def oftrl_solve(
    game: SparseGame,
    T: int,
    eta: float | str = "auto",
    check_every_step: bool = True,
    n_checkpoints: int = 20,
    certify: bool = True,
) -> SparseSolution:
    """Optimistic FTRL / optimistic Hedge self-play; returns the averaged theta.

    The multiplicative updates are carried out on log-weights: the
    theta-player's unprojected weights start at 1/e and are rescaled onto
    ||rho||_1 <= B after every step, the adversary starts uniform on the
    2p-simplex.  Both players use the optimistic gradient 2 g_t - g_{t-1}.
    The returned ``gap`` is the exact duality gap of the average.
    """
    if not isinstance(T, (int, np.integer)) or T <= 0:
        raise NumericError("T must be a positive integer")
    step = auto_step_size(game) if eta == "auto" else float(eta)
    if not step > 0:
        raise ConfigurationError("eta must be positive")
    G = np.asarray(game.gram)
    m = np.asarray(game.moment_vec)
    lam, B = game.lam, game.B
    p2 = m.shape[0]
    log_B = math.log(B)
    scale = step / B

    log_rho = np.full(p2, -1.0)
    rho = _project_log(log_rho, log_B)
    log_w = np.full(p2, -math.log(p2))
    w = np.exp(log_w)
    g_prev = -(G @ w) + lam
    u_prev = m - G @ rho

    rho_sum = np.zeros(p2)
    w_sum = np.zeros(p2)
    checkpoints = set(np.unique(np.geomspace(1, T, num=min(n_checkpoints, T)).astype(int)).tolist())
    trace: list[dict[str, float]] = []
    for t in range(1, T + 1):
        g = -(G @ w) + lam
        u = m - G @ rho
        log_rho = log_rho - 2.0 * scale * g + scale * g_prev
        log_w = log_w + 2.0 * step * u - step * u_prev
        log_w = log_w - logsumexp(log_w)
        g_prev, u_prev = g, u
        rho = _project_log(log_rho, log_B)
        w = np.exp(log_w)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(w))):
            raise NumericError(f"non-finite iterate at t = {t}")
        if check_every_step:
            _check_feasible(rho, w, B, t)
        rho_sum += rho
        w_sum += w
        if t in checkpoints:
            avg = rho_sum / t
            theta_avg = avg[: p2 // 2] - avg[p2 // 2:]
            trace.append({"t": float(t), "rho_l1": float(rho.sum()), "w_max": float(w.max()),
                          "objective_avg": objective(theta_avg, game)})

    rho_bar = rho_sum / T
    w_bar = w_sum / T
    theta = rho_bar[: p2 // 2] - rho_bar[p2 // 2:]
    obj = objective(theta, game)
    gap = duality_gap(theta, game) if certify else float("nan")
    return SparseSolution(theta=theta, gap=gap, objective=obj, trace=trace, rho_bar=rho_bar,
                          w_bar=w_bar, eta=step, T=int(T))


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {x : ||x||_1 <= radius} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    if np.abs(v).sum() <= radius:
        return v.copy()
    u = np.sort(np.abs(v))[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    tau = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def subgradient_solve(
    game: SparseGame,
    T: int,
    step: float | Callable[[int], float] | None = None,
    certify: bool = True,
) -> SparseSolution:
    """Projected sub-gradient descent on the max-of-linear objective.

    ``step`` is a constant base step c (the schedule is c / sqrt(t)) or a
    callable t -> step.  The best iterate by objective value is returned.
    """
    if T <= 0:
        raise NumericError("T must be a positive integer")
    p = game.p
    S = game.second_moment
    c = game.coordinate_moments
    lam, B = game.lam, game.B
    if step is None:
        lip = float(np.max(np.linalg.norm(S, axis=1))) + lam * math.sqrt(p)
        base = B / lip if lip > 0 else 1.0
        schedule: Callable[[int], float] = lambda t: base / math.sqrt(t)
    elif callable(step):
        schedule = step
    else:
        base = float(step)
        schedule = lambda t: base / math.sqrt(t)

    theta = np.zeros(p)
    best_theta, best_obj = theta.copy(), objective(theta, game)
    trace: list[dict[str, float]] = []
    for t in range(1, T + 1):
        resid = c - S @ theta
        signed = np.concatenate([resid, -resid])
        i = int(np.argmax(signed))
        j, sgn = (i, 1.0) if i < p else (i - p, -1.0)
        grad = -sgn * S[j] + lam * np.sign(theta)
        theta = project_l1_ball(theta - schedule(t) * grad, B)
        val = objective(theta, game)
        if val < best_obj:
            best_obj, best_theta = val, theta.copy()
    if T >= 1:
        trace.append({"t": float(T), "objective_best": best_obj})
    gap = duality_gap(best_theta, game) if certify else float("nan")
    return SparseSolution(theta=best_theta, gap=gap, objective=best_obj, trace=trace, T=int(T))


def default_lambda(n: int, p: int) -> float:
    """sqrt(log(2p) / n), the scale of the critical radius for l1 balls."""
    return math.sqrt(math.log(2 * p) / n)


def fit_sparse_riesz(
    dataset: Dataset,
    functional: MomentFunctional,
    B: float,
    lam: float | None = None,
    T: int | None = None,
    eta: float | str = "auto",
    features: FeatureMap | None = None,
    solver: str = "oftrl",
    eps: float = 1e-3,
    max_iter: int = 200_000,
    certify: bool = True,
) -> RieszEstimate:
    """Fit a sparse linear representer a(x) = <theta, b(x)>.

    Without an explicit ``T`` the iteration count is the prescribed bound for
    accuracy ``eps``, capped at ``max_iter``.
    """
    X = _design(dataset, features)
    if lam is None:
        lam = default_lambda(dataset.n, X.shape[1])
    game = build_game(dataset, functional, B, lam, features)
    if T is None:
        T = min(prescribed_iterations(game, eps), max_iter)
    if solver == "oftrl":
        sol = oftrl_solve(game, T, eta, check_every_step=False, certify=certify)
    elif solver == "subgradient":
        sol = subgradient_solve(game, T, certify=certify)
    else:
        raise ConfigurationError(f"unknown sparse solver {solver!r}")
    theta = sol.theta.copy()
    theta.setflags(write=False)
    if features is None:
        fn = lambda x: x @ theta
    else:
        fn = lambda x: np.asarray(features(x)) @ theta
    function = EvaluableFunction(fn, norm=float(np.abs(theta).sum()), dim=dataset.dim,
                                 label="sparse-linear")
    diagnostics: dict[str, Any] = {
        "duality_gap": sol.gap,
        "gap_bound": gap_bound(game, T),
        "criterion": sol.objective,
        "l1_norm": float(np.abs(theta).sum()),
        "support_size": int(np.count_nonzero(np.abs(theta) > 1e-8)),
        "T": int(T),
        "eta": sol.eta,
        "lam": lam,
        "B": B,
        "solver": solver,
        "trace": list(sol.trace),
    }
    return RieszEstimate(function=function, backend="sparse", coefficients=theta,
                         diagnostics=diagnostics)


def sparse_riesz_learner(functional: MomentFunctional, B: float, **kwargs: Any
                         ) -> Callable[[Dataset], RieszEstimate]:
    return lambda data: fit_sparse_riesz(data, functional, B, **kwargs)


__all__: Sequence[str] = [
    "SparseGame", "GameIterate", "SparseSolution", "build_game", "oftrl_solve", "duality_gap",
    "subgradient_solve", "objective", "inner_max", "minimax_value", "gap_bound",
    "prescribed_iterations", "project_l1_ball", "fit_sparse_riesz", "default_lambda",
]
