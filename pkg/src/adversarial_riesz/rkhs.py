"""Closed-form RKHS saddle point of the adversarial Riesz criterion.

Notation.  phi(x) = k(x, .) is the feature map and, for a point-evaluation
functional m(x; f) = sum_l c_l(x) f(t_l(x)), the representer of f -> m(x_i; f)
is psi_i = sum_l c_l(x_i) phi(t_l(x_i)).  The kernel blocks are

    K1[i, j] = <phi_i, phi_j>            = k(x_i, x_j)
    K2[i, j] = <psi_i, phi_j>            = sum_l c_l(x_i) k(t_l(x_i), x_j)
    K3       = K2.T                      = <phi_i, psi_j>
    K4[i, j] = <psi_i, psi_j>

so that for ATE K2[i, j] = k((1, w_i), x_j) - k((0, w_i), x_j).  The Gram
matrix of the stacked features Psi = (phi_1..phi_n, psi_1..psi_n) is
K = [[K1, K3], [K2, K4]].

With f = Psi' gamma and a = Phi' beta, and A = Psi Phi' = [K1; K2] (2n x n),
the criterion is the quadratic

    gamma'V - gamma' A K1 beta / n - gamma' A A' gamma / n
        - lam gamma' K gamma + mu beta' K1 beta,

where V = (row means of K3, row means of K4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist, pdist

from .core import Dataset, EvaluableFunction, MomentFunctional, RieszEstimate
from .errors import ConfigurationError, DataError, LinAlgError, UnsupportedFunctionalError

PSD_TOL = 1e-8
JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Positive-definite kernel.

    gaussian:    exp(-||x - x'||^2 / (2 bandwidth^2))
    linear:      <x, x'>
    polynomial:  (<x, x'> + coef0) ** degree
    """

    family: str = "gaussian"
    bandwidth: float | None = None
    degree: int = 2
    coef0: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in ("gaussian", "linear", "polynomial"):
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigurationError("bandwidth must be positive")
        if self.family == "polynomial" and self.degree < 1:
            raise ConfigurationError("polynomial degree must be >= 1")

    def resolved(self, x: np.ndarray) -> "KernelSpec":
        """Fill a missing gaussian bandwidth with the median pairwise distance."""
        if self.family != "gaussian" or self.bandwidth is not None:
            return self
        return KernelSpec("gaussian", median_bandwidth(x), self.degree, self.coef0)

    def __call__(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
        x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
        if x1.shape[1] != x2.shape[1]:
            raise DataError(f"kernel inputs of dimension {x1.shape[1]} and {x2.shape[1]}")
        if self.family == "linear":
            return x1 @ x2.T
        if self.family == "polynomial":
            return (x1 @ x2.T + self.coef0) ** self.degree
        if self.bandwidth is None:
            raise ConfigurationError("gaussian kernel needs a bandwidth; call resolved() first")
        return np.exp(-cdist(x1, x2, "sqeuclidean") / (2.0 * self.bandwidth**2))

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "bandwidth": self.bandwidth, "degree": self.degree,
                "coef0": self.coef0}


def median_bandwidth(x: np.ndarray) -> float:
    d = pdist(np.asarray(x, dtype=np.float64))
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


@dataclass(frozen=True)
class KernelBlocks:
    K1: np.ndarray
    K2: np.ndarray
    K3: np.ndarray
    K4: np.ndarray

    @property
    def n(self) -> int:
        return self.K1.shape[0]

    @property
    def K(self) -> np.ndarray:
        """Gram matrix of (phi_1..phi_n, psi_1..psi_n)."""
        return np.block([[self.K1, self.K3], [self.K2, self.K4]])

    @property
    def A(self) -> np.ndarray:
        """Psi Phi' = [K1; K2]; f-values at the data are A.T @ gamma."""
        return np.vstack([self.K1, self.K2])

    @property
    def V(self) -> np.ndarray:
        """Psi applied to the empirical mean of the psi_i."""
        return np.concatenate([self.K3.mean(axis=1), self.K4.mean(axis=1)])

    def delta(self, lam: float) -> np.ndarray:
        """A A' + n lam K."""
        A = self.A
        return A @ A.T + self.n * lam * self.K


@dataclass(frozen=True)
class RkhsFit:
    beta: np.ndarray
    gamma: np.ndarray
    lam: float
    mu: float
    jitter: float
    x_train: np.ndarray
    kernel: KernelSpec
    functional: MomentFunctional
    fingerprint: str
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def riesz_function(self) -> EvaluableFunction:
        beta = self.beta
        x_train = self.x_train
        kernel = self.kernel
        norm = math.sqrt(max(float(beta @ kernel(x_train, x_train) @ beta), 0.0))
        return EvaluableFunction(lambda x: kernel(x, x_train) @ beta, norm=norm,
                                 dim=x_train.shape[1], label="rkhs-riesz")

    def test_function(self) -> EvaluableFunction:
        """The inner maximiser f = Psi' gamma as a function."""
        return rkhs_test_function(self.x_train, self.kernel, self.functional, self.gamma)


def rkhs_test_function(x_train: np.ndarray, kernel: KernelSpec, functional: MomentFunctional,
                       gamma: np.ndarray) -> EvaluableFunction:
    """f = Psi' gamma: kernel sections at the data plus the moment's evaluation points."""
    n = x_train.shape[0]
    gamma = np.asarray(gamma, dtype=np.float64)
    g1, g2 = gamma[:n], gamma[n:]
    blocks = build_kernel_blocks_x(x_train, kernel, functional)
    norm = math.sqrt(max(float(gamma @ blocks.K @ gamma), 0.0))
    terms = _term_data(x_train, functional)

    def fn(x: np.ndarray) -> np.ndarray:
        out = kernel(x, x_train) @ g1
        for w, pts in terms:
            out += kernel(x, pts) @ (w * g2)
        return out

    return EvaluableFunction(fn, norm=norm, dim=x_train.shape[1], label="rkhs-test")


def _term_data(x: np.ndarray, functional: MomentFunctional) -> list[tuple[np.ndarray, np.ndarray]]:
    if not functional.outcome_free:
        raise UnsupportedFunctionalError(
            f"functional {functional.name!r} has outcome-dependent weights; "
            "the RKHS backend needs point evaluations weighted by functions of x"
        )
    out = []
    for term in functional.terms:
        w = term.weights(x, None)
        pts = term.points(x)
        if pts.shape != x.shape:
            raise UnsupportedFunctionalError("transforms must map each row to one point of the same dimension")
        out.append((w, pts))
    return out


def build_kernel_blocks_x(x: np.ndarray, kernel: KernelSpec, functional: MomentFunctional) -> KernelBlocks:
    terms = _term_data(x, functional)
    n = x.shape[0]
    K1 = kernel(x, x)
    K2 = np.zeros((n, n))
    K4 = np.zeros((n, n))
    for wl, pl in terms:
        K2 += wl[:, None] * kernel(pl, x)
        for wm, pm in terms:
            K4 += wl[:, None] * kernel(pl, pm) * wm[None, :]
    K4 = 0.5 * (K4 + K4.T)
    K1 = 0.5 * (K1 + K1.T)
    for arr in (K1, K2, K4):
        arr.setflags(write=False)
    K3 = K2.T
    return KernelBlocks(K1=K1, K2=K2, K3=K3, K4=K4)


def build_kernel_blocks(dataset: Dataset, kernel: KernelSpec, functional: MomentFunctional) -> KernelBlocks:
    """Kernel blocks K1..K4 for a point-evaluation functional.

    x-dependent weights (such as the treatment indicator of the cross effect)
    are folded into the blocks; outcome-dependent weights are rejected.
    """
    return build_kernel_blocks_x(dataset.x, kernel.resolved(dataset.x), functional)


def _jitter(M: np.ndarray) -> float:
    return JITTER_SCALE * max(float(np.trace(M)) / M.shape[0], 0.0)


def _cho_solve_jittered(M: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve a symmetric PSD system, adding a trace-scaled ridge only on failure.

    Cholesky is tried first without any ridge; if it fails the ridge
    1e-10 * trace(M) / dim is added and escalated by factors of 100.  A
    permanent ridge costs several digits on smooth kernels, so none is used
    when the plain factorisation succeeds.
    """
    base = _jitter(M) or JITTER_SCALE
    eye = np.eye(M.shape[0])
    for jit in (0.0, base, 1e2 * base, 1e4 * base):
        try:
            c = sla.cho_factor(M + jit * eye if jit else M, lower=True, check_finite=False)
        except sla.LinAlgError:
            continue
        sol = sla.cho_solve(c, rhs, check_finite=False)
        if np.all(np.isfinite(sol)):
            return sol, jit
    raise LinAlgError("system singular after jitter", float(np.linalg.cond(M)))


def _lu_solve_jittered(M: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    base = _jitter(M) or JITTER_SCALE
    eye = np.eye(M.shape[0])
    for jit in (0.0, base, 1e2 * base, 1e4 * base):
        try:
            with np.errstate(all="ignore"):
                lu = sla.lu_factor(M + jit * eye if jit else M, check_finite=False)
            sol = sla.lu_solve(lu, rhs, check_finite=False)
        except (sla.LinAlgError, ValueError):
            continue
        if np.all(np.isfinite(sol)) and np.min(np.abs(np.diag(lu[0]))) > 0:
            return sol, jit
    raise LinAlgError("outer system singular after jitter", float(np.linalg.cond(M)))


def inner_maximizer(blocks: KernelBlocks, a_values: np.ndarray, lam: float) -> np.ndarray:
    """gamma = 1/2 Delta^{-1} [n V - A a], the maximising test function for a.

    ``a_values`` are the candidate representer's values at the n data points.
    """
    if lam < 0:
        raise ConfigurationError("lam must be non-negative")
    n = blocks.n
    rhs = 0.5 * (n * blocks.V - blocks.A @ np.asarray(a_values, dtype=np.float64))
    gamma, _ = _cho_solve_jittered(blocks.delta(lam), rhs)
    return gamma


def rkhs_criterion(blocks: KernelBlocks, beta: np.ndarray, gamma: np.ndarray, lam: float, mu: float) -> float:
    """Criterion value at (a, f) = (Phi' beta, Psi' gamma)."""
    n = blocks.n
    A = blocks.A
    fv = A.T @ gamma
    av = blocks.K1 @ beta
    return float(gamma @ blocks.V - av @ fv / n - fv @ fv / n
                 - lam * gamma @ blocks.K @ gamma + mu * beta @ blocks.K1 @ beta)


def _solve_reduced(blocks: KernelBlocks, lam: float, mu: float) -> tuple[np.ndarray, np.ndarray, float]:
    # Eliminating beta = A' gamma / (2 n mu) from the two first-order
    # conditions leaves one symmetric system (Delta + A K1 A' / (4 n mu)) gamma = n V / 2.
    n = blocks.n
    A = blocks.A
    H = blocks.delta(lam) + (A @ blocks.K1 @ A.T) / (4.0 * n * mu)
    H = 0.5 * (H + H.T)
    gamma, jit = _cho_solve_jittered(H, 0.5 * n * blocks.V)
    beta = A.T @ gamma / (2.0 * n * mu)
    return beta, gamma, jit


def _solve_closed_form(blocks: KernelBlocks, lam: float, mu: float) -> tuple[np.ndarray, np.ndarray, float, dict]:
    n = blocks.n
    A = blocks.A
    K = blocks.K
    AAt = A @ A.T
    delta = AAt + n * lam * K
    AK1 = A @ blocks.K1                              # [K1 K1; K2 K1]
    stacked = np.hstack([AK1, blocks.V[:, None]])
    sol, jit_d = _cho_solve_jittered(delta, stacked)
    D, DinvV = sol[:, :n], sol[:, n]                 # Delta^{-1} A K1, Delta^{-1} V
    omega = AK1.T - 0.5 * D.T @ AAt - 0.5 * n * lam * D.T @ K
    outer = omega @ D / n + 2.0 * mu * blocks.K1
    rhs = omega @ DinvV
    beta, jit_o = _lu_solve_jittered(outer, rhs)
    gamma = inner_maximizer(blocks, blocks.K1 @ beta, lam)
    # omega reduces to K1 A' / 2 because Delta = A A' + n lam K
    omega_identity = float(np.max(np.abs(omega - 0.5 * AK1.T))) / max(float(np.max(np.abs(AK1))), 1e-300)
    return beta, gamma, max(jit_d, jit_o), {"omega_identity_residual": omega_identity}


def foc_residuals(blocks: KernelBlocks, beta: np.ndarray, gamma: np.ndarray, lam: float, mu: float) -> dict[str, float]:
    """Relative residuals of the maximiser and minimiser first-order conditions."""
    n = blocks.n
    A = blocks.A
    rhs = 0.5 * (n * blocks.V - A @ (blocks.K1 @ beta))
    lhs = blocks.delta(lam) @ gamma
    r_max = float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), np.linalg.norm(lhs), 1e-300))
    g_beta = blocks.K1 @ (2.0 * mu * beta - A.T @ gamma / n)
    scale = max(np.linalg.norm(blocks.K1 @ (2.0 * mu * beta)), np.linalg.norm(blocks.K1 @ A.T @ gamma / n), 1e-300)
    return {"maximizer": r_max, "minimizer": float(np.linalg.norm(g_beta) / scale)}


def fit_rkhs_riesz(
    dataset: Dataset,
    kernel: KernelSpec,
    functional: MomentFunctional,
    lam: float,
    mu: float,
    method: str = "reduced",
    diagnose: bool = False,
    B: float = 1.0,
) -> RkhsFit:
    """Exact saddle point of the penalised criterion over an RKHS.

    ``method="closed_form"`` evaluates the minimiser formula with Omega and
    Delta literally (factorised, never inverted).  ``method="reduced"`` (the
    default) solves the algebraically identical system obtained after
    cancelling the common K1 factor, which stays well conditioned when K1 is
    rank deficient (linear kernels) or numerically singular (smooth kernels).
    """
    # with lam = 0 the test function is free off the data and the inner sup is unbounded
    if not (lam > 0 and mu > 0):
        raise ConfigurationError("lam and mu must both be positive")
    kernel = kernel.resolved(dataset.x)
    blocks = build_kernel_blocks_x(dataset.x, kernel, functional)
    extra: dict[str, Any] = {}
    if method == "reduced":
        beta, gamma, jit = _solve_reduced(blocks, lam, mu)
    elif method == "closed_form":
        beta, gamma, jit, extra = _solve_closed_form(blocks, lam, mu)
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(gamma))):
        raise LinAlgError("non-finite RKHS solution")
    diagnostics: dict[str, Any] = {
        "method": method,
        "bandwidth": kernel.bandwidth,
        "rkhs_norm": math.sqrt(max(float(beta @ blocks.K1 @ beta), 0.0)),
        "criterion": rkhs_criterion(blocks, beta, gamma, lam, mu),
        **extra,
    }
    if diagnose:
        diagnostics["foc_residual"] = foc_residuals(blocks, beta, gamma, lam, mu)
        diagnostics["critical_radius"] = rkhs_critical_radius(blocks.K1, B)
        diagnostics["critical_radius_moment"] = rkhs_critical_radius(blocks.K4, B)
    beta = beta.copy()
    gamma = gamma.copy()
    beta.setflags(write=False)
    gamma.setflags(write=False)
    return RkhsFit(beta=beta, gamma=gamma, lam=float(lam), mu=float(mu), jitter=jit,
                   x_train=dataset.x, kernel=kernel, functional=functional,
                   fingerprint=dataset.fingerprint(), diagnostics=diagnostics)


def evaluate_riesz(fit: RkhsFit, x: np.ndarray) -> np.ndarray | float:
    """a(x) = K(x, X) beta."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != fit.x_train.shape[1]:
        raise DataError(f"expected points of dimension {fit.x_train.shape[1]}, got {pts.shape[1]}")
    out = fit.kernel(pts, fit.x_train) @ fit.beta
    return float(out[0]) if single else out


def as_riesz_estimate(fit: RkhsFit) -> RieszEstimate:
    return RieszEstimate(function=fit.riesz_function(), backend="rkhs",
                         coefficients=fit.beta, diagnostics=dict(fit.diagnostics, jitter=fit.jitter))


def fit_kernel_ridge_regression(dataset: Dataset, kernel: KernelSpec, ridge: float) -> EvaluableFunction:
    """Kernel ridge regression: solve (K1 + n ridge I) c = y; g(x) = K(x, X) c."""
    if not ridge > 0:
        raise ConfigurationError("ridge must be positive")
    kernel = kernel.resolved(dataset.x)
    K1 = kernel(dataset.x, dataset.x)
    n = dataset.n
    try:
        c = sla.cho_factor(K1 + n * ridge * np.eye(n), lower=True, check_finite=False)
        coef = sla.cho_solve(c, dataset.y, check_finite=False)
    except sla.LinAlgError as exc:
        raise LinAlgError("kernel ridge system singular", float(np.linalg.cond(K1))) from exc
    coef.setflags(write=False)
    x_train = dataset.x
    norm = math.sqrt(max(float(coef @ K1 @ coef), 0.0))
    return EvaluableFunction(lambda x: kernel(x, x_train) @ coef, norm=norm, dim=dataset.dim,
                             label="kernel-ridge")


def rkhs_critical_radius(gram: np.ndarray, B: float, tol: float = 1e-10) -> float:
    """Smallest delta with B sqrt(2/n) sqrt(sum_j min(l_j, delta^2)) <= delta^2.

    l_j are the eigenvalues of gram / n, clamped at zero.  The admissible set
    is an interval [delta_n, inf) because the left side divided by delta^2 is
    non-increasing; it is located by bisection.
    """
    gram = np.asarray(gram, dtype=np.float64)
    n = gram.shape[0]
    if gram.ndim != 2 or gram.shape[1] != n:
        raise DataError("gram must be square")
    if not B > 0:
        raise ConfigurationError("B must be positive")
    eig = np.linalg.eigvalsh(0.5 * (gram + gram.T) / n)
    top = max(float(eig.max()), 0.0)
    if eig.min() < -PSD_TOL * max(1.0, top):
        raise DataError(f"kernel matrix not PSD (min eigenvalue {eig.min():.3e})")
    eig = np.clip(eig, 0.0, None)
    if top == 0.0:
        return 0.0
    c = B * math.sqrt(2.0 / n)

    def holds(delta: float) -> bool:
        return c * math.sqrt(float(np.minimum(eig, delta * delta).sum())) <= delta * delta

    hi = math.sqrt(max(top, c * math.sqrt(float(eig.sum())))) * (1 + 1e-12) + tol
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return hi


def rkhs_riesz_learner(functional: MomentFunctional, kernel: KernelSpec | None = None,
                       lam: float = 1e-3, mu: float = 1e-3, method: str = "reduced"
                       ) -> Callable[[Dataset], RieszEstimate]:
    spec = kernel or KernelSpec("gaussian")
    return lambda data: as_riesz_estimate(fit_rkhs_riesz(data, spec, functional, lam, mu, method))


def krr_learner(kernel: KernelSpec | None = None, ridge: float = 1e-3) -> Callable[[Dataset], EvaluableFunction]:
    spec = kernel or KernelSpec("gaussian")
    return lambda data: fit_kernel_ridge_regression(data, spec, ridge)
