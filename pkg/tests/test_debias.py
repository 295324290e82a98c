from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adversarial_riesz.core import Dataset, EvaluableFunction, Sample, ate, constant, linear
from adversarial_riesz.debias import (
    DebiasResult,
    FoldPlan,
    cross_fit_estimate,
    debiased_moment,
    debiased_scores,
    delta_method_ratio,
    gateaux_functional,
    late_estimate,
    no_split_estimate,
    normal_interval,
)
from adversarial_riesz.errors import ConfigurationError, LearnerError, WeakIdentificationError
from adversarial_riesz.rkhs import KernelSpec, krr_learner, median_bandwidth, rkhs_riesz_learner
from adversarial_riesz.synthetic import make_ate_dgp, make_iv_dgp, monte_carlo

ZERO = constant(0.0)


def fixed(fn):
    return lambda train: fn


def ols_learner(train: Dataset) -> EvaluableFunction:
    X = np.column_stack([np.ones(train.n), train.x])
    coef = np.linalg.lstsq(X, train.y, rcond=None)[0]
    return EvaluableFunction(lambda x: np.column_stack([np.ones(x.shape[0]), x]) @ coef)


# --- debiased moment -----------------------------------------------------------------


def test_hand_computed_moment():
    g = EvaluableFunction(lambda x: x[:, 0])
    a = EvaluableFunction(lambda x: 2 * x[:, 0] - 1)
    assert debiased_moment(Sample(np.array([1.0, 2.0]), 5.0), a, g, ate(0)) == pytest.approx(5.0)


@given(d=st.sampled_from([0.0, 1.0]), w=st.floats(-3, 3), c=st.floats(-2, 2))
def test_zero_residual_or_zero_representer_gives_plug_in(d, w, c):
    g = EvaluableFunction(lambda x: c * x[:, 0] + np.sin(x[:, 1]))
    x = np.array([d, w])
    a = EvaluableFunction(lambda x: 3.0 + x[:, 1])
    plug = c  # g(1, w) - g(0, w)
    exact = Sample(x, float(g.values(x[None, :])[0]))
    assert debiased_moment(exact, a, g, ate(0)) == pytest.approx(plug, abs=1e-12)
    assert debiased_moment(Sample(x, 17.0), ZERO, g, ate(0)) == pytest.approx(plug, abs=1e-12)


def test_scores_match_rowwise_moment(ate_data):
    g = EvaluableFunction(lambda x: x[:, 0] * x[:, 1] + x[:, 2])
    a = EvaluableFunction(lambda x: x[:, 1] - x[:, 0])
    psi, plug = debiased_scores(ate_data, a, g, ate(0))
    rowwise = [debiased_moment(ate_data.row(i), a, g, ate(0)) for i in range(ate_data.n)]
    np.testing.assert_allclose(psi, rowwise, rtol=1e-14)
    np.testing.assert_allclose(plug, ate_data.x[:, 1], rtol=1e-14)


def test_normal_interval():
    lo, hi = normal_interval(1.0, 0.5, 0.95)
    assert (lo, hi) == pytest.approx((1.0 - 1.959963984540054 * 0.5, 1.0 + 1.959963984540054 * 0.5))
    with pytest.raises(ConfigurationError):
        normal_interval(0.0, 1.0, 1.0)


# --- fold plans -----------------------------------------------------------------------


@given(n=st.integers(4, 300), K=st.integers(2, 10), seed=st.integers(0, 1000))
def test_fold_plan_partitions_rows(n, K, seed):
    if n < 2 * K:
        with pytest.raises(ConfigurationError):
            FoldPlan.make(n, K, seed)
        return
    plan = FoldPlan.make(n, K, seed)
    folds = plan.folds
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(n))
    sizes = [f.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert np.array_equal(plan.assignment, FoldPlan.make(n, K, seed).assignment)
    for k in range(K):
        assert np.intersect1d(plan.train_index(k), folds[k]).size == 0


def test_fold_plan_seeds_differ():
    assert not np.array_equal(FoldPlan.make(100, 5, 1).assignment, FoldPlan.make(100, 5, 2).assignment)
    with pytest.raises(ConfigurationError):
        FoldPlan.make(100, 1)


# --- cross-fitting -------------------------------------------------------------------------


def test_oracle_nuisances_reproduce_empirical_plug_in():
    dgp = make_ate_dgp(dim=2, noise_sd=0.0, seed=0)
    ds = dgp.sample(200, 1)
    plan = FoldPlan.make(ds.n, 5, 0)
    res = cross_fit_estimate(ds, plan, fixed(dgp.a0), fixed(dgp.g0), ate(0))
    exact = float(np.mean(ate(0).scores(ds, dgp.g0)))
    assert res.theta_hat == exact and res.plug_in == exact
    ns = no_split_estimate(ds, fixed(dgp.a0), fixed(dgp.g0), ate(0))
    assert ns.theta_hat == res.theta_hat and ns.no_split and not res.no_split
    assert res.ci[0] <= res.theta_hat <= res.ci[1]


def test_se_formula_and_positivity():
    dgp = make_ate_dgp(dim=2, seed=0)
    ds = dgp.sample(300, 0)
    res = cross_fit_estimate(ds, FoldPlan.make(ds.n, 5, 0), fixed(dgp.a0), fixed(dgp.g0), ate(0))
    psi = res.psi
    assert res.se == pytest.approx(np.sqrt(np.sum((psi - psi.mean()) ** 2) / ds.n) / np.sqrt(ds.n),
                                   rel=1e-12)
    assert res.se > 0
    assert [d["fold"] for d in res.per_fold] == list(range(5))
    assert sum(d["size"] for d in res.per_fold) == ds.n
    assert set(res.to_dict()) >= {"theta_hat", "se", "ci", "plug_in", "per_fold"}


def test_learners_only_see_out_of_fold_rows():
    dgp = make_ate_dgp(dim=1, seed=0)
    ds = dgp.sample(60, 0)
    plan = FoldPlan.make(ds.n, 4, 3)
    seen = []

    def spy(train):
        seen.append({tuple(r) for r in train.x})
        return dgp.a0

    cross_fit_estimate(ds, plan, spy, fixed(dgp.g0), ate(0), threads=1)
    for k, idx in enumerate(plan.folds):
        held_out = {tuple(r) for r in ds.x[idx]}
        assert not seen[k] & held_out
        assert len(seen[k]) == ds.n - idx.size


def test_learner_failure_names_fold():
    dgp = make_ate_dgp(dim=1, seed=0)
    ds = dgp.sample(50, 0)
    plan = FoldPlan.make(ds.n, 5, 0)
    target = tuple(ds.x[plan.folds[2][0]])

    def picky(train):
        # fails only when the row of fold 2 is absent, i.e. when fitting fold 2
        if target not in {tuple(r) for r in train.x}:
            raise ValueError("cannot fit")
        return dgp.a0

    with pytest.raises(LearnerError) as info:
        cross_fit_estimate(ds, plan, picky, fixed(dgp.g0), ate(0), threads=1)
    assert info.value.fold == 2 and "fold 2" in str(info.value)


def test_bitwise_determinism_across_thread_counts():
    dgp = make_ate_dgp(dim=2, seed=0)
    ds = dgp.sample(150, 0)
    kernel = KernelSpec("gaussian")
    runs = [cross_fit_estimate(ds, FoldPlan.make(ds.n, 5, 9), rkhs_riesz_learner(ate(0), kernel),
                               krr_learner(kernel), ate(0), threads=t) for t in (1, 1, 3)]
    assert runs[0].theta_hat == runs[1].theta_hat == runs[2].theta_hat
    assert runs[0].psi.tobytes() == runs[2].psi.tobytes()


def test_no_split_agrees_with_cross_fit_on_small_class():
    dgp = make_ate_dgp(dim=2, seed=0)
    ds = dgp.sample(400, 0)
    kernel = KernelSpec("linear")
    rl, gl = rkhs_riesz_learner(ate(0), kernel, lam=1e-2, mu=1e-2), krr_learner(kernel, 1e-2)
    a = cross_fit_estimate(ds, FoldPlan.make(ds.n, 5, 0), rl, gl, ate(0))
    b = no_split_estimate(ds, rl, gl, ate(0))
    assert abs(a.theta_hat - b.theta_hat) <= 2 * (a.se + b.se)


def test_se_scales_with_root_n():
    dgp = make_ate_dgp(dim=2, seed=0)
    ratios = []
    for r in range(15):
        se = [cross_fit_estimate(ds, FoldPlan.make(ds.n, 5, r), fixed(dgp.a0), fixed(dgp.g0), ate(0)).se
              for ds in (dgp.sample(250, (r, 0)), dgp.sample(1000, (r, 1)))]
        ratios.append(se[1] / se[0])
    assert 0.4 <= np.median(ratios) <= 0.6


@pytest.mark.parametrize("which", ["regression", "representer"])
def test_doubly_robust_with_one_correct_nuisance(which):
    dgp = make_ate_dgp(dim=2, seed=0)
    a, g = (ZERO, dgp.g0) if which == "regression" else (dgp.a0, ZERO)

    def est(ds, key):
        return cross_fit_estimate(ds, FoldPlan.make(ds.n, 5, key), fixed(a), fixed(g), ate(0), threads=1)

    res = monte_carlo(dgp, est, replications=200, n=300, seed=4, threads=1)
    sd = np.std([r["theta_hat"] for r in res.records])
    assert abs(res.bias) <= 3.5 * sd / np.sqrt(200)


def test_debiasing_corrects_under_smoothed_regression():
    dgp = make_ate_dgp(dim=3, seed=0)

    def est(ds, key):
        narrow = KernelSpec("gaussian", 0.05 * median_bandwidth(ds.x))
        return cross_fit_estimate(ds, FoldPlan.make(ds.n, 5, key), fixed(dgp.a0), krr_learner(narrow),
                                  ate(0), threads=1)

    res = monte_carlo(dgp, est, replications=30, n=500, seed=2, threads=1)
    assert abs(res.median_bias) < abs(res.plug_in_median_bias)


# --- ratios ------------------------------------------------------------------------------


def test_delta_method_trivial_cases():
    est, se = delta_method_ratio((2.0, 0.3), (1.0, 0.0))
    assert est == 2.0 and se == pytest.approx(0.3)
    dgp = make_ate_dgp(dim=1, noise_sd=0.1, seed=0)
    ds = dgp.sample(2000, 0)
    res = no_split_estimate(ds, fixed(dgp.a0), fixed(dgp.g0), ate(0))
    est, se = delta_method_ratio(res, res)
    assert est == 1.0 and se <= 1e-9


def test_delta_method_matches_linearised_influence():
    rng = np.random.default_rng(0)
    n = 500
    pn, pd = 1.0 + rng.normal(size=n), 2.0 + 0.5 * rng.normal(size=n)
    pd = pd + 0.3 * pn

    def wrap(psi):
        m, se = psi.mean(), psi.std() / np.sqrt(n)
        return DebiasResult(float(m), float(se), (m - se, m + se), 0.68, float(m), psi)

    est, se = delta_method_ratio(wrap(pn), wrap(pd))
    r = pn.mean() / pd.mean()
    influence = (pn - r * pd) / pd.mean()
    assert est == pytest.approx(r, rel=1e-14)
    assert se == pytest.approx(influence.std() / np.sqrt(n), rel=1e-10)


def test_weak_denominator_is_rejected():
    with pytest.raises(WeakIdentificationError):
        delta_method_ratio((1.0, 0.1), (0.05, 0.01))
    with pytest.raises(WeakIdentificationError):
        delta_method_ratio((1.0, 0.1), (0.0, 0.0))


def test_late_coverage():
    dgp = make_iv_dgp(seed=0)
    # the outcome and treatment regressions are linear in (z, w) for this design

    def est(ds, key):
        return late_estimate(ds, FoldPlan.make(ds.n, 5, key), fixed(dgp.a0), ols_learner, ate(0),
                             threads=1)

    res = monte_carlo(dgp, est, replications=200, n=1000, seed=3, threads=1)
    assert res.failures == 0 and res.coverage >= 0.90
    with pytest.raises(ConfigurationError):
        ds = dgp.sample(50, 0)
        late_estimate(ds, FoldPlan.make(50, 5, 0), fixed(dgp.a0), ols_learner, ate(0), treatment_key="t")


# --- finite-difference linearisation --------------------------------------------------------


def _setup():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 2))
    ds = Dataset(y=rng.normal(size=100), x=x)
    g_hat = linear(np.array([0.5, -1.0]), 0.2)
    probe = EvaluableFunction(lambda z: np.cos(z[:, 0]) + z[:, 1] ** 2)
    return ds, g_hat, probe


def test_linear_moment_is_exact_for_every_step():
    ds, g_hat, probe = _setup()
    moment = lambda x, y, theta, g: theta * x[:, 0] * g  # noqa: E731
    exact = np.mean(3.0 * ds.x[:, 0] * probe.values(ds.x))
    base = np.mean(3.0 * ds.x[:, 0] * g_hat.values(ds.x))
    for eps in (1.0, 1e-2, 1e-4, None):
        fn = gateaux_functional(moment, 3.0, g_hat, eps)
        assert fn.mean_over(ds, probe) == pytest.approx(exact - base, rel=1e-8)


def _quadratic_error(eps):
    ds, g_hat, probe = _setup()
    fn = gateaux_functional(lambda x, y, theta, g: g**2, None, g_hat, eps)
    gv, fv = g_hat.values(ds.x), probe.values(ds.x)
    derivative = np.mean(2 * gv * (fv - gv))
    return abs(fn.mean_over(ds, probe) - derivative), derivative, np.mean((fv - gv) ** 2)


def test_quadratic_moment_error_is_first_order():
    for eps in (1e-2, 1e-4):
        err, derivative, curvature = _quadratic_error(eps)
        assert err == pytest.approx(eps * curvature, rel=1e-4)
        assert err / abs(derivative) <= 10 * eps


def test_richardson_ratio_for_quadratic_moment():
    ratio = _quadratic_error(1e-2)[0] / _quadratic_error(5e-3)[0]
    assert abs(ratio - 2.0) <= 0.3


def test_gateaux_defaults_and_errors():
    ds, g_hat, probe = _setup()
    fn = gateaux_functional(lambda x, y, theta, g: g, None, g_hat)
    gv = g_hat.values(ds.x)
    assert fn.step(ds.x) == pytest.approx(np.finfo(float).eps ** (1 / 3) * (1 + np.sqrt(np.mean(gv**2))))
    assert not fn.outcome_free
    with pytest.raises(ConfigurationError):
        gateaux_functional(lambda x, y, theta, g: g, None, g_hat, 0.0)
    bad = gateaux_functional(lambda x, y, theta, g: np.log(g - 1e9), None, g_hat, 1e-3)
    with np.errstate(invalid="ignore"):
        assert np.all(np.isnan(bad.scores(ds, probe)))


def test_gateaux_functional_in_debiased_scores():
    # outcome-dependent moment m = y g: the scores interface passes the outcome through
    ds, g_hat, probe = _setup()
    fn = gateaux_functional(lambda x, y, theta, g: y * g, None, g_hat, 0.5)
    psi, plug = debiased_scores(ds, ZERO, probe, fn)
    np.testing.assert_allclose(plug, ds.y * (probe.values(ds.x) - g_hat.values(ds.x)), rtol=1e-12)
    np.testing.assert_array_equal(psi, plug)
