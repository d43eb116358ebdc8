import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corth.linmodel import CvConfig, LinearPredictor, Standardization, ols_fit, predict
from corth.orthosearch import (
    Dataset,
    DegenerateFeatureError,
    FoldPartition,
    NuisanceFit,
    SearchConfig,
    SearchError,
    aggregate_feature,
    chi_fold,
    chi_forms,
    chi_identity_gap,
    dataset_from_arrays,
    discover,
    fit_nuisance,
    normal_quantile,
    partition,
    score_terms,
    sigma_fold,
    test_feature as normal_test,
    theta_fold,
)

from helpers import example1

PROJ = SearchConfig(nuisance="projection")


def zero_predictor(p):
    return LinearPredictor(0.0, np.zeros(p), 0.0, "ols", Standardization(np.zeros(p), np.ones(p)))


def bisection_quantile(p):
    lower = p < 0.5
    tail = p if lower else 1.0 - p
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > tail:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    return -x if lower else x


class TestPartition:
    def test_two_halves(self):
        part = partition(4, 2, seed=0)
        a, b = part.rows(0), part.rows(1)
        assert len(a) == len(b) == 2
        assert sorted(np.r_[a, b]) == [0, 1, 2, 3]

    def test_balanced_remainder(self):
        sizes = sorted(np.bincount(partition(10, 3, seed=5).assignments), reverse=True)
        assert sizes == [4, 3, 3]

    def test_deterministic(self):
        assert np.array_equal(partition(50, 4, 9).assignments, partition(50, 4, 9).assignments)
        assert not np.array_equal(partition(50, 4, 9).assignments, partition(50, 4, 10).assignments)

    def test_too_many_folds(self):
        with pytest.raises(SearchError):
            partition(3, 4, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 2**63))
    def test_balanced_property(self, n, K, seed):
        if K > n:
            return
        counts = np.bincount(partition(n, K, seed).assignments, minlength=K)
        assert counts.sum() == n
        assert counts.min() >= 1 and counts.max() - counts.min() <= 1


class TestFitNuisance:
    def test_single_covariate_is_mean(self, rng):
        data = dataset_from_arrays(rng.standard_normal((20, 1)), rng.standard_normal(20))
        part = partition(20, 2, 0)
        nf = fit_nuisance(data, 0, part, 0, SearchConfig(cv=CvConfig(folds=2)))
        train = part.training_rows(0)
        assert nf.m_hat.p == 0 and nf.g_hat.p == 0
        assert nf.m_hat.intercept == pytest.approx(data.X[train, 0].mean())
        assert nf.g_hat.intercept == pytest.approx(data.y[train].mean())

    def test_projection_is_ols_on_split(self, rng):
        data = dataset_from_arrays(rng.standard_normal((40, 3)), rng.standard_normal(40))
        part = partition(40, 2, 1)
        nf = fit_nuisance(data, 1, part, 1, PROJ)
        train = part.training_rows(1)
        Z = np.delete(data.X[train], 1, axis=1)
        ref = ols_fit(Z, data.X[train, 1])
        assert np.array_equal(nf.m_hat.coefficients, ref.coefficients)
        assert nf.m_hat.intercept == ref.intercept

    def test_copy_of_feature_leaves_no_residual(self, rng):
        x = rng.standard_normal(100)
        X = np.column_stack([x, rng.standard_normal(100), x])
        data = dataset_from_arrays(X, rng.standard_normal(100))
        part = partition(100, 2, 3)
        nf = fit_nuisance(data, 0, part, 0, PROJ)
        rows = part.rows(0)
        V = data.X[rows, 0] - predict(nf.m_hat, np.delete(data.X[rows], 0, axis=1))
        assert np.max(np.abs(V)) < 1e-8

    def test_role_streams_differ(self, rng):
        data = dataset_from_arrays(rng.standard_normal((60, 3)), rng.standard_normal(60))
        part = partition(60, 2, 0)
        a = fit_nuisance(data, 0, part, 0, SearchConfig(seed=1, cv=CvConfig(folds=3)))
        b = fit_nuisance(data, 0, part, 0, SearchConfig(seed=1, cv=CvConfig(folds=3)))
        assert np.array_equal(a.m_hat.coefficients, b.m_hat.coefficients)


class TestFoldStatistics:
    def test_theta_reduces_to_slope(self, rng):
        d = rng.standard_normal(30)
        data = dataset_from_arrays(np.column_stack([d, rng.standard_normal(30)]), 3.0 * d)
        part = partition(30, 2, 0)
        nf = NuisanceFit(0, 0, zero_predictor(1), zero_predictor(1))
        assert theta_fold(data, 0, part, 0, nf) == pytest.approx(3.0, rel=1e-12)

    def test_theta_zero_when_orthogonal(self):
        # fold 0 holds D = [1, -1, 1, -1] and Y = [1, 1, -1, -1], so sum(V * Y) = 0
        X = np.column_stack([[1.0, -1.0, 1.0, -1.0, 2.0, 3.0, 4.0, 5.0], np.zeros(8)])
        y = np.array([1.0, 1.0, -1.0, -1.0, 0.0, 1.0, 0.0, 1.0])
        data = dataset_from_arrays(X, y)
        part = FoldPartition(np.array([0, 0, 0, 0, 1, 1, 1, 1]), 2)
        nf = NuisanceFit(0, 0, zero_predictor(1), zero_predictor(1))
        assert theta_fold(data, 0, part, 0, nf) == 0.0

    def test_theta_degenerate(self, rng):
        data = dataset_from_arrays(np.column_stack([np.zeros(10), rng.standard_normal(10)]), rng.standard_normal(10))
        part = partition(10, 2, 0)
        nf = NuisanceFit(0, 0, zero_predictor(1), zero_predictor(1))
        with pytest.raises(DegenerateFeatureError, match="degenerate residual variance for feature 0"):
            theta_fold(data, 0, part, 0, nf)

    def test_chi_zero_when_g_reproduces_y(self, rng):
        X = rng.standard_normal((60, 3))
        y = 1.0 + 2.0 * X[:, 1] - X[:, 2]
        data = dataset_from_arrays(X, y)
        part = partition(60, 2, 0)
        nf = fit_nuisance(data, 0, part, 0, PROJ)
        assert abs(chi_fold(data, 0, part, 0, nf)) < 1e-12

    def test_chi_forms_agree(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            D, Y, m, g = rng.normal(rng.uniform(-3, 3), rng.uniform(0.1, 5), size=(4, 200))
            assert chi_identity_gap(D, Y, m, g) <= 1e-10
            a, b = chi_forms(D, Y, m, g)
            assert a == pytest.approx(b, rel=1e-10, abs=1e-12)

    def test_chi_sign_follows_theta(self):
        rng = np.random.default_rng(77)
        n = 50_000
        x1 = rng.standard_normal(n)
        x2 = 0.9 * x1 + rng.standard_normal(n)
        x3 = 0.7 * x2 + rng.standard_normal(n)
        y = 1.5 * x1 - 0.8 * x3 + rng.standard_normal(n)
        data = dataset_from_arrays(np.column_stack([x1, x2, x3]), y)
        part = partition(n, 2, 0)
        signs = []
        for i in range(3):
            nf = fit_nuisance(data, i, part, 0, PROJ)
            signs.append(np.sign(chi_fold(data, i, part, 0, nf)))
        assert signs[0] == 1.0 and signs[2] == -1.0

    def test_sigma_constant_summand(self):
        X = np.column_stack([np.arange(8.0), np.ones(8)])
        data = dataset_from_arrays(X, np.zeros(8))
        part = partition(8, 2, 0)
        nf = NuisanceFit(0, 0, zero_predictor(1), zero_predictor(1))
        assert sigma_fold(data, 0, part, 0, nf, 0.0) == 0.0

    def test_sigma_two_pass_oracle(self, rng):
        data = dataset_from_arrays(rng.standard_normal((80, 3)), rng.standard_normal(80))
        part = partition(80, 2, 4)
        nf = fit_nuisance(data, 2, part, 1, PROJ)
        chi_k = chi_fold(data, 2, part, 1, nf)
        rows = part.rows(1)
        Z = np.delete(data.X[rows], 2, axis=1)
        s = score_terms(data.X[rows, 2], data.y[rows], predict(nf.m_hat, Z), predict(nf.g_hat, Z))
        mean = sum(s) / len(s)
        oracle = sum((v - mean) ** 2 for v in s) / len(s)
        assert sigma_fold(data, 2, part, 1, nf, chi_k) == pytest.approx(oracle, rel=1e-12)

    def test_sigma_scales_with_response(self, rng):
        X = rng.standard_normal((100, 3))
        y = X @ [1.0, 0.0, -2.0] + rng.standard_normal(100)
        part = partition(100, 2, 0)
        out = []
        for c in (1.0, 3.5):
            data = dataset_from_arrays(X, c * y)
            nf = fit_nuisance(data, 0, part, 0, PROJ)
            out.append(sigma_fold(data, 0, part, 0, nf, chi_fold(data, 0, part, 0, nf)))
        assert out[1] == pytest.approx(3.5**2 * out[0], rel=1e-10)


class TestAggregateAndTest:
    def test_aggregate(self):
        assert aggregate_feature([1.0, 2.0], [0.4, 0.6], [1.0, 3.0]) == pytest.approx((1.5, 0.5, math.sqrt(2.0)))
        assert aggregate_feature([0.7] * 3, [0.2] * 3, [4.0] * 3) == pytest.approx((0.7, 0.2, 2.0))

    def test_quantile_values(self):
        assert normal_quantile(0.5) == 0.0
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-5)
        assert normal_quantile(0.999) == pytest.approx(bisection_quantile(0.999), abs=1e-9)

    def test_quantile_matches_bisection_over_range(self):
        tails = np.logspace(-12, np.log10(0.49), 60)
        for p in np.r_[tails, 1.0 - tails, np.linspace(0.05, 0.95, 19)]:
            assert abs(normal_quantile(p) - bisection_quantile(p)) < 1e-9

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_domain(self, p):
        with pytest.raises(ValueError):
            normal_quantile(p)

    def test_zero_chi(self):
        z, p, parent = normal_test(0.0, 1.0, 100, 0.05, 1, False)
        assert z == 0.0 and p == 1.0 and not parent

    def test_single_feature_threshold(self):
        # z = sqrt(N) * chi / sigma = 2.0 > 1.959964
        z, p, parent = normal_test(0.2, 1.0, 100, 0.05, 1, False)
        assert z == pytest.approx(2.0) and parent and p < 0.05

    def test_bonferroni_threshold(self):
        assert normal_quantile(1 - 0.0025) == pytest.approx(2.807, abs=1e-3)
        z, p, parent = normal_test(0.25, 1.0, 100, 0.05, 10, True)
        assert z == pytest.approx(2.5) and not parent
        assert normal_test(0.25, 1.0, 100, 0.05, 10, False)[2]

    def test_zero_sigma(self):
        assert normal_test(0.3, 0.0, 10, 0.05, 1, True) == (math.inf, 0.0, True)
        assert normal_test(0.0, 0.0, 10, 0.05, 1, True) == (0.0, 1.0, False)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-5, 5), st.floats(0.01, 10), st.integers(2, 10_000), st.integers(1, 50), st.booleans())
    def test_pvalue_and_decision_consistent(self, chi, sigma, N, d, bonf):
        z, p, parent = normal_test(chi, sigma, N, 0.05, d, bonf)
        phi = 0.5 * (1.0 + math.erf(abs(z) / math.sqrt(2.0)))
        assert abs(p - 2.0 * (1.0 - phi)) < 1e-12
        level = 0.05 / d if bonf else 0.05
        if abs(p - level) > 1e-12:
            assert parent == (p < level)


class TestDiscover:
    def test_single_parent(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(10_000)
        report = discover(dataset_from_arrays(x, 2.0 * x + rng.standard_normal(10_000)), SearchConfig(seed=1))
        assert list(report.dec_vec) == [True]
        assert abs(report.stats[0].theta_hat - 2.0) < 0.1

    def test_example1_recovers_both(self):
        report = discover(example1(200_000, seed=11), PROJ)
        assert list(report.dec_vec) == [True, True]
        assert abs(report.stats[0].theta_hat - 2.0) < 0.02
        assert abs(report.stats[1].theta_hat + 1.0) < 0.02
        # chi_1 = theta_1 * Var(X1 | X2) = 2 * (1 - 2.25 / 3.25); chi_2 = -1 * Var(X2 | X1) = -1
        assert report.stats[0].chi_hat == pytest.approx(2 * (1 - 2.25 / 3.25), abs=0.01)
        assert report.stats[1].chi_hat == pytest.approx(-1.0, abs=0.01)

    def test_fit_count_and_consistency(self, rng):
        X = rng.standard_normal((300, 6))
        data = dataset_from_arrays(X, X[:, 0] - X[:, 3] + rng.standard_normal(300))
        for K in (2, 3):
            cfg = SearchConfig(folds=K, seed=2)
            report = discover(data, cfg)
            assert report.n_nuisance_fits == 2 * data.d * K
            level = cfg.corrected_alpha(data.d)
            assert all(s.is_parent == (s.p_value < level) for s in report.stats)
            assert np.array_equal(report.dec_vec, [s.is_parent for s in report.stats])

    def test_thread_count_does_not_change_result(self, rng):
        X = rng.standard_normal((400, 8))
        data = dataset_from_arrays(X, X @ rng.standard_normal(8) + rng.standard_normal(400))
        cfg = SearchConfig(seed=9)
        a, b = discover(data, cfg, threads=1), discover(data, cfg, threads=4)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_duplicate_column_is_isolated(self, rng):
        x = rng.standard_normal(200)
        X = np.column_stack([x, rng.standard_normal(200), x])
        data = dataset_from_arrays(X, 2 * X[:, 1] + rng.standard_normal(200))
        report = discover(data, PROJ)
        assert report.stats[0].failed and report.stats[2].failed
        assert not report.stats[0].is_parent and report.stats[0].p_value == 1.0
        assert report.stats[1].is_parent and not report.stats[1].failed
        assert report.n_nuisance_fits == 2 * 3 * 2

    def test_output_order_matches_columns(self, rng):
        data = dataset_from_arrays(rng.standard_normal((50, 4)), rng.standard_normal(50), ["d", "c", "b", "a"])
        assert [s.name for s in discover(data, PROJ).stats] == ["d", "c", "b", "a"]

    def test_preconditions(self, rng):
        data = dataset_from_arrays(rng.standard_normal((5, 2)), rng.standard_normal(5))
        with pytest.raises(SearchError):
            discover(data, SearchConfig(folds=3, nuisance="projection"))
        with pytest.raises(ValueError, match="too few observations"):
            discover(dataset_from_arrays(rng.standard_normal((16, 2)), rng.standard_normal(16)), SearchConfig())

    def test_null_rejection_rate_small_sample(self):
        rejections = np.zeros(5)
        reps = 100
        for r in range(reps):
            rng = np.random.default_rng(1000 + r)
            data = dataset_from_arrays(rng.standard_normal((2000, 5)), rng.standard_normal(2000))
            rejections += discover(data, SearchConfig(bonferroni=False, seed=r)).dec_vec
        rate = rejections / reps
        # binomial(100, 0.05) stays within [0, 0.13] with prob > 0.999
        assert np.all(rate <= 0.13)

    def test_report_json_schema(self, rng):
        data = dataset_from_arrays(rng.standard_normal((40, 2)), rng.standard_normal(40))
        doc = json.loads(json.dumps(discover(data, PROJ).to_dict(), allow_nan=False))
        assert doc["version"] == 1 and doc["n"] == 40
        assert {"folds", "alpha", "bonferroni", "nuisance", "cv", "seed"} <= set(doc["config"])
        for f in doc["features"]:
            assert set(f) == {"name", "theta_hat", "chi_hat", "sigma_hat", "z", "p_value", "is_parent", "failed"}


class TestDataset:
    def test_validation(self, rng):
        X = rng.standard_normal((10, 2))
        with pytest.raises(SearchError, match="unique"):
            Dataset(X, np.zeros(10), ("a", "a"))
        with pytest.raises(SearchError, match="clashes"):
            Dataset(X, np.zeros(10), ("a", "y"), "y")
        with pytest.raises(SearchError, match="at least 4"):
            Dataset(X[:3], np.zeros(3), ("a", "b"))
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(X, np.r_[np.nan, np.zeros(9)], ("a", "b"))
