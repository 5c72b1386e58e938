import numpy as np
import pytest
from scipy.stats import norm

from multippi.allocator import optimal_weights
from multippi.errors import CountMismatch, DegenerateBatch, InvalidSubset, MissingSubset, TooFewSamples
from multippi.estimators import (
    PipelineConfig,
    cascade_estimate,
    classical_estimate,
    confidence_interval,
    multippi_point,
    normal_quantile,
    pipeline_run,
    ppi_estimate,
    ppi_pp_lambda,
    ppi_pp_scalar,
    ppi_pp_vector,
    ppi_pp_vector_lambda,
    project,
    prune_zero_budgets,
)
from multippi.model import Allocation, CostModel, CovarianceMatrix, SampleBatch, SubsetFamily, TargetSpec, WeightScheme
from multippi.simulator import cost_additive


def unit_variance_rows(n, seed=0):
    z = np.random.default_rng(seed).normal(size=n)
    z = z - z.mean()
    return z / np.std(z, ddof=1)


class TestPoint:
    def test_single_mean(self):
        assert multippi_point([SampleBatch((1,), [3.0, 5.0])], WeightScheme({(1,): [1.0]})) == 4.0

    def test_zero_weight_batch_ignored(self):
        batches = [SampleBatch((1,), [3.0, 5.0]), SampleBatch((2,), [1e9, -7.0])]
        weights = WeightScheme({(1,): [1.0], (2,): [0.0]})
        assert multippi_point(batches, weights) == 4.0
        # a zero-weight subset needs no batch at all
        assert multippi_point(batches[:1], weights) == 4.0

    def test_two_subsets(self):
        batches = [SampleBatch((1, 2), [[2.0, 1.0]]), SampleBatch((2,), [3.0])]
        weights = WeightScheme({(1, 2): [1.0, -1.0], (2,): [1.0]})
        assert multippi_point(batches, weights) == 4.0

    def test_missing_batch(self):
        with pytest.raises(MissingSubset):
            multippi_point([SampleBatch((1, 2), [[2.0, 1.0]])], WeightScheme({(1, 2): [1.0, -1.0], (2,): [1.0]}))

    def test_count_mismatch(self):
        batches = [SampleBatch((1,), [3.0, 5.0])]
        with pytest.raises(CountMismatch):
            multippi_point(batches, WeightScheme({(1,): [1.0]}), Allocation({(1,): 3}))

    def test_duplicate_batches(self):
        with pytest.raises(InvalidSubset):
            multippi_point([SampleBatch((1,), [1.0]), SampleBatch((1,), [2.0])], WeightScheme({(1,): [1.0]}))

    def test_linear_in_batch_shift(self):
        rng = np.random.default_rng(2)
        rows12, rows2 = rng.normal(size=(20, 2)), rng.normal(size=(50, 1))
        weights = WeightScheme({(1, 2): [1.0, -0.6], (2,): [0.6]})
        base = multippi_point([SampleBatch((1, 2), rows12), SampleBatch((2,), rows2)], weights)
        shift = np.array([0.5, -2.0])
        moved = multippi_point([SampleBatch((1, 2), rows12 + shift), SampleBatch((2,), rows2)], weights)
        assert moved - base == pytest.approx(0.5 * 1.0 + (-2.0) * (-0.6), abs=1e-13)

    def test_project_order(self):
        rows = np.array([[1.0, 2.0, 3.0]])
        assert project(rows, np.array([1.0, -1.0, 0.5]))[0] == (1.0 - 2.0) + 1.5


class TestInterval:
    def test_quantile(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
        for p in (0.5, 0.9, 0.995, 0.9999):
            assert normal_quantile(p) == pytest.approx(norm.ppf(p), abs=1e-9)

    def test_half_width(self):
        rep = confidence_interval([SampleBatch((1,), unit_variance_rows(100))], WeightScheme({(1,): [1.0]}), 0.05)
        assert rep.variance_estimate == pytest.approx(0.01, rel=1e-12)
        assert rep.half_width == pytest.approx(0.1959964, abs=1e-7)
        lo, hi = rep.interval
        assert lo <= rep.point <= hi

    def test_constant_projections_give_zero_width(self):
        batches = [SampleBatch((1, 2), [[2.0, 1.0], [3.0, 2.0]]), SampleBatch((2,), [5.0, 5.0])]
        rep = confidence_interval(batches, WeightScheme({(1, 2): [1.0, -1.0], (2,): [1.0]}))
        assert rep.interval == (rep.point, rep.point) == (6.0, 6.0)

    def test_single_row_with_weight(self):
        with pytest.raises(DegenerateBatch):
            confidence_interval([SampleBatch((1,), [1.0])], WeightScheme({(1,): [1.0]}))

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            confidence_interval([SampleBatch((1,), [1.0, 2.0])], WeightScheme({(1,): [1.0]}), alpha)

    def test_report_dict(self):
        rep = confidence_interval([SampleBatch((1,), [1.0, 3.0])], WeightScheme({(1,): [1.0]}), 0.1, spend=[2.0])
        d = rep.to_dict()
        assert d["point"] == 2.0 and d["variance"] == 1.0 and d["alpha"] == 0.1
        assert d["allocation"] == {"1": 2} and d["spend"] == [2.0]
        assert d["per_subset"] == [{"subset": "1", "n": 2, "mean": 2.0, "var": 2.0}]

    def test_unbiased_with_fresh_weights(self):
        sigma = np.array([[1.0, 0.7], [0.7, 2.0]])
        mu = np.array([0.3, -1.0])
        alloc = Allocation({(1, 2): 8, (2,): 40})
        weights = optimal_weights(CovarianceMatrix(sigma), TargetSpec.unit(2), alloc)
        rng = np.random.default_rng(31)
        trials = 100_000
        chol = np.linalg.cholesky(sigma)
        joint = mu + rng.normal(size=(trials, 8, 2)) @ chol.T
        proxy = mu[1] + np.sqrt(sigma[1, 1]) * rng.normal(size=(trials, 40))
        lam12, lam2 = weights[(1, 2)], weights[(2,)]
        est = (joint @ lam12).mean(axis=1) + lam2[0] * proxy.mean(axis=1)
        # spot-check the vectorized form against the library on a few trials
        for t in range(5):
            lib = multippi_point([SampleBatch((1, 2), joint[t]), SampleBatch((2,), proxy[t])], weights)
            assert lib == pytest.approx(est[t], abs=1e-12)
        se = est.std(ddof=1) / np.sqrt(trials)
        assert abs(est.mean() - mu[0]) <= 4 * se


class TestBaselines:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.lab = rng.multivariate_normal([1.0, 0.5, 0.0], [[1, 0.8, 0.4], [0.8, 1, 0.3], [0.4, 0.3, 1]], size=60)
        self.unl = rng.multivariate_normal([0.5, 0.0], [[1, 0.3], [0.3, 1]], size=400)

    def test_classical(self):
        rep = classical_estimate(self.lab[:, 0])
        assert rep.point == np.mean(self.lab[:, 0])
        assert rep.variance_estimate == pytest.approx(np.var(self.lab[:, 0], ddof=1) / 60)

    def test_ppi(self):
        rep = ppi_estimate(self.lab[:, :2], self.unl[:, 0])
        expected = np.mean(self.lab[:, 0] - self.lab[:, 1]) + np.mean(self.unl[:, 0])
        assert rep.point == pytest.approx(expected, abs=1e-14)

    def test_ppi_pp_lambda(self):
        x, f = self.lab[:, 0], self.lab[:, 1]
        expected = 400 / 460 * np.cov(x, f)[0, 1] / np.var(f, ddof=1)
        assert ppi_pp_lambda(self.lab[:, :2], 400) == pytest.approx(expected, rel=1e-12)
        assert ppi_pp_lambda(self.lab[:, :2], 0) == 0.0
        assert ppi_pp_lambda(np.column_stack([x, np.ones(60)]), 400) == 0.0

    def test_vector_lambda_reduces_to_scalar(self):
        assert ppi_pp_vector_lambda(self.lab[:, :2], 400)[0] == pytest.approx(ppi_pp_lambda(self.lab[:, :2], 400), rel=1e-12)

    def test_vector_lambda_formula(self):
        s = np.cov(self.lab.T)
        expected = 400 / 460 * np.linalg.solve(s[1:, 1:], s[1:, 0])
        np.testing.assert_allclose(ppi_pp_vector_lambda(self.lab, 400), expected, rtol=1e-10)

    def test_perfect_proxy_variance(self):
        x = self.lab[:, 0]
        lab = np.column_stack([x, x])
        unl = self.unl[:, 0]
        rep = ppi_pp_scalar(lab, unl)
        lam = 400 / 460
        assert rep.extras["lambda"] == pytest.approx(lam, rel=1e-14)
        expected = (1 - lam) ** 2 * np.var(x, ddof=1) / 60 + lam**2 * np.var(unl, ddof=1) / 400
        assert rep.variance_estimate == pytest.approx(expected, rel=1e-10)

    def test_uncorrelated_proxy_large_n(self):
        rng = np.random.default_rng(8)
        lab = rng.normal(size=(2000, 2))
        rep = ppi_pp_scalar(lab, rng.normal(size=200_000))
        assert abs(rep.extras["lambda"]) < 0.1
        assert rep.point == pytest.approx(np.mean(lab[:, 0]), abs=0.01)

    def test_cascade_without_proxies_is_classical(self):
        rep = cascade_estimate(self.lab[:, :2], self.unl, self.unl[:, 1], 0.0, 0.0)
        assert rep.point == np.mean(self.lab[:, 0])

    def test_shape_errors(self):
        with pytest.raises(CountMismatch):
            ppi_estimate(self.lab, self.unl[:, 0])
        with pytest.raises(CountMismatch):
            ppi_pp_vector(self.lab, self.unl[:, :1])


class TestPipeline:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.sigma = np.array([[1.0, 0.8, 0.5], [0.8, 1.0, 0.5], [0.5, 0.5, 1.0]])
        self.lab = rng.multivariate_normal(np.zeros(3), self.sigma, size=100)
        self.rng = rng

    def draw_factory(self, seed):
        rng = np.random.default_rng(seed)

        def draw(subset, n):
            idx = np.asarray(subset) - 1
            return rng.multivariate_normal(np.zeros(len(idx)), self.sigma[np.ix_(idx, idx)], size=n)

        return draw

    def test_zero_money_uses_labeled_rows_only(self):
        cm = cost_additive([1.25, 0.30], budget=0.0, labeled_cap=100)
        reduced, keep = prune_zero_budgets(cm)
        assert reduced.family.subsets == ((1, 2, 3),)
        assert keep.tolist() == [0]
        rep = pipeline_run(self.lab, PipelineConfig(100, cm), self.draw_factory(0))
        assert rep.allocation == Allocation({(1, 2, 3): 100})
        assert rep.point == np.mean(self.lab[:, 0])

    def test_deterministic(self):
        cm = cost_additive([1.25, 0.30], budget=80.0, labeled_cap=100)
        a = pipeline_run(self.lab, PipelineConfig(100, cm), self.draw_factory(5))
        b = pipeline_run(self.lab, PipelineConfig(100, cm), self.draw_factory(5))
        assert a.to_json() == b.to_json()

    def test_budget_respected_and_unbiased_weights(self):
        cm = cost_additive([1.25, 0.30], budget=80.0, labeled_cap=100)
        rep = pipeline_run(self.lab, PipelineConfig(100, cm), self.draw_factory(1))
        assert np.all(rep.spend <= cm.budgets * (1 + 1e-12))
        w = WeightScheme(rep.extras["weights"])
        assert w.residual(TargetSpec.unit(3)) <= 1e-10
        assert all(n >= 2 for n in rep.allocation.counts.values())

    def test_restricted_family(self):
        cm = cost_additive([1.25, 0.30], budget=80.0, labeled_cap=100, family="restricted")
        rep = pipeline_run(self.lab, PipelineConfig(100, cm, family="restricted"), self.draw_factory(1))
        assert set(rep.allocation.counts) <= {(1, 2, 3), (2, 3), (2,), (3,)}

    def test_config_checks(self):
        cm = cost_additive([1.25, 0.30], budget=80.0, labeled_cap=100)
        with pytest.raises(TooFewSamples):
            PipelineConfig(1, cm)
        with pytest.raises(ValueError):
            PipelineConfig(100, cm, alpha=1.5)
        with pytest.raises(MissingSubset):
            PipelineConfig(100, cost_additive([1.25, 0.30], budget=80.0))
        with pytest.raises(TooFewSamples):
            pipeline_run(self.lab[:10], PipelineConfig(100, cm), self.draw_factory(0))

    def test_prune_keeps_unrelated_rows(self):
        fam = SubsetFamily(2, ((1, 2), (2,)))
        cm = CostModel(fam, [[0.0, 1.0], [1.0, 0.0]], [0.0, 10.0])
        reduced, keep = prune_zero_budgets(cm)
        assert keep.tolist() == [0]
        assert reduced.family.subsets == ((1, 2),)
        np.testing.assert_array_equal(reduced.budgets, [10.0])
