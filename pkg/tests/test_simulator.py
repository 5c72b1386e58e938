import json

import numpy as np
import pytest

from multippi.errors import ExhaustedEmpiricalRows, InvalidCovariance, InvalidSubset
from multippi.model import Allocation, TargetSpec
from multippi.simulator import (
    METRIC_COLUMNS,
    GridConfig,
    PopulationSource,
    cost_additive,
    cost_cascading,
    cost_model_from_dict,
    coverage_decay_demo,
    draw_trial,
    load_experiment,
    metrics_csv,
    run_grid,
    run_trials,
    stream,
    subset_mask,
)


class TestCostBuilders:
    def test_additive(self):
        cm = cost_additive([1.25, 0.30])
        assert cm.family.subsets == ((2,), (3,), (2, 3))
        assert cm.cost((2,))[0] == 1.25
        assert cm.cost((3,))[0] == 0.30
        assert cm.cost((2, 3))[0] == pytest.approx(1.55, abs=1e-15)

    def test_additive_with_labeled_cap(self):
        cm = cost_additive([1.25, 0.30], budget=40.0, labeled_cap=250)
        assert cm.family.subsets[0] == (1, 2, 3)
        np.testing.assert_array_equal(cm.cost((1, 2, 3)), [0.0, 1.0])
        np.testing.assert_array_equal(cm.cost((2,)), [1.25, 0.0])
        np.testing.assert_array_equal(cm.budgets, [40.0, 250.0])

    def test_cascading_output_only(self):
        cm = cost_cascading(0.0, 1.0, [125, 500])
        assert [cm.cost(s)[0] for s in cm.family] == [125.0, 500.0, 500.0]

    def test_cascading_mixed(self):
        cm = cost_cascading(1.0, 1.0, [125, 250])
        assert cm.cost((2, 3))[0] == 625.0

    def test_restricted(self):
        cm = cost_additive([1.0, 2.0, 3.0], family="restricted", labeled_cap=10)
        assert cm.family.subsets == ((1, 2, 3, 4), (2, 3, 4), (2,), (3,), (4,))

    def test_from_dict(self):
        assert cost_model_from_dict({"builder": "cascading", "input_rate": 1, "output_rate": 1, "tiers": [125, 250]}).cost((2, 3))[0] == 625.0
        with pytest.raises(ValueError):
            cost_model_from_dict({"builder": "flat"})


class TestStreams:
    def test_mask(self):
        assert subset_mask((1,)) == 1 and subset_mask((2, 3)) == 6

    def test_reproducible(self):
        assert stream(1, 2, 3, 4).random() == stream(1, 2, 3, 4).random()

    def test_cells_differ(self):
        draws = {stream(0, t, s, g).random() for t in range(3) for s in range(3) for g in range(3)}
        assert len(draws) == 27


class TestPopulation:
    SIGMA = [[1.0, 0.8, 0.5], [0.8, 1.0, 0.5], [0.5, 0.5, 1.0]]

    def test_gaussian_moments(self):
        src = PopulationSource.gaussian([1.0, 2.0, 3.0], self.SIGMA)
        x = src.draw(stream(0, 0), (1, 3), 200_000)
        np.testing.assert_allclose(x.mean(axis=0), [1.0, 3.0], atol=0.01)
        np.testing.assert_allclose(np.cov(x.T), [[1.0, 0.5], [0.5, 1.0]], atol=0.01)
        assert src.theta(TargetSpec([1.0, -1.0, 0.0])) == -1.0

    def test_prefix_property(self):
        src = PopulationSource.gaussian(np.zeros(3), self.SIGMA)
        long = src.draw(stream(0, 1, 2, 6), (2, 3), 50)
        short = src.draw(stream(0, 1, 2, 6), (2, 3), 20)
        np.testing.assert_array_equal(short, long[:20])

    def test_gaussian_checks(self):
        with pytest.raises(InvalidCovariance):
            PopulationSource.gaussian([0.0], self.SIGMA)
        with pytest.raises(ValueError):
            PopulationSource("uniform")

    def test_singular_covariance_draws(self):
        src = PopulationSource.gaussian([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
        x = src.draw(stream(0, 0), (1, 2), 10)
        np.testing.assert_allclose(x[:, 0], x[:, 1])

    def test_empirical(self):
        rows = np.arange(12.0).reshape(4, 3)
        src = PopulationSource.empirical(rows)
        np.testing.assert_array_equal(src.population_mean(), [4.5, 5.5, 6.5])
        x = src.draw(stream(0, 0), (2,), 100)
        assert set(x[:, 0]) <= {1.0, 4.0, 7.0, 10.0}

    def test_empirical_without_replacement(self):
        src = PopulationSource.empirical(np.arange(8.0).reshape(4, 2), replace=False)
        x = src.draw(stream(0, 0), (1,), 4)
        assert sorted(x[:, 0]) == [0.0, 2.0, 4.0, 6.0]
        with pytest.raises(ExhaustedEmpiricalRows):
            src.draw(stream(0, 0), (1,), 5)

    def test_round_trip(self, tmp_path):
        src = PopulationSource.gaussian([0.0, 1.0], [[1.0, 0.2], [0.2, 2.0]])
        back = PopulationSource.from_dict(json.loads(json.dumps(src.to_dict())))
        assert back.to_dict() == src.to_dict()
        (tmp_path / "pop.csv").write_text("y,f\n1,2\n3,4\n")
        emp = PopulationSource.from_dict({"kind": "empirical", "path": "pop.csv", "replace": False}, str(tmp_path))
        assert emp.to_dict() == {"kind": "empirical", "rows": [[1.0, 2.0], [3.0, 4.0]], "replace": False}

    def test_draw_trial_reuses_labeled_rows(self):
        src = PopulationSource.gaussian(np.zeros(3), self.SIGMA)
        lab = src.draw_full(stream(0, 0), 10)
        batches = draw_trial(src, Allocation({(1, 2, 3): 4, (2,): 7, (3,): 0}), lab, (1, 2, 3), seed=0)
        by = {b.subset: b for b in batches}
        assert set(by) == {(1, 2, 3), (2,)}
        np.testing.assert_array_equal(by[(1, 2, 3)].rows, lab[:4])
        assert by[(2,)].n == 7


def small_config(**kw):
    base = dict(model_costs={"builder": "additive", "costs": [1.25, 0.30]}, budgets=(10.0, 100.0), trials=30, n_labeled=40)
    base.update(kw)
    return GridConfig(**base)


class TestGrid:
    SRC = PopulationSource.gaussian(np.zeros(3), [[1.0, 0.8, 0.5], [0.8, 1.0, 0.5], [0.5, 0.5, 1.0]])

    def test_classical_only_is_all_ones(self):
        rows = run_grid(self.SRC, small_config(methods=("classical",)))
        assert len(rows) == 2
        for r in rows:
            assert r.ci_width_fraction == 1.0 and r.mse_fraction == 1.0 and r.trials == 30

    def test_reproducible(self):
        methods = ("classical", "ppi:2", "ppi_pp:3", "ppi_pp_vector", "cascade", "multippi", "multippi_restricted")
        a = run_grid(self.SRC, small_config(methods=methods))
        b = run_grid(self.SRC, small_config(methods=methods))
        assert metrics_csv(a) == metrics_csv(b)
        assert all(0 <= r.coverage <= 1 and r.mse_fraction > 0 and r.ci_width_fraction > 0 for r in a)

    def test_classical_added_as_reference(self):
        rows = run_grid(self.SRC, small_config(methods=("multippi",)))
        assert {r.method for r in rows} == {"multippi"}

    def test_metrics_csv_header(self):
        text = metrics_csv(run_grid(self.SRC, small_config(methods=("classical",), budgets=(5.0,))))
        assert text.splitlines()[0] == ",".join(METRIC_COLUMNS)

    def test_width_fraction_tracks_predicted_variance(self):
        rho, n, big_n = 0.8, 40, 80
        src = PopulationSource.gaussian(np.zeros(2), [[1.0, rho], [rho, 1.0]])
        cfg = GridConfig({"builder": "additive", "costs": [1.0]}, (float(big_n),), ("classical", "ppi_pp:2"), trials=3000, n_labeled=n, seed=3)
        rows = {r.method: r for r in run_grid(src, cfg)}
        w = big_n / (n + big_n)
        assert rows["ppi_pp:2"].ci_width_fraction == pytest.approx(1 - w * rho**2, rel=0.05)

    def test_uncorrelated_proxy_gives_no_gain(self):
        src = PopulationSource.gaussian(np.zeros(2), np.eye(2))
        cfg = GridConfig({"builder": "additive", "costs": [0.1]}, (50.0,), ("classical", "multippi"), trials=2000, n_labeled=100, seed=4)
        rows = {r.method: r for r in run_grid(src, cfg)}
        assert rows["multippi"].mse_fraction == pytest.approx(1.0, abs=0.08)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            small_config(methods=("ppi_pp",))
        with pytest.raises(ValueError):
            small_config(methods=("bayes",))
        with pytest.raises(ValueError):
            small_config(trials=0)
        with pytest.raises(ValueError):
            small_config(ci_width_mode="median")

    def test_model_index_beyond_k(self):
        with pytest.raises(InvalidSubset):
            run_trials(self.SRC, small_config(methods=("ppi_pp:4",)))

    def test_mean_of_ratios_mode(self):
        rows = run_grid(self.SRC, small_config(methods=("classical", "ppi_pp:2"), ci_width_mode="mean_of_ratios"))
        assert all(r.ci_width_fraction > 0 for r in rows)

    def test_load_experiment(self):
        text = json.dumps(
            {
                "source": {"kind": "gaussian", "mean": [0, 0], "cov": [[1, 0.5], [0.5, 1]]},
                "cost_model": {"builder": "additive", "costs": [0.5]},
                "budgets": [10, 20],
                "methods": ["classical", "multippi"],
                "trials": 5,
            }
        )
        src, cfg = load_experiment(text)
        assert src.k == 2 and cfg.budgets == (10.0, 20.0) and cfg.trials == 5 and cfg.n_labeled == 250


class TestCoverageDecay:
    def test_gaussian_pair_has_no_bias(self):
        for point in coverage_decay_demo(trials=20000, skew=0.0, seed=1):
            assert abs(point.bias) <= 4 * point.std_error

    def test_bias_grows_and_levels_off(self):
        curve = coverage_decay_demo(trials=20000, seed=2)
        mags = [abs(p.bias) for p in curve]
        assert mags[0] == min(mags)
        assert all(b >= a - 2 * p.std_error for a, b, p in zip(mags, mags[1:], curve[1:]))
        assert abs(mags[-1] - mags[-2]) <= 0.1 * mags[-1]
