import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade import (AccuracyTarget, CascadeConfig, CascadeError, InfeasibleTargetError,
                     NoCascade, OptimizerSetup, ThresholdCalibrationRecord, cascade_threshold,
                     expected_cost, predict_cascaded, predict_full, train_cascade)
from conftest import planted_spec
from dataset import project
from models import builtin_linear_regression, builtin_logistic_regression
from workload import GroupSpec, SyntheticWorkloadSpec, generate_workload

FREE = dict(inference_cost=0.0)


def records(rows):
    """
    rows of (confidence, approximate correct, original correct) for label 1.
    """
    return [ThresholdCalibrationRecord(float(s_ok), float(f_ok), c, 1.0) for c, s_ok, f_ok in rows]


def mixed_score(recs, t):
    s, f, c, y = (np.array(v) for v in zip(*recs))
    return np.mean(np.where(c > t, s, f) == y)


@pytest.fixture(scope="module")
def planted_cascade():
    g, d = generate_workload(planted_spec())
    bundle = builtin_logistic_regression()
    return g, d, bundle, train_cascade(g, d, bundle, seed=0, **FREE)


class TestCascadeThreshold:

    def test_lowest_feasible_threshold(self, logistic):
        recs = records([(0.99, 1, 1), (0.95, 1, 1), (0.90, 0, 1), (0.80, 1, 1), (0.60, 0, 1)])
        t, h = cascade_threshold(recs, logistic, 0.8)
        assert t == 0.60
        assert h == pytest.approx(0.8)

    def test_identical_models_always_approximate(self, logistic):
        recs = records([(0.7, 1, 1), (0.6, 0, 0), (0.9, 1, 1)])
        t, h = cascade_threshold(recs, logistic, 2 / 3)
        assert t < 0.6
        assert h == 1.0

    def test_zero_target_always_approximates(self, logistic):
        recs = records([(0.7, 0, 1), (0.55, 0, 1)])
        t, h = cascade_threshold(recs, logistic, 0.0)
        assert t < 0.55
        assert h == 1.0

    def test_infeasible_target(self, logistic):
        recs = records([(0.7, 1, 1), (0.8, 1, 0)])
        with pytest.raises(InfeasibleTargetError) as info:
            cascade_threshold(recs, logistic, 0.9)
        assert info.value.original_score == 0.5

    def test_empty_records(self, logistic):
        with pytest.raises(CascadeError):
            cascade_threshold([], logistic, 0.5)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
                              st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=20),
           st.floats(min_value=0.0, max_value=1.0))
    def test_no_lower_candidate_is_feasible(self, rows, a_t):
        bundle = builtin_logistic_regression()
        recs = records(rows)
        if np.mean([f for _, _, f in rows]) < a_t:
            with pytest.raises(InfeasibleTargetError):
                cascade_threshold(recs, bundle, a_t)
            return
        t, h = cascade_threshold(recs, bundle, a_t)
        confidences = np.array([c for c, _, _ in rows])
        assert mixed_score(recs, t) >= a_t
        assert h == np.mean(confidences > t)
        lower = [np.nextafter(confidences.min(), -np.inf)] + sorted(set(confidences))
        assert all(mixed_score(recs, u) < a_t for u in lower if u < t)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(min_value=0.5, max_value=1.0),
                              st.integers(0, 1), st.just(1)), min_size=1, max_size=20),
           st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.0, max_value=1.0))
    def test_raising_target_never_raises_h(self, rows, a, b):
        bundle = builtin_logistic_regression()
        low, high = sorted((a, b))
        _, h_low = cascade_threshold(records(rows), bundle, low)
        _, h_high = cascade_threshold(records(rows), bundle, high)
        assert h_high <= h_low


class TestExpectedCost:

    def test_values(self):
        assert expected_cost(0.8, 10.0, 100.0) == pytest.approx(28.0)
        assert expected_cost(1.0, 10.0, 100.0) == 10.0
        assert expected_cost(0.0, 10.0, 100.0) == 100.0

    def test_default_target_is_a_tenth_of_a_percent_below(self):
        assert AccuracyTarget().resolve(0.9) == pytest.approx(0.899)
        assert AccuracyTarget(absolute=0.7).resolve(0.9) == 0.7


class TestTrainCascade:

    def test_planted_workload(self, planted_cascade):
        _, _, _, cfg = planted_cascade
        assert isinstance(cfg, CascadeConfig)
        assert cfg.selected_groups == (1,)
        assert cfg.holdout_approx_fraction >= 0.7
        assert cfg.expected_cost_us <= 0.5 * cfg.cost_f_us
        assert cfg.predicted_speedup > 2

    def test_cheap_group_carries_the_importance(self, planted_workload):
        g, d = planted_workload
        setup = OptimizerSetup(g, d, builtin_logistic_regression(), seed=0, **FREE)
        cheap, expensive = setup.groups
        assert cheap.importance > 0.3
        assert cheap.importance > expensive.importance

    def test_stored_cost_matches_parts(self, planted_cascade):
        cfg = planted_cascade[3]
        assert cfg.recompute_expected_cost() == cfg.expected_cost_us

    def test_holdout_meets_target(self, planted_cascade):
        cfg = planted_cascade[3]
        assert cfg.holdout_score >= cfg.accuracy_target

    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    def test_fresh_data_meets_target(self, seed, free_computer):
        g, d = generate_workload(planted_spec(seed=seed, n_rows=10000))
        bundle = builtin_logistic_regression()
        cfg = train_cascade(g, d, bundle, seed=seed, **FREE)
        assert isinstance(cfg, CascadeConfig)
        assert cfg.selected_groups == (1,)
        fresh_g, fresh = generate_workload(planted_spec(seed=100 + seed, n_rows=2000))
        computer = free_computer(fresh_g, fresh)
        rows = np.arange(fresh.row_count)
        cascaded = bundle.score(predict_cascaded(cfg, bundle, computer, rows), fresh.labels)
        original = bundle.score(predict_full(cfg.original_model, bundle, computer, rows, cfg.full_nodes),
                                fresh.labels)
        assert cascaded >= original - 0.001 - 0.02

    def test_single_group_has_no_cascade(self, logistic):
        spec = SyntheticWorkloadSpec(n_rows=2000, groups=(GroupSpec(4, 100.0, 0.5),), seed=3)
        g, d = generate_workload(spec)
        result = train_cascade(g, d, logistic, **FREE)
        assert isinstance(result, NoCascade)
        assert "does not beat" in result.reason

    def test_impossible_target(self, logistic):
        g, d = generate_workload(planted_spec(n_rows=2000))
        result = train_cascade(g, d, logistic, target=AccuracyTarget(absolute=1.01), **FREE)
        assert isinstance(result, NoCascade)
        assert result.accuracy_target == 1.01

    def test_regression_is_rejected(self, ranking_workload):
        g, d = ranking_workload
        with pytest.raises(CascadeError, match="performs regression and cannot be cascaded"):
            train_cascade(g, d, builtin_linear_regression(), **FREE)

    def test_same_seed_same_config(self, planted_cascade):
        g, d, bundle, cfg = planted_cascade
        again = train_cascade(g, d, bundle, seed=0, **FREE)
        assert again.to_json(include_timing=False) == cfg.to_json(include_timing=False)


class TestCascadeConfig:

    def test_json_reload(self, planted_cascade):
        cfg = planted_cascade[3]
        reloaded = CascadeConfig.from_json(cfg.to_json())
        assert reloaded.to_json() == cfg.to_json()
        assert reloaded.load_bundle().name == "logistic_regression"

    def test_wrong_kind(self):
        with pytest.raises(CascadeError, match="not a cascade config"):
            CascadeConfig.from_dict({"kind": "topk"})

    def test_malformed(self):
        with pytest.raises(CascadeError, match="malformed"):
            CascadeConfig.from_json("{")


class TestPredictCascaded:

    def rows_and_matrix(self, d, model, n=300):
        rows = np.arange(n)
        return rows, project(d.subset(rows), model.feature_columns)

    def test_sentinel_threshold_uses_approximate_model_only(self, planted_cascade, free_computer):
        g, d, bundle, cfg = planted_cascade
        always = dataclasses.replace(cfg, threshold=-1.0)
        rows, X = self.rows_and_matrix(d, cfg.approximate_model)
        computer = free_computer(g, d)
        expected = bundle.predict(cfg.approximate_model, X)
        np.testing.assert_array_equal(predict_cascaded(always, bundle, computer, rows), expected)

    def test_threshold_one_uses_original_model_only(self, planted_cascade, free_computer):
        g, d, bundle, cfg = planted_cascade
        never = dataclasses.replace(cfg, threshold=1.0)
        rows, X = self.rows_and_matrix(d, cfg.original_model)
        computer = free_computer(g, d)
        expected = bundle.predict(cfg.original_model, X)
        np.testing.assert_array_equal(predict_cascaded(never, bundle, computer, rows), expected)
        np.testing.assert_array_equal(
            predict_full(cfg.original_model, bundle, computer, rows, cfg.full_nodes), expected)

    def test_point_queries_match_batch(self, planted_cascade, free_computer):
        g, d, bundle, cfg = planted_cascade
        computer = free_computer(g, d)
        rows = np.arange(0, 400, 7)
        np.testing.assert_array_equal(predict_cascaded(cfg, bundle, computer, rows, batch=False),
                                      predict_cascaded(cfg, bundle, computer, rows))
