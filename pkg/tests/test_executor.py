import time

import numpy as np
import pytest

from builders import node, shared_preprocessing_graph
from dataset import Dataset
from executor import (FeatureComputer, NodeExecutionError, NodeExecutor, SimulatedExecutor,
                      feature_matrix)


def shared_data(n_rows=6):
    values = np.arange(n_rows, dtype=np.float64)
    return Dataset({c: values + i for i, c in enumerate("abcd")}, np.arange(n_rows) % 2)


class RecordingExecutor(NodeExecutor):
    def __init__(self, data):
        self.inner = SimulatedExecutor(data, time_scale=0.0)
        self.calls = []

    def run_node(self, node, rows):
        self.calls.append(node.id)
        return self.inner.run_node(node, rows)


class FailingExecutor(NodeExecutor):
    def run_node(self, node, rows):
        raise KeyError("boom")


class TestSimulatedExecutor:

    def test_serves_node_columns(self):
        executor = SimulatedExecutor(shared_data(), time_scale=0.0)
        out = executor.run_node(node("f", outputs=["a", "c"], cost=5), np.array([1, 3]))
        np.testing.assert_array_equal(out["a"], [1.0, 3.0])
        np.testing.assert_array_equal(out["c"], [3.0, 5.0])

    def test_node_costs(self):
        executor = SimulatedExecutor(shared_data(), hidden_costs={"m": 7.0})
        assert executor.node_cost_us(node("input", "Input", cost=99)) == 0.0
        assert executor.node_cost_us(node("m", cost=None)) == 7.0
        assert executor.node_cost_us(node("q", cost=None)) == 0.0
        assert executor.node_cost_us(node("f", cost=12)) == 12.0

    def test_spins_for_declared_cost(self):
        executor = SimulatedExecutor(shared_data(n_rows=100))
        start = time.perf_counter()
        executor.run_node(node("f", outputs=["a"], cost=200), np.arange(100))
        assert time.perf_counter() - start >= 0.02


class TestFeatureComputer:

    def test_runs_requested_nodes_in_sorted_order(self):
        g = shared_preprocessing_graph()
        executor = RecordingExecutor(shared_data())
        computer = FeatureComputer(g, executor)
        requested = {"input", "preprocess", "feature_a", "feature_d", "model"}
        columns = computer.compute(np.arange(6), requested)
        assert set(columns) == {"a", "d"}
        assert executor.calls == [n for n in computer.order if n in requested and n != "model"]

    def test_known_columns_are_kept(self):
        g = shared_preprocessing_graph()
        computer = FeatureComputer(g, SimulatedExecutor(shared_data(), time_scale=0.0))
        rows = np.array([0, 2])
        known = computer.compute(rows, {"input", "feature_c"})
        columns = computer.compute(rows, {"feature_d"}, known=known)
        assert set(columns) == {"c", "d"}

    def test_failures_name_the_node(self):
        computer = FeatureComputer(shared_preprocessing_graph(), FailingExecutor())
        with pytest.raises(NodeExecutionError) as info:
            computer.compute(np.arange(2), {"feature_c"})
        assert info.value.node_id == "feature_c"
        assert isinstance(info.value.cause, KeyError)


class TestFeatureMatrix:

    def test_stacks_in_name_order(self):
        columns = {"a": np.array([1.0, 2.0]), "b": np.array([3.0, 4.0])}
        np.testing.assert_array_equal(feature_matrix(columns, ["b", "a"], 2), [[3.0, 1.0], [4.0, 2.0]])

    def test_no_names(self):
        assert feature_matrix({}, [], 3).shape == (3, 0)
