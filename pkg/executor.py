"""
Executing transformation nodes.

Raw inputs are row ids into a backing table. A NodeExecutor runs one node on a
batch of rows and returns the feature columns that node produces. The
simulated executor realizes each node's per-row cost with a calibrated spin
and serves precomputed feature values, which is how synthetic workloads
stand in for real featurization code.
"""

import logging

import numpy as np

from pipeline_graph import NodeKind, sort_minimizing_transitions
from utils import spin_wait

logger = logging.getLogger(__name__)


class NodeExecutionError(RuntimeError):
    def __init__(self, node_id, cause):
        super(NodeExecutionError, self).__init__("node {!r} failed: {}".format(node_id, cause))
        self.node_id = node_id
        self.cause = cause


class NodeExecutor(object):
    """
    Interface: run_node(node, rows) -> {feature column: values for rows}.
    """

    def run_node(self, node, rows):
        raise NotImplementedError


class SimulatedExecutor(NodeExecutor):
    """
    Spins node cost * len(rows) microseconds, then returns the node's feature
    columns for `rows` from `data`. Nodes whose cost is measured rather than
    declared spin for `hidden_costs[node.id]` (default 0) per row. time_scale
    multiplies every spin; 0 serves features without waiting.
    """

    def __init__(self, data, hidden_costs=None, time_scale=1.0):
        self.data = data
        self.hidden_costs = dict(hidden_costs or {})
        self.time_scale = time_scale

    def node_cost_us(self, node):
        if node.kind is NodeKind.INPUT:
            return 0.0
        if node.cost_spec.measure:
            return self.hidden_costs.get(node.id, 0.0)
        return node.cost_spec.fixed_us

    def run_node(self, node, rows):
        spin_wait(self.time_scale * self.node_cost_us(node) * len(rows))
        return {c: self.data.columns[c][rows] for c in node.output_features}


class FeatureComputer(object):
    """
    Runs subsets of a graph's nodes in transition-minimizing order.
    """

    def __init__(self, graph, executor):
        self.graph = graph
        self.executor = executor
        self.order = sort_minimizing_transitions(graph).order

    def run(self, node, rows):
        try:
            return self.executor.run_node(node, rows)
        except NodeExecutionError:
            raise
        except Exception as e:
            raise NodeExecutionError(node.id, e) from e

    def compute(self, rows, node_ids, known=None):
        """
        Execute every Input or Transform node in node_ids on rows. `known` holds
        columns already computed for these rows; they are carried through.
        """
        columns = dict(known or {})
        for node_id in self.order:
            node = self.graph.nodes[node_id]
            if node_id in node_ids and node.kind is not NodeKind.MODEL:
                columns.update(self.run(node, rows))
        return columns


def feature_matrix(columns, names, n_rows):
    if not names:
        return np.empty((n_rows, 0), dtype=np.float64)
    return np.column_stack([columns[c] for c in names])
