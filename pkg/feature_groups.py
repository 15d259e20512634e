"""
Feature groups: computationally independent sets of feature columns, with
their empirical cost and permutation importance.

Two features share a group when the cost of their shared dependencies exceeds
the cost of each feature's unshared dependencies. That pairwise rule is closed
transitively (union-find) so the groups partition the feature columns.
Features produced by one node always share a group.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import FrozenSet, Tuple

import numpy as np
from networkx.utils import UnionFind

from dataset import project
from executor import NodeExecutionError
from pipeline_graph import NodeKind, ancestors
from utils import median_us_per_row

logger = logging.getLogger(__name__)


class FeatureGroupError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureGroup:
    id: int
    columns: Tuple[str, ...]
    producing_nodes: FrozenSet[str]
    cost_us: float
    importance: float = 0.0

    def with_importance(self, importance):
        return replace(self, importance=float(importance))


class GroupCostTable:
    """
    cost(S) sums per-node costs over the union of the producing nodes of S,
    so dependencies shared between groups are paid once.
    """

    def __init__(self, groups, node_costs):
        self.node_costs = dict(node_costs)
        self.group_nodes = {g.id: g.producing_nodes for g in groups}
        self.group_costs = {g.id: g.cost_us for g in groups}
        self.full_cost_us = self.cost_of(self.group_nodes)

    def nodes_of(self, group_ids):
        nodes = set()
        for gid in group_ids:
            nodes |= self.group_nodes[gid]
        return frozenset(nodes)

    def cost_of(self, group_ids):
        return nodes_cost(self.nodes_of(group_ids), self.node_costs)


def nodes_cost(nodes, node_costs):
    return float(sum(node_costs.get(n, 0.0) for n in sorted(nodes)))


def _complete_costs(g, node_costs):
    costs = {}
    for node in g.nodes.values():
        if node.kind is NodeKind.INPUT:
            costs[node.id] = 0.0
        elif node.kind is NodeKind.TRANSFORM:
            if node.id not in node_costs:
                raise FeatureGroupError("missing cost for node {!r}".format(node.id))
            costs[node.id] = float(node_costs[node.id])
    return costs


def should_merge(anc_a, anc_b, costs):
    shared = anc_a & anc_b
    shared_cost = nodes_cost(shared, costs)
    return (shared_cost > nodes_cost(anc_a - shared, costs)
            and shared_cost > nodes_cost(anc_b - shared, costs))


def identify_feature_groups(g, node_costs):
    """
    Partition the graph's feature columns into groups. Group ids start at 1
    and follow the declaration order of each group's first column.
    """
    costs = _complete_costs(g, node_costs)
    columns = g.feature_columns
    if not columns:
        raise FeatureGroupError("pipeline has no feature columns")

    producers = []
    for c in columns:
        if g.feature_index[c] not in producers:
            producers.append(g.feature_index[c])
    anc = {p: ancestors(g, p) for p in producers}

    # the merge rule only depends on ancestor sets, so work per producer
    uf = UnionFind(range(len(producers)))
    for i, a in enumerate(producers):
        for j in range(i + 1, len(producers)):
            if should_merge(anc[a], anc[producers[j]], costs):
                uf.union(i, j)

    members = {}
    for c in columns:
        root = uf[producers.index(g.feature_index[c])]
        members.setdefault(root, []).append(c)

    groups = []
    for gid, root in enumerate(sorted(members, key=lambda r: columns.index(members[r][0])), start=1):
        cols = tuple(members[root])
        nodes = frozenset().union(*(anc[g.feature_index[c]] for c in cols))
        groups.append(FeatureGroup(id=gid, columns=cols, producing_nodes=nodes,
                                   cost_us=nodes_cost(nodes, costs)))
    logger.info("identified %d feature groups over %d columns", len(groups), len(columns))
    return groups


def measure_node_costs(g, sample_rows, executor, repetitions=3):
    """
    Per-row cost of every non-Model node. Declared costs are taken as is;
    "measure" nodes are timed on sample_rows (median over repetitions).
    Measurement is serialized so timings do not interfere.
    """
    if repetitions < 1:
        raise FeatureGroupError("repetitions must be >= 1")
    rows = np.asarray(sample_rows)
    costs = {}
    for node in g.nodes.values():
        if node.kind is NodeKind.INPUT:
            costs[node.id] = 0.0
        elif node.kind is NodeKind.MODEL:
            continue
        elif not node.cost_spec.measure:
            costs[node.id] = node.cost_spec.fixed_us
        else:
            def run(node=node):
                try:
                    executor.run_node(node, rows)
                except Exception as e:
                    raise NodeExecutionError(node.id, e) from e
            costs[node.id] = median_us_per_row(run, len(rows), repetitions)
            logger.debug("measured %s: %.2f us/row", node.id, costs[node.id])
    return costs


def permutation_importance(group, bundle, model, holdout, n_shuffles=3, seed=0):
    """
    Score drop when all of the group's columns are permuted jointly (one
    shared row permutation) in the holdout. May be negative.
    """
    if n_shuffles < 1:
        raise FeatureGroupError("n_shuffles must be >= 1")
    missing = [c for c in group.columns if c not in holdout.columns]
    if missing:
        raise FeatureGroupError("group {} columns absent from holdout: {}".format(group.id, missing))
    unknown = [c for c in group.columns if c not in model.feature_columns]
    if unknown:
        raise FeatureGroupError("group {} columns unknown to the model: {}".format(group.id, unknown))

    X = project(holdout, model.feature_columns)
    y = holdout.labels
    base = bundle.score(bundle.predict(model, X), y)

    idx = np.array([model.feature_columns.index(c) for c in group.columns])
    rng = np.random.default_rng([seed, group.id])
    drops = []
    for _ in range(n_shuffles):
        perm = rng.permutation(X.shape[0])
        Xs = X.copy()
        Xs[:, idx] = X[np.ix_(perm, idx)]
        drops.append(base - bundle.score(bundle.predict(model, Xs), y))
    return float(np.mean(drops))


def compute_group_statistics(groups, bundle, model, holdout, n_shuffles=3, seed=0, n_jobs=1):
    """
    Groups with importance filled in. Each group owns its RNG stream, so
    results do not depend on n_jobs.
    """
    def importance(group):
        return permutation_importance(group, bundle, model, holdout, n_shuffles, seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            values = list(pool.map(importance, groups))
    else:
        values = [importance(group) for group in groups]
    return [group.with_importance(v) for group, v in zip(groups, values)]


def format_group_table(groups):
    lines = ["{:>5}  {:>12}  {:>10}  {}".format("group", "cost_us", "importance", "columns")]
    for group in groups:
        lines.append("{:>5}  {:>12.2f}  {:>10.4f}  {}".format(
            group.id, group.cost_us, group.importance, " ".join(group.columns)))
    return "\n".join(lines)


def write_group_table(groups, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["group_id", "columns", "cost_us", "importance"])
        writer.writeheader()
        for group in groups:
            writer.writerow({"group_id": group.id,
                             "columns": " ".join(group.columns),
                             "cost_us": group.cost_us,
                             "importance": group.importance})
