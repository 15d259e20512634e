"""
Synthetic workloads with planted signal.

A workload spec declares feature groups with a per-row cost and a signal
strength. Generation yields a pipeline graph (one Input node, one Transform
node per group with the declared fixed cost, one Model node) and a dataset
whose group columns carry the requested signal.

For classification, groups cheaper than the mean group cost carry amplified
signal on "easy" rows and none on the rest; the other groups carry the label
on the remaining "hard" rows only. A model on cheap groups alone is then
confident exactly on the easy rows, and the full model leans on the cheap
groups for most of its accuracy. Ranking workloads use task
"regression": every group observes the same latent score with its own
signal-to-noise mix.
"""

import json
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from dataset import LABEL_COLUMN, Dataset
from pipeline_graph import (CostSpec, ExecutionClass, NodeKind, TransformationGraph,
                            TransformNode)

logger = logging.getLogger(__name__)

TASKS = ("classification", "regression")


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    n_columns: int
    cost_us: float
    signal_strength: float


@dataclass(frozen=True)
class SyntheticWorkloadSpec:
    n_rows: int
    groups: Tuple[GroupSpec, ...]
    easy_fraction: float = 0.9
    label_noise: float = 0.0
    seed: int = 0
    task: str = "classification"

    def __post_init__(self):
        if self.n_rows < 2:
            raise WorkloadError("n_rows must be >= 2")
        if not self.groups:
            raise WorkloadError("a workload needs at least one group")
        for i, group in enumerate(self.groups, start=1):
            if group.n_columns < 1:
                raise WorkloadError("group {}: n_columns must be >= 1".format(i))
            if group.cost_us < 0:
                raise WorkloadError("group {}: cost_us must be >= 0".format(i))
            if not 0 <= group.signal_strength <= 1:
                raise WorkloadError("group {}: signal_strength must lie in [0, 1]".format(i))
        if not 0 <= self.easy_fraction <= 1:
            raise WorkloadError("easy_fraction must lie in [0, 1]")
        if not 0 <= self.label_noise <= 1:
            raise WorkloadError("label_noise must lie in [0, 1]")
        if self.task not in TASKS:
            raise WorkloadError("task must be one of {}".format(TASKS))

    @property
    def cheap_groups(self):
        """
        1-based indices of groups cheaper than the mean group cost.
        """
        mean = np.mean([g.cost_us for g in self.groups])
        return tuple(i for i, g in enumerate(self.groups, start=1) if g.cost_us < mean)

    @classmethod
    def from_dict(cls, doc):
        try:
            groups = tuple(GroupSpec(**g) for g in doc.pop("groups"))
            return cls(groups=groups, **doc)
        except (KeyError, TypeError) as e:
            raise WorkloadError("bad workload spec: {}".format(e)) from None


def load_workload_spec(path):
    """
    Read the `workload_config` section of a JSON file.
    """
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise WorkloadError("{}: {}".format(path, e)) from None
    if "workload_config" not in doc:
        raise WorkloadError("{}: no workload_config section".format(path))
    try:
        return SyntheticWorkloadSpec.from_dict(dict(doc["workload_config"]))
    except WorkloadError as e:
        raise WorkloadError("{}: {}".format(path, e)) from None


def column_name(group, column):
    return "g{}_c{}".format(group, column)


def workload_graph(spec):
    nodes = [TransformNode(id="input", kind=NodeKind.INPUT,
                           execution_class=ExecutionClass.INTERPRETED)]
    for g, group in enumerate(spec.groups, start=1):
        nodes.append(TransformNode(
            id="group{}".format(g), kind=NodeKind.TRANSFORM,
            execution_class=ExecutionClass.COMPILABLE, inputs=("input",),
            output_features=tuple(column_name(g, j) for j in range(1, group.n_columns + 1)),
            cost_spec=CostSpec(fixed_us=float(group.cost_us))))
    nodes.append(TransformNode(id="model", kind=NodeKind.MODEL,
                               execution_class=ExecutionClass.COMPILABLE,
                               inputs=tuple(n.id for n in nodes[1:]),
                               cost_spec=CostSpec(fixed_us=0.0)))
    return TransformationGraph(nodes, "model")


def _classification(spec, rng):
    n = spec.n_rows
    labels = rng.integers(0, 2, size=n).astype(np.float64)
    s = 2 * labels - 1
    easy = rng.random(n) < spec.easy_fraction
    cheap = spec.cheap_groups
    # without cheap groups there is nothing to split the rows on
    hard = ~easy if cheap else np.ones(n, dtype=bool)

    columns = {}
    for g, group in enumerate(spec.groups, start=1):
        sigma = group.signal_strength
        if g in cheap:
            signal = np.where(easy, 2 * sigma * s, 0.0)
        else:
            signal = np.where(hard, sigma * s, 0.0)
        for j in range(1, group.n_columns + 1):
            columns[column_name(g, j)] = signal + (1 - sigma) * rng.standard_normal(n)

    flip = rng.random(n) < spec.label_noise
    labels = np.where(flip, 1 - labels, labels)
    return columns, labels


def _regression(spec, rng):
    n = spec.n_rows
    latent = rng.standard_normal(n)
    columns = {}
    for g, group in enumerate(spec.groups, start=1):
        sigma = group.signal_strength
        for j in range(1, group.n_columns + 1):
            columns[column_name(g, j)] = sigma * latent + (1 - sigma) * rng.standard_normal(n)
    labels = latent + spec.label_noise * rng.standard_normal(n)
    return columns, labels


def generate_workload(spec):
    """
    (TransformationGraph, Dataset) for spec. The same spec always yields the
    same dataset.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.task == "classification":
        columns, labels = _classification(spec, rng)
    else:
        columns, labels = _regression(spec, rng)
    if LABEL_COLUMN in columns:
        raise WorkloadError("feature column collides with the label column")
    graph = workload_graph(spec)
    d = Dataset(columns, labels)
    logger.info("generated %s workload: %s, cheap groups %s",
                spec.task, d, list(spec.cheap_groups))
    return graph, d
