"""
Transformation graph of a feature-computing inference pipeline.

A pipeline spec is a JSON document:

    {
      "nodes": [
        {"id": "input", "kind": "Input", "execution_class": "Interpreted",
         "inputs": [], "output_features": [], "cost_spec": {"fixed_us": 0}},
        {"id": "word_tfidf", "kind": "Transform", "execution_class": "Compilable",
         "inputs": ["input"], "output_features": ["word_0", "word_1"],
         "cost_spec": {"measure": true}},
        ...
      ],
      "model_node": "model"
    }

Field names are exact; unknown fields are rejected. Graphs are immutable once
loaded and every query on them is a pure function.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import NamedTuple, Optional, Tuple

import networkx as nx

logger = logging.getLogger(__name__)

NODE_FIELDS = ("id", "kind", "execution_class", "inputs", "output_features", "cost_spec")
TOP_LEVEL_FIELDS = ("nodes", "model_node")


class GraphParseError(ValueError):
    pass


class GraphValidationError(ValueError):
    pass


class NodeKind(str, Enum):
    INPUT = "Input"
    TRANSFORM = "Transform"
    MODEL = "Model"


class ExecutionClass(str, Enum):
    COMPILABLE = "Compilable"
    INTERPRETED = "Interpreted"


@dataclass(frozen=True)
class CostSpec:
    """
    Either a fixed simulated cost in microseconds per row, or None to
    request empirical measurement.
    """
    fixed_us: Optional[float] = None

    @property
    def measure(self):
        return self.fixed_us is None

    def to_dict(self):
        if self.measure:
            return {"measure": True}
        return {"fixed_us": self.fixed_us}


@dataclass(frozen=True)
class TransformNode:
    id: str
    kind: NodeKind
    execution_class: ExecutionClass
    inputs: Tuple[str, ...] = ()
    output_features: Tuple[str, ...] = ()
    cost_spec: CostSpec = CostSpec(fixed_us=0.0)

    def to_dict(self):
        return {"id": self.id,
                "kind": self.kind.value,
                "execution_class": self.execution_class.value,
                "inputs": list(self.inputs),
                "output_features": list(self.output_features),
                "cost_spec": self.cost_spec.to_dict()}


class SortResult(NamedTuple):
    order: Tuple[str, ...]
    transitions: int
    naive_transitions: int


class TransformationGraph:
    """
    Validated DAG of transformation nodes. Node order is the order in which
    nodes were declared, so identical documents give identical graphs.
    """

    def __init__(self, nodes, model_node):
        nodes = tuple(nodes)
        dag, feature_index = _validate(nodes, model_node)
        self._nodes = MappingProxyType({n.id: n for n in nodes})
        self._feature_index = MappingProxyType(feature_index)
        self._dag = nx.freeze(dag)
        self.model_node = model_node

    @property
    def nodes(self):
        return self._nodes

    @property
    def feature_index(self):
        return self._feature_index

    @property
    def dag(self):
        return self._dag

    @property
    def feature_columns(self):
        """
        Columns the model consumes: everything not declared by the Model node.
        """
        return tuple(c for c, n in self._feature_index.items() if n != self.model_node)

    def node(self, node_id):
        try:
            return self._nodes[node_id]
        except KeyError:
            raise GraphValidationError("unknown node id {!r}".format(node_id)) from None

    def input_nodes(self):
        return tuple(n.id for n in self._nodes.values() if n.kind is NodeKind.INPUT)

    def feature_nodes(self):
        """
        Nodes that are neither Input nor Model, in declaration order.
        """
        return tuple(n.id for n in self._nodes.values()
                     if n.kind is NodeKind.TRANSFORM)

    def to_dict(self):
        return {"nodes": [n.to_dict() for n in self._nodes.values()],
                "model_node": self.model_node}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def __eq__(self, other):
        if not isinstance(other, TransformationGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return "TransformationGraph({} nodes, {} features)".format(
            len(self._nodes), len(self._feature_index))


def _parse_node(raw, position):
    if not isinstance(raw, dict):
        raise GraphParseError("node #{} is not an object".format(position))
    unknown = sorted(set(raw) - set(NODE_FIELDS))
    if unknown:
        raise GraphParseError("node #{}: unknown field(s) {}".format(position, unknown))
    missing = [f for f in NODE_FIELDS if f not in raw]
    if missing:
        raise GraphParseError("node #{}: missing field(s) {}".format(position, missing))

    node_id = raw["id"]
    if not isinstance(node_id, str):
        raise GraphParseError("node #{}: id must be a string".format(position))
    try:
        kind = NodeKind(raw["kind"])
        execution_class = ExecutionClass(raw["execution_class"])
    except ValueError as e:
        raise GraphParseError("node {!r}: {}".format(node_id, e)) from None

    for key in ("inputs", "output_features"):
        value = raw[key]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise GraphParseError("node {!r}: {} must be a list of strings".format(node_id, key))

    cost = raw["cost_spec"]
    if cost == {"measure": True}:
        cost_spec = CostSpec(fixed_us=None)
    elif (isinstance(cost, dict) and set(cost) == {"fixed_us"}
          and isinstance(cost["fixed_us"], (int, float))
          and not isinstance(cost["fixed_us"], bool)
          and cost["fixed_us"] >= 0):
        cost_spec = CostSpec(fixed_us=float(cost["fixed_us"]))
    else:
        raise GraphParseError(
            "node {!r}: cost_spec must be {{\"fixed_us\": number >= 0}} or "
            "{{\"measure\": true}}, got {!r}".format(node_id, cost))

    return TransformNode(id=node_id, kind=kind, execution_class=execution_class,
                         inputs=tuple(raw["inputs"]),
                         output_features=tuple(raw["output_features"]),
                         cost_spec=cost_spec)


def _validate(nodes, model_node):
    """
    Check every graph invariant, raising on the first violation.
    Returns the networkx DAG and the feature index.
    """
    ids = set()
    for node in nodes:
        if not node.id:
            raise GraphValidationError("empty node id")
        if node.id in ids:
            raise GraphValidationError("duplicate node id {!r}".format(node.id))
        ids.add(node.id)

    for node in nodes:
        for parent in node.inputs:
            if parent not in ids:
                raise GraphValidationError(
                    "node {!r} references unknown input {!r}".format(node.id, parent))

    models = [n.id for n in nodes if n.kind is NodeKind.MODEL]
    if len(models) != 1:
        raise GraphValidationError(
            "expected exactly one Model node, found {}".format(len(models)))
    if models[0] != model_node:
        raise GraphValidationError(
            "model_node {!r} is not the Model node {!r}".format(model_node, models[0]))

    for node in nodes:
        if model_node in node.inputs:
            raise GraphValidationError("Model node has consumers ({!r})".format(node.id))
        if node.kind is NodeKind.INPUT and node.inputs:
            raise GraphValidationError("Input node {!r} has inputs".format(node.id))

    dag = nx.DiGraph()
    dag.add_nodes_from(n.id for n in nodes)
    for node in nodes:
        for parent in node.inputs:
            dag.add_edge(parent, node.id)
    if not nx.is_directed_acyclic_graph(dag):
        cycle = [edge[0] for edge in nx.find_cycle(dag)]
        raise GraphValidationError("cycle through {}".format(" -> ".join(cycle)))

    feature_index = {}
    for node in nodes:
        for column in node.output_features:
            if column in feature_index:
                raise GraphValidationError(
                    "duplicate feature column {!r} (produced by {!r} and {!r})".format(
                        column, feature_index[column], node.id))
            feature_index[column] = node.id

    inputs = {n.id for n in nodes if n.kind is NodeKind.INPUT}
    for node in nodes:
        if node.kind is not NodeKind.INPUT and not (nx.ancestors(dag, node.id) & inputs):
            raise GraphValidationError(
                "node {!r} is not reachable from any Input node".format(node.id))
    model_ancestors = nx.ancestors(dag, model_node)
    for node in nodes:
        if node.id != model_node and node.id not in model_ancestors:
            raise GraphValidationError(
                "dead node {!r}: the Model node is not reachable from it".format(node.id))

    return dag, feature_index


def load_graph(spec_text):
    """
    Parse and validate a pipeline spec document.
    """
    try:
        doc = json.loads(spec_text)
    except json.JSONDecodeError as e:
        raise GraphParseError("malformed pipeline spec: {}".format(e)) from None
    if not isinstance(doc, dict):
        raise GraphParseError("pipeline spec must be a JSON object")
    unknown = sorted(set(doc) - set(TOP_LEVEL_FIELDS))
    if unknown:
        raise GraphParseError("unknown top-level field(s) {}".format(unknown))
    missing = [f for f in TOP_LEVEL_FIELDS if f not in doc]
    if missing:
        raise GraphParseError("missing top-level field(s) {}".format(missing))
    if not isinstance(doc["nodes"], list):
        raise GraphParseError("nodes must be a list")
    if not isinstance(doc["model_node"], str):
        raise GraphParseError("model_node must be a string")

    nodes = [_parse_node(raw, i) for i, raw in enumerate(doc["nodes"])]
    graph = TransformationGraph(nodes, doc["model_node"])
    logger.debug("loaded %r", graph)
    return graph


def load_graph_file(path):
    with open(path) as f:
        text = f.read()
    try:
        return load_graph(text)
    except (GraphParseError, GraphValidationError) as e:
        raise type(e)("{}: {}".format(path, e)) from None


def ancestors(g, n):
    """
    All nodes from which n is reachable, including n itself.
    """
    g.node(n)
    return frozenset(nx.ancestors(g.dag, n)) | {n}


def transition_count(g, order):
    return sum(1 for a, b in zip(order, order[1:])
               if g.nodes[a].execution_class is not g.nodes[b].execution_class)


def sort_minimizing_transitions(g):
    """
    Topological order with few Compilable/Interpreted transitions.

    Start from the lexicographic topological sort, then move each Interpreted
    node to the earliest index after all of its parents. A move is kept only
    if it does not increase the transition count. The Model node always comes
    last since every other node is its ancestor.
    """
    naive = list(nx.lexicographical_topological_sort(g.dag))
    naive_transitions = transition_count(g, naive)

    order = list(naive)
    best = naive_transitions
    interpreted = [n for n in naive
                   if g.nodes[n].execution_class is ExecutionClass.INTERPRETED
                   and n != g.model_node]
    for node_id in interpreted:
        i = order.index(node_id)
        j = max((order.index(p) for p in g.nodes[node_id].inputs), default=-1) + 1
        if j >= i:
            continue
        candidate = order[:j] + [node_id] + order[j:i] + order[i + 1:]
        count = transition_count(g, candidate)
        if count <= best:
            order, best = candidate, count

    assert order[-1] == g.model_node
    return SortResult(tuple(order), best, naive_transitions)
