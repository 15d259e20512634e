"""
Small constructors for graphs, datasets and trained models used across the
test modules. Plain functions so hypothesis tests can call them directly.
"""

import json

import numpy as np

from dataset import Dataset
from models import TrainedModel
from pipeline_graph import (CostSpec, ExecutionClass, NodeKind, TransformationGraph,
                            TransformNode)


def node(node_id, kind="Transform", inputs=(), outputs=(), cost=0.0,
         execution_class="Compilable"):
    return TransformNode(id=node_id,
                         kind=NodeKind(kind),
                         execution_class=ExecutionClass(execution_class),
                         inputs=tuple(inputs),
                         output_features=tuple(outputs),
                         cost_spec=CostSpec(fixed_us=None if cost is None else float(cost)))


def graph(*nodes):
    model = [n.id for n in nodes if n.kind is NodeKind.MODEL][0]
    return TransformationGraph(nodes, model)


def spec_text(nodes, model_node="model", **extra):
    doc = {"nodes": nodes, "model_node": model_node}
    doc.update(extra)
    return json.dumps(doc)


def raw_node(node_id, kind="Transform", inputs=(), outputs=(), cost=0.0,
             execution_class="Compilable"):
    return {"id": node_id, "kind": kind, "execution_class": execution_class,
            "inputs": list(inputs), "output_features": list(outputs),
            "cost_spec": {"fixed_us": cost}}


def shared_preprocessing_graph():
    """
    Two features behind one expensive preprocessing step plus two independent
    features: groups cost 50, 40 and 10.
    """
    return graph(
        node("input", "Input", execution_class="Interpreted"),
        node("preprocess", inputs=["input"], cost=48, execution_class="Interpreted"),
        node("feature_a", inputs=["preprocess"], outputs=["a"], cost=1),
        node("feature_b", inputs=["preprocess"], outputs=["b"], cost=1),
        node("feature_c", inputs=["input"], outputs=["c"], cost=40),
        node("feature_d", inputs=["input"], outputs=["d"], cost=10, execution_class="Interpreted"),
        node("model", "Model", inputs=["feature_a", "feature_b", "feature_c", "feature_d"]))


def chained_sharing_graph():
    """
    a shares enough with b, and b with c, but a and c alone would not merge.
    """
    return graph(
        node("input", "Input", execution_class="Interpreted"),
        node("x", inputs=["input"], cost=100),
        node("y", inputs=["x"], cost=50),
        node("z", inputs=["y"], cost=120),
        node("fa", inputs=["x"], outputs=["a"], cost=1),
        node("fb", inputs=["y"], outputs=["b"], cost=1),
        node("fc", inputs=["z"], outputs=["c"], cost=1),
        node("model", "Model", inputs=["fa", "fb", "fc"]))


def independent_groups_graph(costs):
    """
    One Transform node per cost, each producing one column g<i>.
    """
    nodes = [node("input", "Input", execution_class="Interpreted")]
    for i, cost in enumerate(costs, start=1):
        nodes.append(node("n{}".format(i), inputs=["input"], outputs=["g{}".format(i)], cost=cost))
    nodes.append(node("model", "Model", inputs=[n.id for n in nodes[1:]]))
    return graph(*nodes)


def separable_dataset(n_rows=400, n_features=2, seed=0):
    """
    Balanced binary labels; every column is label signal plus small noise.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n_rows) % 2
    s = 2.0 * labels - 1
    columns = {"x{}".format(j): s + 0.3 * rng.standard_normal(n_rows) for j in range(n_features)}
    return Dataset(columns, labels)


def logistic_model(columns, weight, bias=0.0):
    """
    A logistic TrainedModel with explicit weights on unstandardized inputs.
    """
    weight = np.asarray(weight, dtype=np.float64)
    return TrainedModel(payload={"weight": weight,
                                 "bias": np.array([bias]),
                                 "mean": np.zeros_like(weight),
                                 "scale": np.ones_like(weight)},
                        feature_columns=tuple(columns),
                        model_name="logistic_regression")
