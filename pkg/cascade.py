"""
End-to-end cascades.

Training sweeps candidate feature budgets c_max = 0.1..1.0 x cost(F). For
each budget it selects feature groups, trains an approximate model of the
original model's class on those groups only, calibrates the confidence
threshold on the holdout split and scores the candidate by its expected
per-row cost

    expected cost = h * cost(S) + (1 - h) * cost(F)

where h is the fraction of holdout rows the approximate model answers. The
cheapest candidate wins; if it cannot beat cost(F) there is no cascade.

At serving time rows whose approximate confidence exceeds the threshold are
answered from the selected groups alone, the rest pay for every feature and
the original model.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, NamedTuple, Optional, Tuple

import numpy as np

from dataset import project, split_indices
from executor import SimulatedExecutor, feature_matrix
from feature_groups import (GroupCostTable, compute_group_statistics,
                            identify_feature_groups, measure_node_costs)
from knapsack import select_feature_groups
from models import Task, TrainedModel, get_bundle
from pipeline_graph import NodeKind
from utils import median_us_per_row

logger = logging.getLogger(__name__)

BUDGET_FRACTIONS = tuple(i / 10 for i in range(1, 11))
DEFAULT_ACCURACY_DELTA = 0.001


class CascadeError(ValueError):
    pass


class InfeasibleTargetError(ValueError):
    def __init__(self, original_score, accuracy_target):
        super(InfeasibleTargetError, self).__init__(
            "accuracy target {:.6f} is above the original model's holdout score {:.6f}".format(
                accuracy_target, original_score))
        self.original_score = original_score
        self.accuracy_target = accuracy_target


class ThresholdCalibrationRecord(NamedTuple):
    approx_prediction: float
    original_prediction: float
    approx_confidence: float
    true_label: float


def calibration_records(approx_predictions, original_predictions, confidences, labels):
    return [ThresholdCalibrationRecord(float(s), float(f), float(c), float(y))
            for s, f, c, y in zip(approx_predictions, original_predictions, confidences, labels)]


def _record_arrays(records):
    columns = np.array(records, dtype=np.float64).reshape(len(records), 4)
    return columns[:, 0], columns[:, 1], columns[:, 2], columns[:, 3]


def cascade_threshold(records, bundle, a_t):
    """
    Lowest threshold t such that answering rows with confidence > t from the
    approximate model and the rest from the original still scores >= a_t.
    Returns (t, h) where h is the fraction of rows with confidence > t.
    t below every confidence means "always approximate".
    """
    if not records:
        raise CascadeError("no calibration records")
    s, f, c, y = _record_arrays(records)
    if np.any((c < 0) | (c > 1)):
        raise CascadeError("confidences must lie in [0, 1]")

    original_score = bundle.score(f, y)
    if original_score < a_t:
        raise InfeasibleTargetError(original_score, a_t)

    candidates = np.concatenate([[np.nextafter(c.min(), -np.inf)], np.unique(c)])
    for t in candidates:
        approximate = c > t
        if bundle.score(np.where(approximate, s, f), y) >= a_t:
            return float(t), float(approximate.mean())
    # the largest candidate never approximates, so it scores original_score
    raise AssertionError("unreachable: pure original model is always feasible")


def expected_cost(h, cost_s, cost_f):
    return h * cost_s + (1.0 - h) * cost_f


@dataclass(frozen=True)
class AccuracyTarget:
    """
    Either an absolute holdout score, or a delta below the original model's
    holdout score.
    """
    absolute: Optional[float] = None
    delta: float = DEFAULT_ACCURACY_DELTA

    def resolve(self, original_score):
        if self.absolute is not None:
            return float(self.absolute)
        return float(original_score - self.delta)

    def to_dict(self):
        if self.absolute is not None:
            return {"absolute": self.absolute}
        return {"delta": self.delta}


@dataclass(frozen=True)
class NoCascade:
    reason: str
    original_score: float
    accuracy_target: float


@dataclass(frozen=True, eq=False)
class CascadeConfig:
    bundle: dict
    selected_groups: Tuple[int, ...]
    approx_nodes: Tuple[str, ...]
    full_nodes: Tuple[str, ...]
    approximate_model: TrainedModel
    original_model: TrainedModel
    threshold: float
    holdout_approx_fraction: float
    accuracy_target: float
    cost_s_us: float
    cost_f_us: float
    expected_cost_us: float
    original_score: float
    holdout_score: float
    timing: Dict[str, float] = field(default_factory=dict)

    def recompute_expected_cost(self):
        return expected_cost(self.holdout_approx_fraction, self.cost_s_us, self.cost_f_us)

    @property
    def predicted_speedup(self):
        return self.cost_f_us / self.expected_cost_us if self.expected_cost_us > 0 else float("inf")

    def to_dict(self):
        return {"kind": "cascade",
                "bundle": self.bundle,
                "selected_groups": list(self.selected_groups),
                "approx_nodes": list(self.approx_nodes),
                "full_nodes": list(self.full_nodes),
                "threshold": self.threshold,
                "holdout_approx_fraction": self.holdout_approx_fraction,
                "accuracy_target": self.accuracy_target,
                "cost_s_us": self.cost_s_us,
                "cost_f_us": self.cost_f_us,
                "expected_cost_us": self.expected_cost_us,
                "original_score": self.original_score,
                "holdout_score": self.holdout_score,
                "approximate_model": self.approximate_model.to_dict(),
                "original_model": self.original_model.to_dict(),
                "timing": dict(self.timing)}

    def to_json(self, include_timing=True):
        doc = self.to_dict()
        if not include_timing:
            del doc["timing"]
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        if doc.get("kind") != "cascade":
            raise CascadeError("not a cascade config (kind={!r})".format(doc.get("kind")))
        return cls(bundle=doc["bundle"],
                   selected_groups=tuple(doc["selected_groups"]),
                   approx_nodes=tuple(doc["approx_nodes"]),
                   full_nodes=tuple(doc["full_nodes"]),
                   approximate_model=TrainedModel.from_dict(doc["approximate_model"]),
                   original_model=TrainedModel.from_dict(doc["original_model"]),
                   threshold=doc["threshold"],
                   holdout_approx_fraction=doc["holdout_approx_fraction"],
                   accuracy_target=doc["accuracy_target"],
                   cost_s_us=doc["cost_s_us"],
                   cost_f_us=doc["cost_f_us"],
                   expected_cost_us=doc["expected_cost_us"],
                   original_score=doc["original_score"],
                   holdout_score=doc["holdout_score"],
                   timing=doc.get("timing", {}))

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise CascadeError("malformed cascade config: {}".format(e)) from None
        return cls.from_dict(doc)

    def load_bundle(self):
        return get_bundle(self.bundle["name"], **self.bundle["params"])


def measure_inference_us(bundle, model, X, repetitions=3):
    def run():
        bundle.predict(model, X)
        if bundle.confidence is not None:
            bundle.confidence(model, X)
    return median_us_per_row(run, X.shape[0], repetitions)


class _Candidate(NamedTuple):
    groups: FrozenSet[int]
    model: TrainedModel
    threshold: float
    h: float
    cost_s: float
    expected_us: float
    holdout_score: float


class OptimizerSetup(object):
    """
    State shared by a budget sweep: the train/holdout split, per-node costs,
    the original model, scored feature groups and cost(F). Cascade and top-K
    training both start from it.
    """

    def __init__(self, g, d, bundle, seed=0, node_costs=None, executor=None,
                 inference_cost="measure", holdout_fraction=0.25, n_shuffles=3,
                 cost_sample_rows=1000, cost_repetitions=3, n_jobs=1):
        if not g.feature_columns:
            raise CascadeError("pipeline has no feature columns")
        self.g, self.d, self.bundle = g, d, bundle
        self.seed = seed
        self.inference_cost = inference_cost
        self.cost_repetitions = cost_repetitions
        self.n_shuffles = n_shuffles
        self.n_jobs = n_jobs

        self.train_rows, self.holdout_rows = split_indices(d.labels, holdout_fraction, seed)
        self.train = d.subset(self.train_rows)
        self.holdout = d.subset(self.holdout_rows)

        if node_costs is None:
            executor = executor or SimulatedExecutor(d)
            sample = self.train_rows[:cost_sample_rows]
            node_costs = measure_node_costs(g, sample, executor, cost_repetitions)
        self.node_costs = node_costs
        self.columns = g.feature_columns
        self.full_nodes = tuple(n for n in g.nodes
                                if g.nodes[n].kind is not NodeKind.MODEL)

        start = time.perf_counter()
        self.original = self.fit(self.columns)
        self.timing = {"original_train_seconds": time.perf_counter() - start}

        groups = identify_feature_groups(g, node_costs)
        self.groups = compute_group_statistics(groups, bundle, self.original, self.holdout,
                                               n_shuffles, seed, n_jobs)
        self.cost_table = GroupCostTable(self.groups, node_costs)
        self.inference_f = self.inference_us(self.original)
        self.cost_f = self.cost_table.full_cost_us + self.inference_f

    def fit(self, columns):
        X = project(self.train, columns)
        return self.bundle.fit(X, self.train.labels, columns)

    def inference_us(self, model):
        if self.inference_cost == "measure":
            X = project(self.holdout, model.feature_columns)
            return measure_inference_us(self.bundle, model, X, self.cost_repetitions)
        return float(self.inference_cost)

    def columns_of(self, group_ids):
        chosen = set()
        for group in self.groups:
            if group.id in group_ids:
                chosen.update(group.columns)
        return tuple(c for c in self.columns if c in chosen)

    def approximate(self, group_ids):
        """
        (model, cost(S)) for group_ids; the original model when S covers F.
        """
        if len(group_ids) == len(self.groups):
            return self.original, self.cost_f
        model = self.fit(self.columns_of(group_ids))
        return model, self.cost_table.cost_of(group_ids) + self.inference_us(model)

    def approx_nodes(self, group_ids):
        nodes = self.cost_table.nodes_of(group_ids)
        return tuple(n for n in self.full_nodes if n in nodes)

    def selections(self):
        """
        Distinct non-empty group sets chosen over the budgets 0.1..1.0 x cost(F).
        """
        feature_cost_f = self.cost_table.full_cost_us
        selections = []
        for fraction in BUDGET_FRACTIONS:
            chosen = select_feature_groups(self.groups, fraction * feature_cost_f, self.cost_table)
            if not chosen:
                logger.debug("c_max %.2f selects no groups, skipped", fraction * feature_cost_f)
            elif chosen not in selections:
                selections.append(chosen)
        return selections

    def map(self, fn, items):
        if self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]


class CascadeTrainer(OptimizerSetup):
    def __init__(self, g, d, bundle, target, seed=0, **options):
        if bundle.task is not Task.CLASSIFICATION:
            raise CascadeError("{} performs regression and cannot be cascaded".format(bundle.name))
        super(CascadeTrainer, self).__init__(g, d, bundle, seed, **options)
        self.original_predictions, _ = self.holdout_outputs(self.original)
        self.original_score = self.bundle.score(self.original_predictions, self.holdout.labels)
        self.a_t = target.resolve(self.original_score)
        logger.info("original holdout score %.4f, target %.4f, cost(F) %.2f us",
                    self.original_score, self.a_t, self.cost_f)

    def holdout_outputs(self, model):
        X = project(self.holdout, model.feature_columns)
        return self.bundle.predict(model, X), self.bundle.confidence(model, X)

    def evaluate(self, group_ids):
        """
        Train and calibrate the approximate model on group_ids. Returns a
        _Candidate, or None if the accuracy target is out of reach.
        """
        model, cost_s = self.approximate(group_ids)
        predictions, confidences = self.holdout_outputs(model)
        records = calibration_records(predictions, self.original_predictions,
                                      confidences, self.holdout.labels)
        try:
            t, h = cascade_threshold(records, self.bundle, self.a_t)
        except InfeasibleTargetError as e:
            logger.debug("groups %s infeasible: %s", sorted(group_ids), e)
            return None

        mixed = np.where(confidences > t, predictions, self.original_predictions)
        candidate = _Candidate(groups=group_ids, model=model, threshold=t, h=h, cost_s=cost_s,
                               expected_us=expected_cost(h, cost_s, self.cost_f),
                               holdout_score=self.bundle.score(mixed, self.holdout.labels))
        logger.info("groups %s: t=%.4f h=%.3f cost(S)=%.2f expected=%.2f", sorted(group_ids),
                    t, h, cost_s, candidate.expected_us)
        return candidate

    def sweep(self):
        return [c for c in self.map(self.evaluate, self.selections()) if c is not None]


def train_cascade(g, d, bundle, target=None, seed=0, **options):
    """
    Train a cascade for pipeline g on dataset d. Returns a CascadeConfig, or
    NoCascade when no candidate is feasible or none beats cost(F).
    """
    start = time.perf_counter()
    trainer = CascadeTrainer(g, d, bundle, target or AccuracyTarget(), seed, **options)

    candidates = trainer.sweep()
    if not candidates:
        return NoCascade("accuracy target {:.6f} is infeasible for every feature set".format(
            trainer.a_t), trainer.original_score, trainer.a_t)

    best = min(candidates, key=lambda c: (c.expected_us, c.cost_s, sorted(c.groups)))
    if best.expected_us >= trainer.cost_f:
        return NoCascade("best expected cost {:.2f} us does not beat cost(F) {:.2f} us".format(
            best.expected_us, trainer.cost_f), trainer.original_score, trainer.a_t)

    trainer.timing["optimizer_seconds"] = time.perf_counter() - start
    config = CascadeConfig(bundle=bundle.to_dict(),
                           selected_groups=tuple(sorted(best.groups)),
                           approx_nodes=trainer.approx_nodes(best.groups),
                           full_nodes=trainer.full_nodes,
                           approximate_model=best.model,
                           original_model=trainer.original,
                           threshold=best.threshold,
                           holdout_approx_fraction=best.h,
                           accuracy_target=trainer.a_t,
                           cost_s_us=best.cost_s,
                           cost_f_us=trainer.cost_f,
                           expected_cost_us=best.expected_us,
                           original_score=trainer.original_score,
                           holdout_score=best.holdout_score,
                           timing=trainer.timing)
    logger.info("cascade on groups %s: threshold %.4f, h %.3f, expected %.2f us (speedup %.2fx)",
                list(config.selected_groups), config.threshold, config.holdout_approx_fraction,
                config.expected_cost_us, config.predicted_speedup)
    return config


def _predict_batch(cfg, bundle, computer, rows):
    approx, original = cfg.approximate_model, cfg.original_model
    known = computer.compute(rows, cfg.approx_nodes)
    X = feature_matrix(known, approx.feature_columns, len(rows))
    predictions = np.asarray(bundle.predict(approx, X), dtype=np.float64).copy()
    hard = np.flatnonzero(bundle.confidence(approx, X) <= cfg.threshold)
    if hard.size:
        remaining = [n for n in cfg.full_nodes if n not in cfg.approx_nodes]
        columns = computer.compute(rows[hard], remaining,
                                   known={c: v[hard] for c, v in known.items()})
        X = feature_matrix(columns, original.feature_columns, hard.size)
        predictions[hard] = bundle.predict(original, X)
    return predictions


def predict_cascaded(cfg, bundle, computer, rows, batch=True):
    """
    Cascaded predictions for rows (row ids served by computer's executor).
    With batch=False rows are answered one at a time, as point queries are.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if batch:
        return _predict_batch(cfg, bundle, computer, rows)
    return np.concatenate([_predict_batch(cfg, bundle, computer, rows[i:i + 1])
                           for i in range(rows.size)]) if rows.size else np.empty(0)


def predict_full(model, bundle, computer, rows, node_ids):
    """
    Baseline: every feature, then the original model.
    """
    rows = np.asarray(rows, dtype=np.int64)
    columns = computer.compute(rows, node_ids)
    return bundle.predict(model, feature_matrix(columns, model.feature_columns, rows.size))
