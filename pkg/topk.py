"""
Approximate top-K queries.

A cheap filter model, trained on a subset S of feature groups, scores every
candidate; only the best r*K survive to have their remaining features
computed and be ranked by the original model. The expected cost of a query
over N rows is

    cost(S) * N + (cost(F) - cost(S)) * r * K

averaged over the user's distributions of K and N. r is the smallest
expansion factor for which simulated queries on the holdout split meet the
accuracy bound often enough, as judged by a Wilson score interval.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Tuple

import numpy as np
from scipy.stats import norm

from cascade import OptimizerSetup
from dataset import project
from executor import feature_matrix
from models import TrainedModel, get_bundle

logger = logging.getLogger(__name__)

METRICS = ("precision", "recall")
MIN_TRIALS = 30


class TopKError(ValueError):
    pass


def topk_expected_cost(cost_s, cost_f, n_bar, k_bar, r):
    """
    Expected microseconds per top-K query.
    """
    return cost_s * n_bar + (cost_f - cost_s) * r * k_bar


def wilson_interval(successes, trials, confidence=0.95):
    """
    Two-sided Wilson score interval for a binomial proportion.
    """
    if trials <= 0:
        raise TopKError("trials must be positive")
    if not 0 <= successes <= trials:
        raise TopKError("successes must lie in [0, trials]")
    z = norm.ppf(1 - (1 - confidence) / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return center - half, center + half


def rank_order(scores):
    """
    Positions sorted by descending score, ties by position.
    """
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))


class RChoice(NamedTuple):
    r: int
    degraded: bool
    successes: Dict[int, int]


def r_cap(k_dist, n_dist):
    return max(1, min(math.ceil(max(n_dist) / min(k_dist)),
                      math.floor(np.mean(n_dist) / np.mean(k_dist))))


def _check_distributions(k_dist, n_dist):
    for name, dist in (("k_dist", k_dist), ("n_dist", n_dist)):
        if not dist or not all(isinstance(v, (int, np.integer)) and v >= 1 for v in dist):
            raise TopKError("{} must be a non-empty list of positive integers".format(name))


def _trial_ranks(approx_scores, true_scores, k_dist, n_dist, n_trials, seed):
    """
    For every simulated query: K and the approximate ranks (within the
    sampled N rows) of the query's exact top-K rows.
    """
    trials = []
    for stream in np.random.SeedSequence(seed).spawn(n_trials):
        rng = np.random.default_rng(stream)
        k = int(rng.choice(k_dist))
        n = int(rng.choice(n_dist))
        k = min(k, n)
        sample = rng.choice(approx_scores.size, size=n, replace=False)
        exact = rank_order(true_scores[sample])[:k]
        approx_rank = np.empty(n, dtype=np.int64)
        approx_rank[rank_order(approx_scores[sample])] = np.arange(n)
        trials.append((k, np.sort(approx_rank[exact])))
    return trials


def _trial_accuracy(k, ranks, r, metric):
    # rerank by the original model keeps every surviving exact top-K row, so
    # precision and recall both count the survivors
    survivors = int(np.searchsorted(ranks, r * k, side="left"))
    return survivors / k


def choose_r(approx_scores, true_scores, k_dist, n_dist, metric="precision", a_t=0.95,
             n_trials=100, seed=0, confidence=0.95, success_rate=0.95):
    """
    Smallest r for which the Wilson interval of the trial success rate lies
    entirely above success_rate. Returns the cap with degraded=True when no
    smaller r qualifies.
    """
    approx_scores = np.asarray(approx_scores, dtype=np.float64)
    true_scores = np.asarray(true_scores, dtype=np.float64)
    _check_distributions(k_dist, n_dist)
    if metric not in METRICS:
        raise TopKError("metric must be one of {}, got {!r}".format(METRICS, metric))
    if n_trials < MIN_TRIALS:
        raise TopKError("n_trials must be >= {}".format(MIN_TRIALS))
    if approx_scores.shape != true_scores.shape:
        raise TopKError("approximate and true scores differ in length")
    if approx_scores.size < max(n_dist):
        raise TopKError("holdout has {} rows, smaller than max(n_dist) = {}".format(
            approx_scores.size, max(n_dist)))

    trials = _trial_ranks(approx_scores, true_scores, k_dist, n_dist, n_trials, seed)
    cap = r_cap(k_dist, n_dist)
    successes = {}
    for r in range(1, max(cap, 2)):
        successes[r] = sum(_trial_accuracy(k, ranks, r, metric) >= a_t for k, ranks in trials)
        lower, _ = wilson_interval(successes[r], n_trials, confidence)
        logger.debug("r=%d: %d/%d successes, lower bound %.4f", r, successes[r], n_trials, lower)
        if lower > success_rate:
            return RChoice(r, False, successes)
    return RChoice(cap, True, successes)


@dataclass(frozen=True, eq=False)
class TopKConfig:
    bundle: dict
    selected_groups: Tuple[int, ...]
    approx_nodes: Tuple[str, ...]
    full_nodes: Tuple[str, ...]
    approximate_model: TrainedModel
    original_model: TrainedModel
    r_factor: int
    k_distribution: Tuple[int, ...]
    n_distribution: Tuple[int, ...]
    accuracy_bound: float
    accuracy_metric: str
    cost_s_us: float
    cost_f_us: float
    expected_cost_us: float
    degraded: bool = False
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def k_bar(self):
        return float(np.mean(self.k_distribution))

    @property
    def n_bar(self):
        return float(np.mean(self.n_distribution))

    def recompute_expected_cost(self):
        return topk_expected_cost(self.cost_s_us, self.cost_f_us, self.n_bar, self.k_bar, self.r_factor)

    def to_dict(self):
        return {"kind": "topk",
                "bundle": self.bundle,
                "selected_groups": list(self.selected_groups),
                "approx_nodes": list(self.approx_nodes),
                "full_nodes": list(self.full_nodes),
                "r_factor": self.r_factor,
                "k_distribution": list(self.k_distribution),
                "n_distribution": list(self.n_distribution),
                "accuracy_bound": self.accuracy_bound,
                "accuracy_metric": self.accuracy_metric,
                "cost_s_us": self.cost_s_us,
                "cost_f_us": self.cost_f_us,
                "expected_cost_us": self.expected_cost_us,
                "degraded": self.degraded,
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
        if doc.get("kind") != "topk":
            raise TopKError("not a top-K config (kind={!r})".format(doc.get("kind")))
        return cls(bundle=doc["bundle"],
                   selected_groups=tuple(doc["selected_groups"]),
                   approx_nodes=tuple(doc["approx_nodes"]),
                   full_nodes=tuple(doc["full_nodes"]),
                   approximate_model=TrainedModel.from_dict(doc["approximate_model"]),
                   original_model=TrainedModel.from_dict(doc["original_model"]),
                   r_factor=doc["r_factor"],
                   k_distribution=tuple(doc["k_distribution"]),
                   n_distribution=tuple(doc["n_distribution"]),
                   accuracy_bound=doc["accuracy_bound"],
                   accuracy_metric=doc["accuracy_metric"],
                   cost_s_us=doc["cost_s_us"],
                   cost_f_us=doc["cost_f_us"],
                   expected_cost_us=doc["expected_cost_us"],
                   degraded=doc["degraded"],
                   timing=doc.get("timing", {}))

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise TopKError("malformed top-K config: {}".format(e)) from None
        return cls.from_dict(doc)

    def load_bundle(self):
        return get_bundle(self.bundle["name"], **self.bundle["params"])


class _Candidate(NamedTuple):
    groups: frozenset
    model: TrainedModel
    choice: RChoice
    cost_s: float
    expected_us: float


class TopKTrainer(OptimizerSetup):
    def __init__(self, g, d, bundle, k_dist, n_dist, metric="precision", a_t=0.95, seed=0,
                 n_trials=100, confidence=0.95, success_rate=0.95, **options):
        _check_distributions(k_dist, n_dist)
        if metric not in METRICS:
            raise TopKError("metric must be one of {}, got {!r}".format(METRICS, metric))
        super(TopKTrainer, self).__init__(g, d, bundle, seed, **options)
        if self.holdout.row_count < max(n_dist):
            raise TopKError("holdout has {} rows, smaller than max(n_dist) = {}".format(
                self.holdout.row_count, max(n_dist)))
        self.k_dist, self.n_dist = tuple(k_dist), tuple(n_dist)
        self.k_bar, self.n_bar = float(np.mean(k_dist)), float(np.mean(n_dist))
        self.metric, self.a_t = metric, a_t
        self.trial_options = dict(n_trials=n_trials, seed=seed, confidence=confidence,
                                  success_rate=success_rate)
        self.true_scores = self.scores(self.original)

    def scores(self, model):
        return self.bundle.rank_score(model, project(self.holdout, model.feature_columns))

    def evaluate(self, group_ids):
        model, cost_s = self.approximate(group_ids)
        choice = choose_r(self.scores(model), self.true_scores, self.k_dist, self.n_dist,
                          self.metric, self.a_t, **self.trial_options)
        expected_us = topk_expected_cost(cost_s, self.cost_f, self.n_bar, self.k_bar, choice.r)
        logger.info("groups %s: r=%d%s cost(S)=%.2f expected %.2f us", sorted(group_ids),
                    choice.r, " (degraded)" if choice.degraded else "", cost_s, expected_us)
        return _Candidate(group_ids, model, choice, cost_s, expected_us)


def train_topk(g, d, bundle, k_dist, n_dist, metric="precision", a_t=0.95, seed=0, **options):
    """
    Choose the filter feature set and expansion factor minimizing expected
    query cost. Candidates whose accuracy guarantee is degraded only win when
    every candidate is degraded.
    """
    start = time.perf_counter()
    trainer = TopKTrainer(g, d, bundle, k_dist, n_dist, metric, a_t, seed, **options)
    candidates = trainer.map(trainer.evaluate, trainer.selections())
    if not candidates:
        raise TopKError("no non-empty feature set fits any budget")

    best = min(candidates, key=lambda c: (c.choice.degraded, c.expected_us, c.cost_s, sorted(c.groups)))
    trainer.timing["optimizer_seconds"] = time.perf_counter() - start
    config = TopKConfig(bundle=bundle.to_dict(),
                        selected_groups=tuple(sorted(best.groups)),
                        approx_nodes=trainer.approx_nodes(best.groups),
                        full_nodes=trainer.full_nodes,
                        approximate_model=best.model,
                        original_model=trainer.original,
                        r_factor=best.choice.r,
                        k_distribution=trainer.k_dist,
                        n_distribution=trainer.n_dist,
                        accuracy_bound=a_t,
                        accuracy_metric=metric,
                        cost_s_us=best.cost_s,
                        cost_f_us=trainer.cost_f,
                        expected_cost_us=best.expected_us,
                        degraded=best.choice.degraded,
                        timing=trainer.timing)
    if config.degraded:
        logger.warning("no feature set meets the accuracy bound; r capped at %d", config.r_factor)
    logger.info("top-K filter on groups %s: r=%d, expected %.2f us per query",
                list(config.selected_groups), config.r_factor, config.expected_cost_us)
    return config


def _check_query(rows, k):
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise TopKError("empty candidate set")
    if k < 1:
        raise TopKError("k must be >= 1, got {}".format(k))
    return rows


def query_topk(cfg, bundle, computer, rows, k):
    """
    Row ids of the approximate top k of rows, best first. Ties rank the
    earlier candidate first.
    """
    rows = _check_query(rows, k)
    approx = cfg.approximate_model
    known = computer.compute(rows, cfg.approx_nodes)
    scores = bundle.rank_score(approx, feature_matrix(known, approx.feature_columns, rows.size))
    kept = np.sort(rank_order(scores)[:min(cfg.r_factor * k, rows.size)])

    remaining = [n for n in cfg.full_nodes if n not in cfg.approx_nodes]
    columns = computer.compute(rows[kept], remaining,
                               known={c: v[kept] for c, v in known.items()})
    original = cfg.original_model
    scores = bundle.rank_score(original, feature_matrix(columns, original.feature_columns, kept.size))
    return rows[kept[rank_order(scores)[:k]]]


def query_topk_exact(model, bundle, computer, rows, k, node_ids):
    """
    Exact top k: every feature of every row, ranked by the original model.
    """
    rows = _check_query(rows, k)
    columns = computer.compute(rows, node_ids)
    scores = bundle.rank_score(model, feature_matrix(columns, model.feature_columns, rows.size))
    return rows[rank_order(scores)[:k]]
