"""
Throughput, latency and accuracy measurement for cascades, top-K filters and
their full-pipeline baselines.

Three modes:
  batch  the whole validation set in one call, repeated
  point  one row per call; latency percentiles over the calls
  topk   repeated top-K queries with K and N drawn from the config's
         distributions; precision against the exact top-K

Everything runs on the calling thread.
"""

import logging
import time
from csv import DictWriter
from dataclasses import asdict, dataclass, field, replace
from typing import List

import numpy as np

from cascade import predict_cascaded, predict_full
from dataset import project
from topk import query_topk, query_topk_exact, rank_order

logger = logging.getLogger(__name__)

MODES = ("batch", "point", "topk")
MIN_POINT_QUERIES = 100


class BenchError(ValueError):
    pass


@dataclass
class BenchReport:
    mode: str
    runner: str
    throughput_rows_per_s: float
    latency_p50_us: float
    latency_p99_us: float
    accuracy: float
    n_queries: int
    repetitions: int
    config_summary: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)
    latencies_us: List[float] = field(default_factory=list)
    predictions: List[float] = field(default_factory=list)

    def to_dict(self, include_latencies=False):
        doc = asdict(self)
        if not include_latencies:
            del doc["latencies_us"]
        return doc

    def format_table(self):
        metric = "precision" if self.mode == "topk" else "accuracy"
        lines = ["{} / {}".format(self.runner, self.mode),
                 "  throughput      {:>14.1f} rows/s".format(self.throughput_rows_per_s),
                 "  p50 latency     {:>14.1f} us".format(self.latency_p50_us),
                 "  p99 latency     {:>14.1f} us".format(self.latency_p99_us),
                 "  {:<15} {:>14.4f}".format(metric, self.accuracy),
                 "  queries         {:>14d}".format(self.n_queries)]
        for key, value in sorted(self.ratios.items()):
            lines.append("  {:<15} {:>14.2f}x".format(key, value))
        return "\n".join(lines)


class CascadeRunner(object):
    name = "cascade"

    def __init__(self, cfg, bundle, computer):
        self.cfg, self.bundle, self.computer = cfg, bundle, computer

    def predict(self, rows, batch=True):
        return predict_cascaded(self.cfg, self.bundle, self.computer, rows, batch)

    def summary(self):
        return {"selected_groups": list(self.cfg.selected_groups),
                "threshold": self.cfg.threshold,
                "holdout_approx_fraction": self.cfg.holdout_approx_fraction,
                "expected_cost_us": self.cfg.expected_cost_us}


class TopKRunner(object):
    name = "topk"

    def __init__(self, cfg, bundle, computer):
        self.cfg, self.bundle, self.computer = cfg, bundle, computer

    def topk(self, rows, k):
        return query_topk(self.cfg, self.bundle, self.computer, rows, k)

    def summary(self):
        return {"selected_groups": list(self.cfg.selected_groups),
                "r_factor": self.cfg.r_factor,
                "degraded": self.cfg.degraded,
                "expected_cost_us": self.cfg.expected_cost_us}


class FullRunner(object):
    """
    Every feature of every row, then the original model.
    """
    name = "baseline"

    def __init__(self, model, bundle, computer, node_ids):
        self.model, self.bundle, self.computer = model, bundle, computer
        self.node_ids = tuple(node_ids)

    def predict(self, rows, batch=True):
        if batch:
            return predict_full(self.model, self.bundle, self.computer, rows, self.node_ids)
        return np.concatenate([predict_full(self.model, self.bundle, self.computer,
                                            rows[i:i + 1], self.node_ids)
                               for i in range(len(rows))])

    def topk(self, rows, k):
        return query_topk_exact(self.model, self.bundle, self.computer, rows, k, self.node_ids)

    def summary(self):
        return {"nodes": list(self.node_ids)}


def _timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


def _bench_batch(runner, bundle, dataset, rows, repetitions):
    timings = []
    for _ in range(repetitions):
        predictions, seconds = _timed(runner.predict, rows, True)
        timings.append(seconds)
    seconds = float(np.median(timings))
    latencies = [seconds * 1e6]
    accuracy = bundle.score(predictions, dataset.labels[rows])
    return rows.size / seconds, latencies, accuracy, predictions, 1


def _bench_point(runner, bundle, dataset, rows, n_queries):
    if n_queries < MIN_POINT_QUERIES:
        raise BenchError("point mode needs at least {} queries".format(MIN_POINT_QUERIES))
    queries = rows[np.arange(n_queries) % rows.size]
    latencies, predictions = [], []
    for row in queries:
        prediction, seconds = _timed(runner.predict, np.array([row]), False)
        latencies.append(seconds * 1e6)
        predictions.append(float(prediction[0]))
    accuracy = bundle.score(np.array(predictions), dataset.labels[queries])
    return n_queries / (sum(latencies) / 1e6), latencies, accuracy, np.array(predictions), n_queries


def exact_topk_oracle(original_model, bundle, dataset):
    """
    Original-model scores of every row, computed offline without executors.
    """
    return bundle.rank_score(original_model, project(dataset, original_model.feature_columns))


def _bench_topk(runner, k_dist, n_dist, oracle_scores, rows, n_queries, seed):
    rng = np.random.default_rng(seed)
    latencies, precisions, total_rows = [], [], 0
    for _ in range(n_queries):
        k = int(rng.choice(k_dist))
        n = min(int(rng.choice(n_dist)), rows.size)
        sample = np.sort(rng.choice(rows, size=n, replace=False))
        result, seconds = _timed(runner.topk, sample, k)
        exact = sample[rank_order(oracle_scores[sample])[:k]]
        precisions.append(len(set(result.tolist()) & set(exact.tolist())) / min(k, n))
        latencies.append(seconds * 1e6)
        total_rows += n
    return total_rows / (sum(latencies) / 1e6), latencies, float(np.mean(precisions)), precisions, n_queries


def run_bench(mode, runner, bundle, dataset, rows, repetitions=3, n_point_queries=200,
              n_topk_queries=100, k_dist=None, n_dist=None, original_model=None, seed=0):
    """
    Measure runner on rows of dataset (row ids served by the runner's
    executor). topk mode needs k_dist, n_dist and the original model for the
    exact oracle.
    """
    if mode not in MODES:
        raise BenchError("mode must be one of {}, got {!r}".format(MODES, mode))
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise BenchError("no rows to benchmark")

    if mode == "batch":
        throughput, latencies, accuracy, predictions, n = _bench_batch(
            runner, bundle, dataset, rows, repetitions)
    elif mode == "point":
        throughput, latencies, accuracy, predictions, n = _bench_point(
            runner, bundle, dataset, rows, n_point_queries)
    else:
        if k_dist is None or n_dist is None or original_model is None:
            raise BenchError("topk mode needs k_dist, n_dist and the original model")
        oracle = exact_topk_oracle(original_model, bundle, dataset)
        throughput, latencies, accuracy, predictions, n = _bench_topk(
            runner, k_dist, n_dist, oracle, rows, n_topk_queries, seed)

    report = BenchReport(mode=mode,
                         runner=runner.name,
                         throughput_rows_per_s=float(throughput),
                         latency_p50_us=float(np.percentile(latencies, 50)),
                         latency_p99_us=float(np.percentile(latencies, 99)),
                         accuracy=float(accuracy),
                         n_queries=n,
                         repetitions=repetitions if mode == "batch" else 1,
                         config_summary=runner.summary(),
                         latencies_us=[float(x) for x in latencies],
                         predictions=[float(x) for x in predictions])
    logger.info("%s %s: %.1f rows/s, p50 %.1f us, p99 %.1f us", runner.name, mode,
                report.throughput_rows_per_s, report.latency_p50_us, report.latency_p99_us)
    return report


def compare_reports(report, baseline):
    """
    report with speedup ratios against baseline filled in (> 1 means report
    is faster).
    """
    if report.mode != baseline.mode:
        raise BenchError("cannot compare {} with {}".format(report.mode, baseline.mode))
    ratios = {"throughput_ratio": report.throughput_rows_per_s / baseline.throughput_rows_per_s,
              "p50_speedup": baseline.latency_p50_us / report.latency_p50_us,
              "p99_speedup": baseline.latency_p99_us / report.latency_p99_us}
    return replace(report, ratios=ratios)


def write_latency_csv(reports, path):
    with open(path, "w", newline="") as f:
        writer = DictWriter(f, fieldnames=["runner", "mode", "query", "latency_us"])
        writer.writeheader()
        for report in reports:
            for i, latency in enumerate(report.latencies_us):
                writer.writerow({"runner": report.runner, "mode": report.mode,
                                 "query": i, "latency_us": latency})
