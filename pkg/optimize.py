"""
Command-line entry point.

    python optimize.py analyze        -c config_cascade.json
    python optimize.py train-cascade  -c config_cascade.json
    python optimize.py train-topk     -c config_topk.json
    python optimize.py bench          -c config_cascade.json --mode batch --config out/planted_cascade/cascade.json
    python optimize.py sort           --pipeline pipelines/toxic.json

A manifest is a JSON file with named sections (see config_*.json). Flags override
manifest values. Exit status: 0 success, 2 invalid input, 3 no cascade or a
degraded top-K guarantee, 4 runtime failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field

from bench import (BenchError, CascadeRunner, FullRunner, TopKRunner, compare_reports,
                   run_bench, write_latency_csv)
from cascade import (AccuracyTarget, CascadeConfig, CascadeError, NoCascade, OptimizerSetup,
                     train_cascade)
from dataset import DatasetError, load_dataset, project, validation_split
from executor import FeatureComputer, SimulatedExecutor
from feature_groups import FeatureGroupError, format_group_table, write_group_table
from models import ModelError, get_bundle
from pipeline_graph import (GraphParseError, GraphValidationError, NodeKind, load_graph_file,
                            sort_minimizing_transitions)
from plotting import plot_latency_cdf
from topk import TopKConfig, TopKError, train_topk
from utils import read_json, write_json
from workload import WorkloadError, generate_workload, load_workload_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_CASCADE = 3
EXIT_RUNTIME = 4

VALIDATION_ERRORS = (BenchError, CascadeError, DatasetError, FeatureGroupError,
                     GraphParseError, GraphValidationError, ModelError, TopKError,
                     WorkloadError)

SECTIONS = ("manifest", "model_config", "cascade_config", "topk_config", "bench_config")
MANIFEST_KEYS = ("pipeline", "data", "workload", "seed", "out")
SETUP_KEYS = ("holdout_fraction", "n_shuffles", "cost_sample_rows", "cost_repetitions",
              "inference_cost", "n_jobs")
CASCADE_KEYS = SETUP_KEYS + ("accuracy_target", "accuracy_delta")
TOPK_KEYS = SETUP_KEYS + ("k_dist", "n_dist", "metric", "accuracy_bound", "n_trials",
                          "confidence", "success_rate")
BENCH_KEYS = ("repetitions", "n_point_queries", "validation_fraction", "n_topk_queries")

BENCH_DEFAULTS = {"repetitions": 3, "n_point_queries": 200, "validation_fraction": 0.2,
                  "n_topk_queries": 100}


class ManifestError(ValueError):
    pass


@dataclass
class RunManifest:
    pipeline: str = None
    data: str = None
    workload: str = None
    seed: int = 0
    out: str = "out"
    model_config: dict = field(default_factory=lambda: {"name": "logistic_regression"})
    cascade_config: dict = field(default_factory=dict)
    topk_config: dict = field(default_factory=dict)
    bench_config: dict = field(default_factory=dict)


def _check_keys(section, doc, allowed):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ManifestError("{}: unknown key(s) {}".format(section, unknown))


def _parse_dist(flag, text):
    try:
        values = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError("{}: {}".format(flag, e)) from None
    if not isinstance(values, list):
        raise ManifestError("{} must be a JSON array of integers".format(flag))
    return values


def build_manifest(args):
    """
    Manifest file (if any) overridden by command-line flags.
    """
    doc = {}
    if args.manifest:
        if not os.path.isfile(args.manifest):
            raise ManifestError("manifest {} does not exist".format(args.manifest))
        try:
            doc = read_json(args.manifest)
        except json.JSONDecodeError as e:
            raise ManifestError("{}: {}".format(args.manifest, e)) from None
        _check_keys("manifest file", doc, SECTIONS)

    paths = dict(doc.get("manifest", {}))
    _check_keys("manifest", paths, MANIFEST_KEYS)
    manifest = RunManifest(**paths)
    for name, allowed in (("cascade_config", CASCADE_KEYS), ("topk_config", TOPK_KEYS),
                          ("bench_config", BENCH_KEYS)):
        section = dict(doc.get(name, {}))
        _check_keys(name, section, allowed)
        setattr(manifest, name, section)
    if "model_config" in doc:
        manifest.model_config = dict(doc["model_config"])

    for key in ("pipeline", "data", "workload", "seed", "out"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(manifest, key, value)
    if getattr(args, "accuracy_target", None) is not None:
        manifest.cascade_config["accuracy_target"] = args.accuracy_target
        manifest.cascade_config.pop("accuracy_delta", None)
    if getattr(args, "accuracy_delta", None) is not None:
        manifest.cascade_config["accuracy_delta"] = args.accuracy_delta
        manifest.cascade_config.pop("accuracy_target", None)
    if getattr(args, "k_dist", None) is not None:
        manifest.topk_config["k_dist"] = _parse_dist("--k-dist", args.k_dist)
    if getattr(args, "n_dist", None) is not None:
        manifest.topk_config["n_dist"] = _parse_dist("--n-dist", args.n_dist)
    return manifest


def load_inputs(manifest):
    """
    Graph and dataset named by the manifest. Every file is checked and
    parsed here, before any optimizer work starts.
    """
    if manifest.workload:
        if manifest.pipeline or manifest.data:
            raise ManifestError("give either a workload or a pipeline and data, not both")
        if not os.path.isfile(manifest.workload):
            raise ManifestError("workload {} does not exist".format(manifest.workload))
        return generate_workload(load_workload_spec(manifest.workload))

    for key in ("pipeline", "data"):
        path = getattr(manifest, key)
        if not path:
            raise ManifestError("no {} given (or a workload instead)".format(key))
        if not os.path.isfile(path):
            raise ManifestError("{} {} does not exist".format(key, path))
    graph = load_graph_file(manifest.pipeline)
    d = load_dataset(manifest.data)
    missing = [c for c in graph.feature_columns if c not in d.columns]
    if missing:
        raise ManifestError("{} lacks pipeline feature column(s) {}".format(manifest.data, missing))
    return graph, d


def load_graph_only(manifest):
    if manifest.workload:
        return load_inputs(manifest)[0]
    if not manifest.pipeline or not os.path.isfile(manifest.pipeline):
        raise ManifestError("pipeline {} does not exist".format(manifest.pipeline))
    return load_graph_file(manifest.pipeline)


def _bundle(manifest):
    config = dict(manifest.model_config)
    if "name" not in config:
        raise ManifestError("model_config needs a name")
    return get_bundle(config.pop("name"), **config)


def _setup_options(section):
    return {k: v for k, v in section.items() if k in SETUP_KEYS}


def _optimize_split(manifest, d):
    """
    Rows the optimizers may train on. The validation rows stay unseen for
    the bench.
    """
    bench_config = dict(BENCH_DEFAULTS, **manifest.bench_config)
    return validation_split(d, bench_config["validation_fraction"], manifest.seed)


def cmd_analyze(manifest, graph, d, bundle):
    options = _setup_options(manifest.cascade_config)
    setup = OptimizerSetup(graph, d, bundle, manifest.seed, **options)
    print(format_group_table(setup.groups))
    path = os.path.join(manifest.out, "groups.csv")
    write_group_table(setup.groups, path)
    print("Group table written to {}".format(path))
    return EXIT_OK


def cmd_train_cascade(manifest, graph, d, bundle):
    section = dict(manifest.cascade_config)
    if "accuracy_target" in section:
        target = AccuracyTarget(absolute=section["accuracy_target"])
    else:
        target = AccuracyTarget(delta=section.get("accuracy_delta", 0.001))
    split = _optimize_split(manifest, d)

    result = train_cascade(graph, d.subset(split.optimize_rows), bundle, target, manifest.seed,
                           **_setup_options(section))
    if isinstance(result, NoCascade):
        print("No cascade: {}".format(result.reason))
        print("Original holdout score {:.4f}, target {:.4f}".format(
            result.original_score, result.accuracy_target))
        return EXIT_NO_CASCADE

    path = os.path.join(manifest.out, "cascade.json")
    with open(path, "w") as f:
        f.write(result.to_json() + "\n")
    print("Selected groups:   {}".format(list(result.selected_groups)))
    print("Threshold:         {:.6f}".format(result.threshold))
    print("Approximated (h):  {:.4f}".format(result.holdout_approx_fraction))
    print("Expected cost:     {:.2f} us/row (full pipeline {:.2f})".format(
        result.expected_cost_us, result.cost_f_us))
    print("Predicted speedup: {:.2f}x".format(result.predicted_speedup))
    print("Cascade config written to {}".format(path))
    return EXIT_OK


def cmd_train_topk(manifest, graph, d, bundle):
    section = dict(manifest.topk_config)
    for key in ("k_dist", "n_dist"):
        if key not in section:
            raise ManifestError("top-K training needs {} (topk_config or --{})".format(
                key, key.replace("_", "-")))
    split = _optimize_split(manifest, d)

    config = train_topk(graph, d.subset(split.optimize_rows), bundle,
                        section["k_dist"], section["n_dist"],
                        metric=section.get("metric", "precision"),
                        a_t=section.get("accuracy_bound", 0.95),
                        seed=manifest.seed,
                        n_trials=section.get("n_trials", 100),
                        confidence=section.get("confidence", 0.95),
                        success_rate=section.get("success_rate", 0.95),
                        **_setup_options(section))
    path = os.path.join(manifest.out, "topk.json")
    with open(path, "w") as f:
        f.write(config.to_json() + "\n")
    print("Selected groups:   {}".format(list(config.selected_groups)))
    print("r factor:          {}{}".format(config.r_factor, " (degraded)" if config.degraded else ""))
    print("Expected cost:     {:.2f} us/query".format(config.expected_cost_us))
    print("Top-K config written to {}".format(path))
    return EXIT_NO_CASCADE if config.degraded else EXIT_OK


def _load_saved_config(path):
    if not os.path.isfile(path):
        raise ManifestError("config {} does not exist".format(path))
    with open(path) as f:
        text = f.read()
    try:
        kind = json.loads(text).get("kind")
    except (json.JSONDecodeError, AttributeError) as e:
        raise ManifestError("{}: {}".format(path, e)) from None
    if kind == "cascade":
        return CascadeConfig.from_json(text)
    if kind == "topk":
        return TopKConfig.from_json(text)
    raise ManifestError("{}: unknown config kind {!r}".format(path, kind))


def cmd_bench(manifest, graph, d, bundle, mode, config_path=None):
    bench_config = dict(BENCH_DEFAULTS, **manifest.bench_config)
    split = _optimize_split(manifest, d)
    computer = FeatureComputer(graph, SimulatedExecutor(d))
    full_nodes = tuple(n for n in graph.nodes if graph.nodes[n].kind is not NodeKind.MODEL)
    options = dict(repetitions=bench_config["repetitions"],
                   n_point_queries=bench_config["n_point_queries"],
                   n_topk_queries=bench_config["n_topk_queries"],
                   seed=manifest.seed)

    saved = _load_saved_config(config_path) if config_path else None
    if saved is not None:
        bundle = saved.load_bundle()
        original = saved.original_model
    else:
        train = d.subset(split.optimize_rows)
        original = bundle.fit(project(train, graph.feature_columns), train.labels,
                              graph.feature_columns)

    if mode == "topk":
        if saved is not None and not isinstance(saved, TopKConfig):
            raise ManifestError("topk mode needs a top-K config")
        source = saved if saved is not None else manifest.topk_config
        k_dist = saved.k_distribution if saved is not None else source.get("k_dist")
        n_dist = saved.n_distribution if saved is not None else source.get("n_dist")
        if k_dist is None or n_dist is None:
            raise ManifestError("topk mode needs k_dist and n_dist")
        options.update(k_dist=k_dist, n_dist=n_dist, original_model=original)
    elif isinstance(saved, TopKConfig):
        raise ManifestError("{} mode needs a cascade config".format(mode))

    baseline_runner = FullRunner(original, bundle, computer, full_nodes)
    if isinstance(saved, CascadeConfig):
        runner = CascadeRunner(saved, bundle, computer)
    elif isinstance(saved, TopKConfig):
        runner = TopKRunner(saved, bundle, computer)
    else:
        runner = FullRunner(original, bundle, computer, full_nodes)

    baseline = run_bench(mode, baseline_runner, bundle, d, split.validation_rows, **options)
    report = compare_reports(run_bench(mode, runner, bundle, d, split.validation_rows, **options),
                             baseline)

    print(baseline.format_table())
    print(report.format_table())
    stem = os.path.join(manifest.out, "bench_{}".format(mode))
    write_json({"report": report.to_dict(), "baseline": baseline.to_dict()}, stem + ".json")
    write_latency_csv([baseline, report], stem + "_latency.csv")
    plot_latency_cdf([baseline, report], stem + "_cdf.png")
    print("Bench report written to {}.json".format(stem))
    return EXIT_OK


def cmd_sort(graph):
    result = sort_minimizing_transitions(graph)
    for node_id in result.order:
        print("{:<24} {}".format(node_id, graph.nodes[node_id].execution_class.value))
    print("Transitions: {} (lexicographic order: {})".format(
        result.transitions, result.naive_transitions))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(description="Optimize feature-computing inference pipelines")
    parser.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument('-c', '--manifest', type=str, help="JSON run manifest")
        sub.add_argument('--pipeline', type=str, help="pipeline spec JSON")
        sub.add_argument('--data', type=str, help="dataset CSV")
        sub.add_argument('--workload', type=str, help="synthetic workload spec JSON")
        sub.add_argument('--seed', type=int)
        sub.add_argument('--out', type=str, help="output directory")
        return sub

    common(commands.add_parser("analyze", help="print feature groups with cost and importance"))
    cascade = common(commands.add_parser("train-cascade", help="train an end-to-end cascade"))
    target = cascade.add_mutually_exclusive_group()
    target.add_argument('--accuracy-target', type=float, help="absolute holdout score")
    target.add_argument('--accuracy-delta', type=float, help="allowed drop below the original")
    topk = common(commands.add_parser("train-topk", help="train an approximate top-K filter"))
    topk.add_argument('--k-dist', type=str, help="JSON array of K values")
    topk.add_argument('--n-dist', type=str, help="JSON array of N values")
    bench = common(commands.add_parser("bench", help="measure a trained config against the baseline"))
    bench.add_argument('--mode', choices=("batch", "point", "topk"), default="batch")
    bench.add_argument('--config', type=str, help="saved cascade or top-K config")
    bench.add_argument('--k-dist', type=str, help="JSON array of K values (baseline topk)")
    bench.add_argument('--n-dist', type=str, help="JSON array of N values (baseline topk)")
    common(commands.add_parser("sort", help="print the transition-minimizing node order"))
    return parser


def run(args):
    manifest = build_manifest(args)
    if args.command == "sort":
        return cmd_sort(load_graph_only(manifest))
    graph, d = load_inputs(manifest)

    bundle = _bundle(manifest)
    os.makedirs(manifest.out, exist_ok=True)
    logger.info("output directory %s", manifest.out)
    if args.command == "analyze":
        return cmd_analyze(manifest, graph, d, bundle)
    if args.command == "train-cascade":
        return cmd_train_cascade(manifest, graph, d, bundle)
    if args.command == "train-topk":
        return cmd_train_topk(manifest, graph, d, bundle)
    return cmd_bench(manifest, graph, d, bundle, args.mode, args.config)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        return run(args)
    except (ManifestError,) + VALIDATION_ERRORS as e:
        print("error: {}".format(e), file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        logger.exception("runtime failure")
        print("error: {}".format(e), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
