import csv
import json
import os

import pytest

from optimize import EXIT_INVALID, EXIT_NO_CASCADE, EXIT_OK, build_parser, build_manifest, main

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")


@pytest.fixture(autouse=True)
def at_repo_root(monkeypatch):
    monkeypatch.chdir(ROOT)


def write_manifest(tmp_path, doc, name="manifest.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def without_timing(path):
    with open(path) as f:
        doc = json.load(f)
    del doc["timing"]
    return doc


class TestManifest:

    def test_flags_override_file(self):
        args = build_parser().parse_args(["train-cascade", "-c", "config_cascade.json",
                                          "--seed", "5", "--accuracy-target", "0.9"])
        manifest = build_manifest(args)
        assert manifest.seed == 5
        assert manifest.workload == "workloads/planted_cascade.json"
        assert manifest.cascade_config["accuracy_target"] == 0.9
        assert "accuracy_delta" not in manifest.cascade_config

    def test_unknown_key(self, tmp_path, capsys):
        path = write_manifest(tmp_path, {"manifest": {"workload": "x", "colour": 1}})
        assert main(["analyze", "-c", path]) == EXIT_INVALID
        assert "unknown key" in capsys.readouterr().err

    def test_missing_manifest(self, capsys):
        assert main(["analyze", "-c", "no_such_manifest.json"]) == EXIT_INVALID

    def test_missing_data_fails_before_any_work(self, tmp_path, capsys):
        code = main(["analyze", "--pipeline", "pipelines/shared_preprocessing.json",
                     "--data", "data/missing.csv", "--out", str(tmp_path)])
        assert code == EXIT_INVALID
        assert "missing.csv does not exist" in capsys.readouterr().err
        assert not os.path.exists(tmp_path / "groups.csv")

    def test_workload_and_pipeline_conflict(self, tmp_path):
        code = main(["analyze", "--workload", "workloads/planted_cascade.json",
                     "--pipeline", "pipelines/toxic.json", "--out", str(tmp_path)])
        assert code == EXIT_INVALID


class TestAnalyze:

    def test_shared_preprocessing_groups(self, tmp_path, capsys):
        assert main(["analyze", "-c", "config_analyze.json", "--out", str(tmp_path)]) == EXIT_OK
        with open(tmp_path / "groups.csv") as f:
            rows = list(csv.DictReader(f))
        assert [r["columns"] for r in rows] == ["a b", "c", "d"]
        assert [float(r["cost_us"]) for r in rows] == [50.0, 40.0, 10.0]
        assert "a b" in capsys.readouterr().out

    def test_same_manifest_same_table(self, tmp_path):
        tables = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert main(["analyze", "-c", "config_analyze.json", "--out", str(out)]) == EXIT_OK
            tables.append((out / "groups.csv").read_text())
        assert tables[0] == tables[1]


class TestSort:

    def test_toxic_pipeline(self, capsys):
        assert main(["sort", "--pipeline", "pipelines/toxic.json"]) == EXIT_OK
        assert "Transitions: 1 (lexicographic order: 3)" in capsys.readouterr().out


class TestTrainCascade:

    def test_planted_workload(self, tmp_path, capsys):
        assert main(["train-cascade", "-c", "config_cascade.json", "--out", str(tmp_path)]) == EXIT_OK
        with open(tmp_path / "cascade.json") as f:
            doc = json.load(f)
        assert doc["kind"] == "cascade"
        assert doc["cost_f_us"] / doc["expected_cost_us"] > 2
        assert "Predicted speedup" in capsys.readouterr().out

    def test_same_manifest_same_config(self, tmp_path):
        paths = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert main(["train-cascade", "-c", "config_cascade.json", "--out", str(out)]) == EXIT_OK
            paths.append(str(out / "cascade.json"))
        assert without_timing(paths[0]) == without_timing(paths[1])

    def test_impossible_target(self, tmp_path, capsys):
        code = main(["train-cascade", "-c", "config_cascade.json", "--out", str(tmp_path),
                     "--accuracy-target", "1.01"])
        assert code == EXIT_NO_CASCADE
        assert "No cascade" in capsys.readouterr().out
        assert not os.path.exists(tmp_path / "cascade.json")

    def test_single_group_workload(self, tmp_path):
        code = main(["train-cascade", "--workload", "workloads/single_group.json",
                     "--out", str(tmp_path)])
        assert code == EXIT_NO_CASCADE

    def test_regression_bundle(self, tmp_path, capsys):
        path = write_manifest(tmp_path, {"manifest": {"workload": "workloads/planted_ranking.json",
                                                      "out": str(tmp_path)},
                                         "model_config": {"name": "linear_regression"},
                                         "cascade_config": {"inference_cost": 0.0}})
        assert main(["train-cascade", "-c", path]) == EXIT_INVALID
        assert "cannot be cascaded" in capsys.readouterr().err


class TestTrainTopK:

    def test_planted_workload(self, tmp_path, capsys):
        assert main(["train-topk", "-c", "config_topk.json", "--out", str(tmp_path)]) == EXIT_OK
        with open(tmp_path / "topk.json") as f:
            doc = json.load(f)
        assert doc["kind"] == "topk"
        assert not doc["degraded"]
        assert "r factor" in capsys.readouterr().out

    def test_needs_distributions(self, tmp_path, capsys):
        code = main(["train-topk", "--workload", "workloads/planted_ranking.json",
                     "--out", str(tmp_path)])
        assert code == EXIT_INVALID
        assert "k_dist" in capsys.readouterr().err


class TestBench:

    def test_cascade_batch(self, tmp_path):
        out = str(tmp_path)
        assert main(["train-cascade", "-c", "config_cascade.json", "--out", out]) == EXIT_OK
        code = main(["bench", "-c", "config_cascade.json", "--out", out, "--mode", "batch",
                     "--config", os.path.join(out, "cascade.json")])
        assert code == EXIT_OK
        with open(tmp_path / "bench_batch.json") as f:
            doc = json.load(f)
        assert doc["report"]["runner"] == "cascade"
        assert doc["baseline"]["runner"] == "baseline"
        assert "throughput_ratio" in doc["report"]["ratios"]
        assert os.path.exists(tmp_path / "bench_batch_latency.csv")
        assert os.path.exists(tmp_path / "bench_batch_cdf.png")

    def test_topk_mode_rejects_cascade_config(self, tmp_path):
        out = str(tmp_path)
        assert main(["train-cascade", "-c", "config_cascade.json", "--out", out]) == EXIT_OK
        code = main(["bench", "-c", "config_cascade.json", "--out", out, "--mode", "topk",
                     "--config", os.path.join(out, "cascade.json")])
        assert code == EXIT_INVALID

    def test_missing_config(self, tmp_path):
        code = main(["bench", "-c", "config_cascade.json", "--out", str(tmp_path),
                     "--config", "nowhere.json"])
        assert code == EXIT_INVALID
