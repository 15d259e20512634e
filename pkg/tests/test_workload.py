import json
import os

import numpy as np
import pytest

from conftest import planted_spec
from dataset import project, save_dataset
from pipeline_graph import NodeKind
from workload import (GroupSpec, SyntheticWorkloadSpec, WorkloadError, column_name,
                      generate_workload, load_workload_spec)

WORKLOADS = os.path.join(os.path.dirname(__file__), "..", "workloads")


class TestSyntheticWorkloadSpec:

    def test_cheap_groups(self):
        assert planted_spec().cheap_groups == (1,)

    @pytest.mark.parametrize("change", [dict(n_rows=1), dict(groups=()), dict(easy_fraction=1.5),
                                        dict(label_noise=-0.1), dict(task="ranking"),
                                        dict(groups=(GroupSpec(0, 1.0, 0.5),)),
                                        dict(groups=(GroupSpec(1, -1.0, 0.5),)),
                                        dict(groups=(GroupSpec(1, 1.0, 2.0),))])
    def test_invalid(self, change):
        fields = dict(n_rows=10, groups=(GroupSpec(1, 1.0, 0.5),))
        fields.update(change)
        with pytest.raises(WorkloadError):
            SyntheticWorkloadSpec(**fields)

    def test_load_shipped_specs(self):
        for name in sorted(os.listdir(WORKLOADS)):
            spec = load_workload_spec(os.path.join(WORKLOADS, name))
            assert spec.n_rows > 0

    def test_load_names_the_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"workload_config": {"n_rows": 10}}))
        with pytest.raises(WorkloadError, match="bad.json"):
            load_workload_spec(str(path))

    def test_missing_section(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("{}")
        with pytest.raises(WorkloadError, match="workload_config"):
            load_workload_spec(str(path))


class TestGenerateWorkload:

    def test_graph_carries_declared_costs(self, planted_workload):
        g, d = planted_workload
        assert g.nodes["group1"].cost_spec.fixed_us == 10.0
        assert g.nodes["group2"].cost_spec.fixed_us == 90.0
        assert g.nodes["model"].kind is NodeKind.MODEL
        assert g.feature_columns == tuple(column_name(gid, j) for gid in (1, 2) for j in range(1, 5))
        assert set(d.column_names) == set(g.feature_columns)

    def test_cheap_group_alone_is_accurate(self, logistic):
        spec = planted_spec(label_noise=0.0)
        _, d = generate_workload(spec)
        cheap = tuple(column_name(1, j) for j in range(1, 5))
        train, test = d.subset(np.arange(2000)), d.subset(np.arange(2000, 4000))
        model = logistic.fit(project(train, cheap), train.labels, cheap)
        predictions = logistic.predict(model, project(test, cheap))
        # rows whose cheap columns carry signal sit far from zero
        easy = np.abs(project(test, cheap).mean(axis=1)) > 0.5
        assert easy.mean() > 0.8
        assert logistic.score(predictions[easy], test.labels[easy]) >= 0.85

    def test_expensive_group_carries_hard_rows_only(self):
        _, d = generate_workload(planted_spec(label_noise=0.0))
        cheap = project(d, [column_name(1, j) for j in range(1, 5)]).mean(axis=1)
        expensive = project(d, [column_name(2, j) for j in range(1, 5)]).mean(axis=1)
        s = 2 * d.labels - 1
        easy = np.abs(cheap) > 0.5
        assert np.abs(expensive[easy]).max() < 0.5
        assert np.all(np.sign(expensive[~easy]) == s[~easy])

    def test_without_cheap_groups_every_row_carries_signal(self):
        spec = SyntheticWorkloadSpec(n_rows=4000, groups=(GroupSpec(8, 100.0, 0.5),),
                                     easy_fraction=0.5, seed=3)
        _, d = generate_workload(spec)
        values = project(d, d.column_names).mean(axis=1)
        assert np.mean(np.sign(values) == 2 * d.labels - 1) > 0.98

    def test_pure_noise(self, logistic):
        spec = SyntheticWorkloadSpec(n_rows=4000, groups=(GroupSpec(3, 5.0, 0.0), GroupSpec(3, 50.0, 0.0)),
                                     seed=1)
        _, d = generate_workload(spec)
        X = project(d, d.column_names)
        train, test = np.arange(2000), np.arange(2000, 4000)
        model = logistic.fit(X[train], d.labels[train], d.column_names)
        score = logistic.score(logistic.predict(model, X[test]), d.labels[test])
        prior = max(d.labels[test].mean(), 1 - d.labels[test].mean())
        assert score == pytest.approx(prior, abs=0.05)

    def test_same_seed_same_bytes(self, tmp_path):
        paths = []
        for name in ("a.csv", "b.csv"):
            _, d = generate_workload(planted_spec(n_rows=500))
            paths.append(str(tmp_path / name))
            save_dataset(d, paths[-1])
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            assert a.read() == b.read()

    def test_regression_labels_follow_the_signal(self, ranking_workload):
        _, d = ranking_workload
        assert np.corrcoef(d.columns[column_name(1, 1)], d.labels)[0, 1] > 0.9
