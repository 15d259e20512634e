import pytest

from executor import FeatureComputer, SimulatedExecutor
from models import builtin_linear_regression, builtin_logistic_regression
from workload import GroupSpec, SyntheticWorkloadSpec, generate_workload


def planted_spec(seed=7, n_rows=4000, easy_fraction=0.9, cheap_cost=10.0, expensive_cost=90.0,
                 task="classification", label_noise=0.02):
    return SyntheticWorkloadSpec(
        n_rows=n_rows,
        groups=(GroupSpec(n_columns=4, cost_us=cheap_cost, signal_strength=0.9),
                GroupSpec(n_columns=4, cost_us=expensive_cost, signal_strength=0.9)),
        easy_fraction=easy_fraction,
        label_noise=label_noise,
        seed=seed,
        task=task)


@pytest.fixture
def logistic():
    return builtin_logistic_regression()


@pytest.fixture
def linear():
    return builtin_linear_regression()


@pytest.fixture(scope="session")
def planted_workload():
    return generate_workload(planted_spec())


@pytest.fixture(scope="session")
def ranking_workload():
    return generate_workload(planted_spec(seed=11, n_rows=6000, easy_fraction=1.0,
                                          task="regression", label_noise=0.1))


@pytest.fixture
def free_computer():
    """
    Factory: a FeatureComputer whose nodes cost nothing to run.
    """
    def make(graph, dataset):
        return FeatureComputer(graph, SimulatedExecutor(dataset, time_scale=0.0))
    return make
