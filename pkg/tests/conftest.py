import sys

import pytest

from kaleido.data import synth_points
from kaleido.mlp import MlpSpec
from kaleido.trainer import TrainConfig, train_with_restarts


@pytest.fixture(scope="session")
def fig2_model():
    """H=5, L=2 sigmoid model trained on the single point 0.5."""
    data = synth_points([0.5])
    spec, params, report = train_with_restarts(MlpSpec(1, 5, 2, init_seed=0), data, TrainConfig(), attempts=5)
    assert report.converged
    return spec, params, report, data


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
