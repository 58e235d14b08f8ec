import pytest

from seasonwatch.core import PipelineConfig
from seasonwatch.pipeline import run_pipeline
from seasonwatch.simulator import default_scenario

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_sim():
    scenario = default_scenario()
    portfolio, streams, truth = scenario.simulate()
    return scenario, portfolio, streams, truth


@pytest.fixture(scope="session")
def default_run(default_sim):
    scenario, portfolio, streams, truth = default_sim
    return run_pipeline(portfolio, streams, PipelineConfig())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def run_cli_pipeline(root, seed=None):
    """simulate -> detect -> eval with the built-in scenario under ``root``."""
    from seasonwatch.cli import main

    seed_args = [] if seed is None else ["--seed", str(seed)]
    assert main(["simulate", "--out", str(root / "sim"), *seed_args]) == 0
    assert main(["detect", "--data", str(root / "sim"), "--out", str(root / "det")]) == 0
    assert main(["eval", "--detect", str(root / "det"), "--data", str(root / "sim"), "--out", str(root / "eval")]) == 0
    return root


@pytest.fixture(scope="session")
def default_cli(tmp_path_factory):
    return run_cli_pipeline(tmp_path_factory.mktemp("cli-default"))
