import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_report  # noqa: E402
from semmap import synth  # noqa: E402


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_report.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def street():
    return synth.street_scene(1)


@pytest.fixture(scope="session")
def wall_banner():
    return synth.wall_scene(1, changes=("add_banner",))


@pytest.fixture()
def scenario_dir(tmp_path):
    def _write(scenario):
        paths = synth.write_scenario(scenario, str(tmp_path / "scen"))
        return paths, synth.scenario_config(scenario)

    return _write
