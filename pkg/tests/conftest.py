import time

import numpy as np
import pytest

from coughscreen.cli import main as cli_main
from coughscreen.synthetic import make_corpus

ACCEPTANCE_FILE = "test_acceptance.py"


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The bundled 40-clip tone-versus-noise corpus; returns the manifest path."""
    return make_corpus(tmp_path_factory.mktemp("corpus"), n_per_class=20, seed=7)


class Runs(list):
    """Output directories, with the wall time of each run in ``seconds``."""

    seconds: list


@pytest.fixture(scope="session")
def tiny_runs(corpus, tmp_path_factory):
    """Two identical `train --tiny --seed 7` runs."""
    runs = Runs()
    runs.seconds = []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"train{i}")
        start = time.perf_counter()
        assert cli_main(["train", "--manifest", str(corpus), "--out", str(out),
                         "--tiny", "--seed", "7", "--jobs", "1"]) == 0
        runs.seconds.append(time.perf_counter() - start)
        runs.append(out)
    return runs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion at the end of the session
_acceptance = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        prev = _acceptance.get(name)
        if prev is None or prev == "PASS":
            _acceptance[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        terminalreporter.write_line(f"{_acceptance[name]}  {name}")
