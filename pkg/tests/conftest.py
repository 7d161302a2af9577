import json
import time
from pathlib import Path

import pytest

from memealert.cli import main


def run_fixture(root: Path, *extra: str):
    """Write the default seeded fixture under ``root`` and run every stage."""
    fx = root / "fixture"
    assert main(["fixture", "--out-dir", str(fx), *extra]) == 0
    cfg = fx / "pipeline.cfg"
    start = time.perf_counter()
    code = main(["run", "--config", str(cfg)])
    elapsed = time.perf_counter() - start
    run_dirs = sorted((fx / "runs").iterdir())
    truth = json.loads((fx / "ground_truth.json").read_text())
    return code, cfg, run_dirs, truth, elapsed


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory):
    return run_fixture(tmp_path_factory.mktemp("e2e"))


@pytest.hookimpl(wrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    # lets fixtures see whether the test body passed
    rep = yield
    setattr(item, f"rep_{rep.when}", rep)
    return rep
