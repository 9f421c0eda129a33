import numpy as np
import pytest
from hypothesis import settings

from vitforge.model import ViTConfig
from vitforge.synthetic import make_dataset

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def tiny():
    return ViTConfig.tiny()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """16/8/8 images per class for train/val/test at 32x32."""
    root = tmp_path_factory.mktemp("synthetic")
    return make_dataset(root, {"train": 16, "val": 8, "test": 8}, size=32, seed=7)


# --- acceptance summary -------------------------------------------------------

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _acceptance[name] = (status, report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        status, _ = _acceptance[name]
        terminalreporter.write_line(f"{status}  {name}")
