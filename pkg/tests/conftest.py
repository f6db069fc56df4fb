import os
import sys
from importlib import resources

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ensemble_denoise import read_image  # noqa: E402

DATA = resources.files("ensemble_denoise") / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def test_image_dir():
    return str(DATA / "images" / "test")


@pytest.fixture(scope="session")
def train_image_dir():
    return str(DATA / "images" / "train")


@pytest.fixture(scope="session")
def cameraman():
    return read_image(str(DATA / "images" / "test" / "cameraman.pgm"))


@pytest.fixture(scope="session")
def reference_dir():
    return str(DATA / "reference")


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion, then assert it."""

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
