import importlib

import numpy as np
import pytest

from gvground import _fallback


def _backends():
    mods = [pytest.param(_fallback, id="python")]
    try:
        mods.append(pytest.param(importlib.import_module("gvground._ckernels"), id="cython"))
    except ImportError:
        mods.append(pytest.param(None, id="cython",
                                 marks=pytest.mark.skip(reason="extension not built")))
    return mods


@pytest.fixture(params=_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
