import numpy as np
import pytest
from hypothesis import settings

from sphtraffic.network import build_network

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def line_network(length=100.0, advance=50.0, v_free=30.0, lanes=1):
    """Single straight segment O -> X with the given advance toward X."""
    return build_network({
        "nodes": {"O": [0.0, 0.0], "X": [length, 0.0]},
        "segments": [{"id": "s", "from": "O", "to": "X", "v_free": v_free, "lanes": lanes}],
        "destinations": ["X"],
        "dis_remaining": {"X": {"O": advance, "X": 0.0}},
    })


@pytest.fixture
def line_net():
    return line_network()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
