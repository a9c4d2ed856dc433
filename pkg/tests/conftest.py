import json
import sys
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

from inertia_placer import fixtures as fx  # noqa: E402
from inertia_placer.devices import DeviceSet  # noqa: E402
from inertia_placer.netmodel import PerformanceWeights, assemble_open_loop, network_from_dict  # noqa: E402

ACCEPTANCE: dict[int, tuple[bool, str]] = {}
WEIGHTS = PerformanceWeights(1.0, 0.1, 0.1, 0.1)


@pytest.fixture(scope="session")
def derived():
    return json.loads((HERE / "derived_values.json").read_text())


def build(name, mode, buses, weights=WEIGHTS, doc=None):
    model = network_from_dict(doc if doc is not None else fx.NETWORKS[name]())
    devices = DeviceSet.from_sites(fx.sites(buses), mode)
    return model, assemble_open_loop(model, devices, weights, mode)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
