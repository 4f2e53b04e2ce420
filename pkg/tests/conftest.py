import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from consensus_sos.cli import bundled_example
from consensus_sos.conditions import QForm
from consensus_sos.graph import SwitchingSchedule
from consensus_sos.poly import Polynomial, PolyVector

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class Example:
    """Bundled second-order example, parsed once."""

    def __init__(self, raw):
        self.raw = raw
        self.V = Polynomial.from_json(raw["V"])
        self.h1 = PolyVector.from_json(raw["h1"])
        self.h2 = PolyVector.from_json(raw["h2"])
        self.qform = QForm.from_json(raw["qform"], raw["nvars"])
        self.schedule = SwitchingSchedule.from_json(raw["schedule"])
        ini = raw["initial"]
        self.z = np.array(ini["z"])
        self.v = np.array(ini["v"])
        self.z_gamma = np.array(ini["z_gamma"])
        self.v_gamma = np.array(ini["v_gamma"])


@pytest.fixture(scope="session")
def example():
    return Example(json.loads(bundled_example().read_text()))


def poly(n, terms):
    return Polynomial(n, {tuple(k): v for k, v in terms.items()})


ACCEPTANCE: list = []  # (criterion, passed, detail) lines printed after the run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
