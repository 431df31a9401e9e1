import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pceocp.config import load_config

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def reactor_cfg():
    return load_config("reactor")


@pytest.fixture(scope="session")
def tank_cfg():
    return load_config("tank")


@pytest.fixture(scope="session")
def reactor_problem(reactor_cfg):
    return reactor_cfg.problem()


@pytest.fixture(scope="session")
def tank_problem(tank_cfg):
    return tank_cfg.problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance gate reporting -------------------------------------------------
GATE_LINES: list[str] = []


@pytest.fixture
def gate():
    """Record one ``C<n> PASS|FAIL`` line per acceptance criterion, then assert."""

    def record(criterion: int, title: str, checks: dict[str, bool], detail: str) -> None:
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"C{criterion} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        if failed:
            line += f"  [failed: {', '.join(failed)}]"
        GATE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(GATE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
