import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ssalab.config import load_config  # noqa: E402
from ssalab.scenarios import ScenarioConfig, build_case  # noqa: E402

ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def case1(cfg):
    return build_case(ScenarioConfig.for_case(1, pss=False), cfg)


@pytest.fixture(scope="session")
def case1_pss(cfg):
    return build_case(ScenarioConfig.for_case(1, pss=True), cfg)


@pytest.fixture(scope="session")
def case4(cfg):
    return build_case(ScenarioConfig.for_case(4, 0.25, pss=False), cfg)
