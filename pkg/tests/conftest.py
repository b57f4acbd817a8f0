import numpy as np
import pytest

from fixangle.eikonal import build_chart
from fixangle.geometry import make_metric

PRODUCT = dict(amplitude=0.1, center=(0.1, 0.1), radius=0.8)
WARPED = dict(amplitude=0.05)


@pytest.fixture(scope="session")
def euclid():
    return make_metric("euclidean")


@pytest.fixture(scope="session")
def product():
    return make_metric("product", **PRODUCT)


@pytest.fixture(scope="session")
def warped():
    return make_metric("warped_product", **WARPED)


@pytest.fixture(scope="session")
def chart_euclid_33(euclid):
    return build_chart(euclid, 33)


@pytest.fixture(scope="session")
def chart_product_33(product):
    return build_chart(product, 33)


@pytest.fixture(scope="session")
def chart_warped_33(warped):
    return build_chart(warped, 33)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion; echoed in the terminal summary."""
    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"{label} {'PASS' if passed else 'FAIL'}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
