import copy
import json
from importlib import resources

import pytest
from hypothesis import HealthCheck, settings

from railforge import build_catalog, default_penalties, parse_instance
from railforge.generate import generate_document

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURE = resources.files("railforge") / "fixtures" / "six_yard.json"


def six_yard_doc() -> dict:
    return json.loads(FIXTURE.read_text())


@pytest.fixture
def six_doc():
    return six_yard_doc()


@pytest.fixture(scope="session")
def six_yard():
    inst = parse_instance(FIXTURE.read_text())
    catalog = build_catalog(inst)
    return inst, catalog, default_penalties(inst, catalog)


@pytest.fixture(scope="session")
def fixture_path():
    return str(FIXTURE)


def line_doc(volume=10, c=11.0, tau=3.0, m=50, capacity=None) -> dict:
    """Three yards on a line A - B - C with one demand A -> C."""
    yard = lambda y: {"id": y, "accumulation_param": c, "relative_delay": tau}  # noqa: E731
    return {
        "schema": "railforge/1",
        "yards": [yard("A"), yard("B"), yard("C")],
        "lines": [{"endpoints": ["A", "B"], "length": 100, "capacity_trains": capacity},
                  {"endpoints": ["B", "C"], "length": 100, "capacity_trains": capacity}],
        "demands": [{"origin": "A", "destination": "C", "volume": volume}],
        "service_params": {"train_size": m, "transport_weight": 0},
    }


def tiny_doc(seed: int, n_yards: int, capacity_scale: float | None = None, **kw) -> dict:
    """Small random instance; optional finite capacities as a multiple of a rough load."""
    doc = generate_document(n_yards, kw.pop("line_density", 0.3), kw.pop("demand_density", 0.4), seed, **kw)
    if capacity_scale is not None:
        doc = copy.deepcopy(doc)
        for ln in doc["lines"]:
            ln["capacity_trains"] = capacity_scale
        for y in doc["yards"]:
            y["reclass_capacity"] = 40 * capacity_scale
            y["track_count"] = 3
    return doc


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"{criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'} - {detail}")
