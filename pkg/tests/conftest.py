import time

import pytest

from valrecon import dataio
from valrecon.hierarchy import Hierarchy
from valrecon.reconcile import TrainConfig, bottom_up, train_quality, train_value

VERDICTS = {}
_ACCEPT = "test_acceptance.py::test_criterion_"


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[n] = line
        print(line)
        return ok

    return record


def pytest_runtest_logreport(report):
    if report.when != "call" or _ACCEPT not in report.nodeid:
        return
    n = int(report.nodeid.split(_ACCEPT)[1].split("_")[0])
    if report.failed and n not in VERDICTS:
        VERDICTS[n] = f"criterion {n:2d}: FAIL  raised before reporting ({report.longrepr.reprcrash.message})"


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])


@pytest.fixture(scope="session")
def acceptance_data():
    """Four producers, fixed prices, 17k hours, mean base forecasts."""
    raw = dataio.synthesize(dataio.SyntheticSpec(seed=42))
    return dataio.prepare(raw, "mean", seed=42)


@pytest.fixture(scope="session")
def acceptance_models(acceptance_data):
    """Every strategy trained once at w = 0.9; seconds spent kept alongside."""
    ds = acceptance_data
    cfg = TrainConfig(w=0.9, gamma_mode="ge", seed=42)
    out, reports, seconds = {}, {}, {}
    out["bottom_up"] = bottom_up(Hierarchy.two_level(ds.records.m))
    for kind in ("quality_learned", "quality_linear"):
        t0 = time.perf_counter()
        out[kind], _ = train_quality(ds.train, cfg, kind, ds.capacities)
        seconds[kind] = time.perf_counter() - t0
    for kind in ("value_learned", "value_linear"):
        t0 = time.perf_counter()
        out[kind], _, reports[kind] = train_value(ds.train, cfg, kind, ds.capacities)
        seconds[kind] = time.perf_counter() - t0
    return {"models": out, "reports": reports, "seconds": seconds}
