import numpy as np
import pytest

from gdcn.features import FieldSpec

N_NUMERIC, N_CATEGORICAL = 13, 26


def criteo_like_rows(n=1000, seed=0):
    """Criteo-shaped records: label, 13 numeric fields, 26 hashed categoricals."""
    rng = np.random.default_rng(seed)
    specs = [FieldSpec(f"I{i}", "numeric") for i in range(1, N_NUMERIC + 1)]
    specs += [FieldSpec(f"C{i}", "categorical") for i in range(1, N_CATEGORICAL + 1)]
    rows = []
    for _ in range(n):
        rec = [str(int(rng.random() < 0.26))]
        for _ in range(N_NUMERIC):
            rec.append("" if rng.random() < 0.1 else str(int(rng.zipf(1.5)) - 1))
        for j in range(N_CATEGORICAL):
            rec.append("" if rng.random() < 0.05 else format(int(rng.zipf(1.3 + j / 20)), "08x"))
        rows.append(rec)
    return specs, rows


@pytest.fixture(scope="session")
def toy_rows():
    return criteo_like_rows()


# one summary line per acceptance criterion ------------------------------------

_results = {}


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _results.get(crit)
        outcome = report.outcome.upper()
        if prev in (None, "PASSED") or outcome == "FAILED":
            _results[crit] = outcome if outcome != "SKIPPED" or prev is None else prev


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_results, key=lambda c: int(str(c).split(".")[0])):
        terminalreporter.write_line(f"criterion {crit}: {_results[crit]}")
