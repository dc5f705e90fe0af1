import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=15, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"

# criterion id -> list of (check name, passed, detail)
_CRITERIA: dict = {}


class CriterionRecorder:
    """Collects named checks under acceptance criteria; ``finish`` fails on any miss."""

    def __init__(self):
        self.failed = []

    def __call__(self, cid: str, name: str, passed: bool, detail: str = "") -> bool:
        passed = bool(passed)
        _CRITERIA.setdefault(cid, []).append((name, passed, detail))
        if not passed:
            self.failed.append(f"criterion {cid} / {name}: {detail}")
        return passed

    def finish(self) -> None:
        assert not self.failed, "; ".join(self.failed)


@pytest.fixture
def criterion():
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c.split(".")[0])):
        checks = _CRITERIA[cid]
        ok = all(p for _, p, _ in checks)
        failed = [f"{n} ({d})" if d else n for n, p, d in checks if not p]
        line = f"criterion {cid}: {'PASS' if ok else 'FAIL'} [{sum(p for _, p, _ in checks)}/{len(checks)} checks]"
        if failed:
            line += " failing: " + "; ".join(failed)
        tr.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
