import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def dry_env(monkeypatch):
    monkeypatch.setenv("RTPING_BACKEND", "dry-run")
    return monkeypatch


@pytest.fixture
def sandbox_host(tmp_path, monkeypatch):
    """A fake /proc and /sys describing a 2-CPU board with a 3-queue eth1."""
    proc = tmp_path / "proc"
    sys_root = tmp_path / "sys"
    proc.mkdir()
    (proc / "interrupts").write_text(
        "           CPU0       CPU1\n"
        " 16:        100          0     GIC  29 Edge      timer\n"
        " 17:         10          0     GIC  58 Level     ttyS0\n"
        " 40:       5000          0     GIC  72 Level     eth1-tx-0\n"
        " 41:       4000          0     GIC  73 Level     eth1-rx-0\n"
        " 42:        300          0     GIC  74 Level     eth1-tx-1\n"
        " 43:        200          0     GIC  75 Level     eth1-rx-1\n"
        "IPI0:        10         10       Rescheduling interrupts\n"
    )
    cpu = sys_root / "devices/system/cpu"
    cpu.mkdir(parents=True)
    (cpu / "online").write_text("0-1\n")
    for q in range(3):
        (sys_root / "class/net/eth1/queues" / f"tx-{q}").mkdir(parents=True)
    monkeypatch.setenv("RTPING_PROC_ROOT", str(proc))
    monkeypatch.setenv("RTPING_SYS_ROOT", str(sys_root))
    return tmp_path


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one of the numbered acceptance criteria")


_acceptance: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    key = mark.args
    if rep.failed or (rep.when == "call" and key not in _acceptance):
        _acceptance[key] = "FAIL" if rep.failed else "PASS"
    elif rep.skipped:
        _acceptance.setdefault(key, "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), verdict in sorted(_acceptance.items()):
        terminalreporter.write_line(f"[{verdict}] {number:>2}. {title}")
