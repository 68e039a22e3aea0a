import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args))


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" and outcome != "error":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                n, title = props["criterion"]
                rows.append((n, title, "PASS" if outcome == "passed" else "FAIL", rep.duration))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, verdict, secs in sorted(rows):
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}  ({secs:.2f}s)")
