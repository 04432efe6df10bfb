import sys
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, list] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(criterion): end-to-end acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _CRITERIA[int(props["criterion"])].append((report.passed, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        results = _CRITERIA[k]
        ok = all(p for p, _ in results)
        details = "; ".join(d for _, d in results if d)
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}"
                                    + (f"  ({details})" if details else ""))
