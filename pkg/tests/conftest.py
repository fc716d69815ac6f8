import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m:
                continue
            n = int(m.group(1))
            ok = rep.passed and rep.when == "call"
            if n in rows and not ok:
                ok = False
            elif n in rows:
                continue
            text = dict(rep.user_properties).get("detail", "")
            if not ok and not text:
                text = str(rep.longrepr).strip().splitlines()[-1] if rep.longrepr else ""
            rows[n] = (ok, m.group(2).replace("_", " "), text)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        ok, name, text = rows[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d} ({name}): {text}")
