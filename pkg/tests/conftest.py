from __future__ import annotations

from hypothesis import settings

# numba compiles lazily on first call, so per-example deadlines are meaningless
settings.register_profile("postsbc", deadline=None, max_examples=60)
settings.load_profile("postsbc")


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                rows.append((props["criterion"], outcome == "passed", props.get("detail", "")))
    if rows:
        terminalreporter.section("acceptance criteria")
        for label, ok, detail in sorted(rows, key=lambda r: int(r[0].split()[0])):
            terminalreporter.write_line(f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}")
