"""Prints one PASS/FAIL line per acceptance criterion at the end of the session."""


def pytest_terminal_summary(terminalreporter):
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props or rep.when not in ("call", "setup"):
                continue
            n = props["criterion"]
            ok = outcome == "passed"
            prev = results.get(n)
            detail = props.get("detail", "")
            if prev:
                ok = prev[0] and ok
                detail = "; ".join(d for d in (prev[2], detail) if d)
            results[n] = (ok, props.get("title", ""), detail)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
