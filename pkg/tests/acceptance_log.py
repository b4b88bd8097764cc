"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS = []


@contextmanager
def criterion(name, time_limit=None):
    """Record the outcome of the wrapped block; a runtime above ``time_limit`` fails it."""
    t0 = time.perf_counter()
    info = {"detail": ""}
    try:
        yield info
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        RESULTS.append((name, False, f"{elapsed:.1f}s; {type(exc).__name__}: {exc}"[:300]))
        print(f"FAIL {name}")
        raise
    elapsed = time.perf_counter() - t0
    ok = time_limit is None or elapsed < time_limit
    limit = f" < {time_limit:g}s" if time_limit is not None else ""
    detail = f"{elapsed:.1f}s{limit}" + (f"; {info['detail']}" if info["detail"] else "")
    RESULTS.append((name, ok, detail))
    print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
    assert ok, f"{name}: runtime {elapsed:.1f}s exceeds {time_limit}s"
