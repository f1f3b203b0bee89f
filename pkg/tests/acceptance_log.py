"""Collects one verdict line per acceptance criterion for the terminal summary."""
import time
from contextlib import contextmanager

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str):
    """Record PASS when the block completes and FAIL (then re-raise) when it does not."""
    t0 = time.perf_counter()
    notes: list[str] = []
    try:
        yield notes
    except BaseException as err:
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        RESULTS.append(f"criterion {number:2d} FAIL  {title}  ({time.perf_counter() - t0:.1f}s)  {msg}")
        print(RESULTS[-1])
        raise
    detail = "; ".join(notes)
    RESULTS.append(f"criterion {number:2d} PASS  {title}  ({time.perf_counter() - t0:.1f}s)"
                   + (f"  {detail}" if detail else ""))
    print(RESULTS[-1])
