import numpy as np
import pytest

from fformation.ingestion import (AccelStream, AnnotationTrack, FormationInterval, ProximityEvents,
                                  ProximityStream, Session)


def make_session(ids, duration_s, groups=(), speaking=None, detections=None, name="s", gaps=None):
    """Small hand-built session; ``groups`` are (start, end, name, members)."""
    n = int(duration_s * 20)
    rng = np.random.default_rng(0)
    accel = {}
    for p in ids:
        times = np.arange(n) / 20.0
        samples = rng.normal(size=(n, 3))
        if gaps and p in gaps:
            lo, hi = gaps[p]
            keep = (times < lo) | (times >= hi)
            times, samples = times[keep], samples[keep]
        accel[p] = AccelStream(p, times, samples)
    streams = {}
    for det, per in (detections or {}).items():
        streams[det] = ProximityStream(det, {s: frozenset(v) for s, v in per.items()}, int(duration_s))
    prox = ProximityEvents(streams, int(duration_s))
    track = AnnotationTrack(tuple(FormationInterval(s, e, g, frozenset(m)) for s, e, g, m in groups),
                            speaking or {})
    return Session(name, float(duration_s), accel, prox, track)


@pytest.fixture
def session_factory():
    return make_session


# acceptance criteria append (number, passed, detail) here; printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
