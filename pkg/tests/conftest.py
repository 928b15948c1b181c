import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from baroalign.model import FifoReadout, Recording, SensorTrace, TraceKind

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def pressure_trace(values, rate=10.0, start=0.0, name="pressure"):
    return SensorTrace(TraceKind.PRESSURE, rate, start, np.asarray(values, dtype=float), name=name, unit="Pa")


def accel_trace(values, rate=128.0, start=0.0, name="acc", triggered=True):
    return SensorTrace(
        TraceKind.ACCEL3, rate, start, np.asarray(values, dtype=float), name=name, unit="g",
        externally_triggered=triggered,
    )


def make_recording(device_id="d", n_p=600, n_a=0, start=0.0, seed=0, fifo=False):
    rng = np.random.default_rng(seed)
    p = pressure_trace(101325 + np.cumsum(rng.normal(0, 3, n_p)), start=start)
    accel, logs = (), {}
    if n_a:
        a = accel_trace(rng.normal(0, 0.01, (n_a, 3)) + [0, 0, 1], start=start, triggered=not fifo)
        accel = (a,)
        if fifo:
            logs = {"acc": (FifoReadout(start, 0), FifoReadout(start + n_a / 128.0, n_a))}
    return Recording(device_id, p, accel, logs, {})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember a pass/fail line for the terminal summary."""
    _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(_CRITERIA[number])


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
