from __future__ import annotations

import numpy as np
import pytest

from codecwatt.model import MeterSpec, PowerTrace
from codecwatt.sources import SampleRun


def make_trace(
    timestamps, powers, meter_id: str = "m", nominal_interval: float = 0.5
) -> PowerTrace:
    return PowerTrace.from_arrays(meter_id, timestamps, powers, nominal_interval)


def random_piecewise_profile(rng: np.random.Generator):
    """Random piecewise-linear segments: (duration, start_power, end_power)."""
    n_segments = int(rng.integers(1, 8))
    return tuple(
        (
            float(rng.uniform(0.5, 5.0)),
            float(rng.uniform(0.0, 120.0)),
            float(rng.uniform(0.0, 120.0)),
        )
        for _ in range(n_segments)
    )


class ScriptedSampler:
    """Sampler whose sessions return pre-programmed traces, in order."""

    def __init__(self, traces, meter_id: str = "scripted"):
        self._traces = list(traces)
        self._index = 0
        self._running = False
        self.meter_id = meter_id

    def start(self) -> None:
        assert not self._running
        self._running = True

    def stop(self) -> SampleRun:
        assert self._running
        self._running = False
        trace = self._traces[self._index]
        self._index += 1
        return SampleRun(trace=trace, failed=False, error=None)


@pytest.fixture
def chip_meter() -> MeterSpec:
    return MeterSpec(
        meter_id="rapl_pkg",
        kind="counter_software",
        scope="chip",
        nominal_interval=0.1,
        domains=("PKG",),
    )


@pytest.fixture
def wall_meter() -> MeterSpec:
    return MeterSpec(
        meter_id="mains", kind="external_hardware", scope="wall", nominal_interval=0.5
    )
