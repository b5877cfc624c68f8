"""Power trace sources.

Three ways to obtain a :class:`~codecwatt.model.PowerTrace`:

* on-chip energy counters read through the OS power-capping file tree
  (monotone microjoule counters that wrap at a published limit),
* CSV logs written by an external meter logger,
* a seeded synthetic generator used as a test oracle and for simulation.

Counter reads go through plain file reads against an injectable base path,
so tests can point the source at a fake tree instead of ``/sys``.
"""

from __future__ import annotations

import csv
import io
import math
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np

from .model import MeterSpec, PowerSample, PowerTrace

MICROJOULES_PER_JOULE = 1_000_000.0

#: Default root of the power-capping interface on Linux.
POWERCAP_ROOT = Path("/sys/class/powercap")

#: Mapping from the power-capping zone name to the domain tag used here.
_ZONE_NAMES = {"core": "PP0", "uncore": "PP1", "dram": "DRAM"}


class DomainUnavailableError(RuntimeError):
    """The requested power domain is not exposed on this platform."""


class SamplingError(RuntimeError):
    """A sampler could not produce a usable trace."""


@dataclass(frozen=True)
class CounterReading:
    """One raw energy-counter read: microjoules, monotone modulo wrap."""

    timestamp: float
    counter: float
    wrap_limit: float

    def __post_init__(self) -> None:
        if not 0 <= self.counter < self.wrap_limit:
            raise ValueError(
                f"counter {self.counter} outside [0, {self.wrap_limit})"
            )


@dataclass(frozen=True)
class SyntheticProfile:
    """Piecewise-linear power profile plus seeded Gaussian noise.

    Each segment ramps linearly from ``start_power`` to ``end_power`` over
    ``duration`` seconds; noise is added per sample and the result clamped
    at zero so the trace stays physical.
    """

    segments: tuple[tuple[float, float, float], ...]
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.segments, tuple):
            object.__setattr__(self, "segments", tuple(tuple(s) for s in self.segments))
        if not self.segments:
            raise ValueError("profile needs at least one segment")
        for duration, p0, p1 in self.segments:
            if duration <= 0:
                raise ValueError("segment durations must be > 0")
            if p0 < 0 or p1 < 0:
                raise ValueError("segment powers must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def total_duration(self) -> float:
        return sum(seg[0] for seg in self.segments)

    def power_at(self, t: float) -> float:
        """Noise-free profile value at offset ``t`` from the profile start.

        Clamped to the first/last segment value outside the covered range.
        """
        if t <= 0:
            return self.segments[0][1]
        offset = 0.0
        for duration, p0, p1 in self.segments:
            if t <= offset + duration:
                frac = (t - offset) / duration
                return p0 + (p1 - p0) * frac
            offset += duration
        return self.segments[-1][2]


class PowercapCounterSource:
    """Reads per-domain energy counters from a power-capping file tree.

    The expected layout is the standard one: top-level zones named
    ``intel-rapl:<n>`` with ``name``, ``energy_uj`` and
    ``max_energy_range_uj`` files, and sub-zones ``intel-rapl:<n>:<m>`` for
    cores/graphics/DRAM. Only the base path is configurable; everything else
    is plain file reads, which keeps the platform seam injectable in tests.
    """

    def __init__(self, base_path: Path | str = POWERCAP_ROOT, clock: Callable[[], float] = time.time):
        self.base_path = Path(base_path)
        self._clock = clock
        self._domain_dirs: dict[str, Path] | None = None

    def _discover(self) -> dict[str, Path]:
        if self._domain_dirs is not None:
            return self._domain_dirs
        found: dict[str, Path] = {}
        if self.base_path.is_dir():
            for zone in sorted(self.base_path.glob("intel-rapl:*")):
                if not zone.is_dir():
                    continue
                name_file = zone / "name"
                if not name_file.is_file():
                    continue
                name = name_file.read_text().strip()
                if name.startswith("package"):
                    found.setdefault("PKG", zone)
                for sub in sorted(zone.glob("intel-rapl:*:*")):
                    sub_name_file = sub / "name"
                    if not sub_name_file.is_file():
                        continue
                    sub_name = sub_name_file.read_text().strip()
                    tag = _ZONE_NAMES.get(sub_name)
                    if tag is not None:
                        found.setdefault(tag, sub)
        self._domain_dirs = found
        return found

    def available_domains(self) -> tuple[str, ...]:
        return tuple(sorted(self._discover()))

    def read_counter(self, domain: str = "PKG") -> CounterReading:
        """Read the current counter for ``domain``.

        The timestamp is the midpoint of the clock reads bracketing the file
        read, which bounds the attribution error to half the read latency.
        Raises :class:`DomainUnavailableError` if the platform does not
        expose the domain, and lets :class:`PermissionError` propagate when
        the counter file is not readable.
        """
        zone = self._discover().get(domain)
        if zone is None:
            raise DomainUnavailableError(
                f"power domain {domain!r} not available under {self.base_path}"
            )
        t0 = self._clock()
        counter = float(int((zone / "energy_uj").read_text().strip()))
        t1 = self._clock()
        wrap = float(int((zone / "max_energy_range_uj").read_text().strip()))
        return CounterReading(timestamp=(t0 + t1) / 2.0, counter=counter, wrap_limit=wrap)


def counters_to_power(
    readings: Sequence[CounterReading], meter_id: str, nominal_interval: float
) -> PowerTrace:
    """Convert counter reads to a power trace of interval averages.

    Each consecutive pair yields one sample: power is the wrap-corrected
    energy delta over the elapsed time, placed at the interval midpoint.
    Midpoint placement halves alignment bias against job windows compared to
    stamping either endpoint. A single wrap per interval is assumed; the
    wrap correction keeps every delta non-negative by construction.
    """
    if len(readings) < 2:
        raise ValueError(f"need at least 2 counter readings, got {len(readings)}")
    timestamps = []
    powers = []
    for prev, cur in zip(readings, readings[1:]):
        dt = cur.timestamp - prev.timestamp
        if dt <= 0:
            raise ValueError(
                f"non-increasing reading timestamps: {prev.timestamp} -> {cur.timestamp}"
            )
        if cur.counter >= prev.counter:
            delta_uj = cur.counter - prev.counter
        else:
            delta_uj = (prev.wrap_limit - prev.counter) + cur.counter
        powers.append((delta_uj / MICROJOULES_PER_JOULE) / dt)
        timestamps.append((prev.timestamp + cur.timestamp) / 2.0)
    return PowerTrace.from_arrays(meter_id, timestamps, powers, nominal_interval)


@dataclass(frozen=True)
class SampleRun:
    """Result of one sampling session: the trace plus a failure flag when the
    source died mid-run and the trace is only partial."""

    trace: PowerTrace
    failed: bool = False
    error: str | None = None


def sample_power(
    source: Callable[[], float],
    interval: float,
    stop: threading.Event,
    *,
    meter_id: str = "meter",
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
) -> SampleRun:
    """Sample instantaneous power from ``source`` every ``interval`` seconds
    until ``stop`` is set.

    Timestamps come from ``clock`` — the same clock job records use — so the
    resulting trace aligns with job windows without translation. Scheduling
    aims at ``start + k*interval`` to avoid cumulative drift; actual jitter
    is visible in the recorded timestamps. If a read fails mid-run, the
    samples gathered so far are returned with ``failed=True``.
    """
    if interval <= 0:
        raise ValueError(f"interval must be > 0, got {interval}")
    samples: list[PowerSample] = []
    start = clock()
    tick = 0
    error: str | None = None
    while not stop.is_set():
        try:
            watts = source()
        except Exception as exc:  # noqa: BLE001 - partial trace contract
            error = f"{type(exc).__name__}: {exc}"
            break
        samples.append(PowerSample(timestamp=clock(), power=watts))
        tick += 1
        delay = (start + tick * interval) - clock()
        if delay > 0:
            sleep(delay)
    trace = PowerTrace(meter_id=meter_id, samples=tuple(samples), nominal_interval=interval)
    return SampleRun(trace=trace, failed=error is not None, error=error)


def sample_counters(
    read: Callable[[], CounterReading],
    interval: float,
    stop: threading.Event,
    *,
    meter_id: str = "meter",
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
) -> SampleRun:
    """Counter-source variant of :func:`sample_power`.

    Collects raw counter readings on the sampling grid and derives the power
    trace afterwards, so the midpoint placement of
    :func:`counters_to_power` applies. A session that collected fewer than
    two readings cannot produce any power sample and is returned as failed.
    """
    if interval <= 0:
        raise ValueError(f"interval must be > 0, got {interval}")
    readings: list[CounterReading] = []
    start = clock()
    tick = 0
    error: str | None = None
    while True:
        stopping = stop.is_set()
        try:
            readings.append(read())
        except Exception as exc:  # noqa: BLE001
            error = f"{type(exc).__name__}: {exc}"
            break
        if stopping:
            break
        tick += 1
        delay = (start + tick * interval) - clock()
        if delay > 0:
            sleep(delay)
    if len(readings) >= 2:
        trace = counters_to_power(readings, meter_id, interval)
    else:
        trace = PowerTrace(meter_id=meter_id, samples=(), nominal_interval=interval)
        if error is None:
            error = "fewer than 2 counter readings collected"
    return SampleRun(trace=trace, failed=error is not None, error=error)


class ThreadedSampler:
    """Runs a sampling loop on a background thread, one session at a time.

    ``start()`` launches the loop; ``stop()`` signals it, joins the thread,
    and returns the :class:`SampleRun`. Exactly one job is measured per
    session, and the trace is only read after the join, so there is no
    shared mutable state while sampling.
    """

    def __init__(
        self,
        spec: MeterSpec,
        loop: Callable[[threading.Event], SampleRun],
    ):
        self.spec = spec
        self._loop = loop
        self._stop: threading.Event | None = None
        self._thread: threading.Thread | None = None
        self._result: SampleRun | None = None

    @property
    def meter_id(self) -> str:
        return self.spec.meter_id

    def start(self) -> None:
        if self._thread is not None:
            raise SamplingError("sampler already running")
        self._stop = threading.Event()
        self._result = None

        def run() -> None:
            self._result = self._loop(self._stop)

        self._thread = threading.Thread(target=run, name=f"sampler-{self.meter_id}", daemon=True)
        self._thread.start()

    def stop(self) -> SampleRun:
        if self._thread is None or self._stop is None:
            raise SamplingError("sampler not running")
        self._stop.set()
        self._thread.join()
        self._thread = None
        result = self._result
        self._result = None
        if result is None:
            raise SamplingError("sampler thread produced no result")
        return result


def make_counter_sampler(
    spec: MeterSpec,
    source: PowercapCounterSource,
    domain: str | None = None,
    *,
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
) -> ThreadedSampler:
    """Build a threaded sampler over a counter source.

    Defaults to the whole-socket domain, which is the right scope to compare
    against a wall meter; narrower domains are selectable per spec.
    """
    picked = domain or (spec.domains[0] if spec.domains else "PKG")

    def loop(stop: threading.Event) -> SampleRun:
        return sample_counters(
            lambda: source.read_counter(picked),
            spec.nominal_interval,
            stop,
            meter_id=spec.meter_id,
            clock=clock,
            sleep=sleep,
        )

    return ThreadedSampler(spec, loop)


def make_reader_sampler(
    spec: MeterSpec,
    read_watts: Callable[[], float],
    *,
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
) -> ThreadedSampler:
    """Build a threaded sampler over an instantaneous watts reader."""

    def loop(stop: threading.Event) -> SampleRun:
        return sample_power(
            read_watts,
            spec.nominal_interval,
            stop,
            meter_id=spec.meter_id,
            clock=clock,
            sleep=sleep,
        )

    return ThreadedSampler(spec, loop)


def _parse_timestamp(text: str) -> float:
    """Accept epoch seconds or ISO-8601 (UTC assumed when no offset given)."""
    try:
        return float(text)
    except ValueError:
        pass
    iso = text.strip()
    if iso.endswith("Z"):
        iso = iso[:-1] + "+00:00"
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def ingest_meter_csv(stream: IO[str] | str, spec: MeterSpec) -> PowerTrace:
    """Parse an external meter log (``timestamp,power_w`` CSV) into a trace.

    Timestamps may be epoch seconds or ISO-8601; power is watts. Errors name
    the offending line. Unlike :func:`codecwatt.model.validate_trace`, this
    is a hard boundary: misordered or negative rows are rejected outright,
    because a fresh ingest is the one place a bad log should not get past.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    samples: list[PowerSample] = []
    last_t: float | None = None
    header_seen = False
    line_no = 0
    for row in reader:
        line_no = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if not header_seen:
            header_seen = True
            first = row[0].strip().lower()
            if first == "timestamp":
                continue
        if len(row) != 2:
            raise ValueError(f"line {line_no}: expected 2 fields, got {len(row)}")
        try:
            t = _parse_timestamp(row[0].strip())
        except ValueError as exc:
            raise ValueError(f"line {line_no}: bad timestamp {row[0]!r}") from exc
        try:
            watts = float(row[1])
        except ValueError as exc:
            raise ValueError(f"line {line_no}: bad power {row[1]!r}") from exc
        if not math.isfinite(watts) or watts < 0:
            raise ValueError(f"line {line_no}: negative or non-finite power {watts}")
        if last_t is not None and t <= last_t:
            raise ValueError(f"line {line_no}: non-increasing timestamp {t}")
        last_t = t
        samples.append(PowerSample(timestamp=t, power=watts))
    if not samples:
        raise ValueError("meter CSV contains no samples")
    return PowerTrace(
        meter_id=spec.meter_id, samples=tuple(samples), nominal_interval=spec.nominal_interval
    )


def synth_trace(
    profile: SyntheticProfile, interval: float, *, meter_id: str = "synthetic", start: float = 0.0
) -> PowerTrace:
    """Generate a deterministic trace from a synthetic profile.

    Samples sit on the grid ``start + k*interval`` across the profile span;
    values are the piecewise-linear profile plus seeded Gaussian noise,
    clamped at zero. The same (profile, interval) always produces the same
    trace, which is what makes this usable as an oracle.
    """
    if interval <= 0:
        raise ValueError(f"interval must be > 0, got {interval}")
    n = int(math.floor(profile.total_duration / interval)) + 1
    offsets = np.arange(n) * interval
    base = np.array([profile.power_at(t) for t in offsets])
    if profile.noise_std > 0:
        rng = np.random.default_rng(profile.seed)
        base = base + rng.normal(0.0, profile.noise_std, size=n)
    base = np.maximum(base, 0.0)
    return PowerTrace.from_arrays(meter_id, start + offsets, base, interval)
