"""Core value types shared across the benchmark: power traces, job records,
energy measurements, and analysis results.

All types are immutable after construction and validate their own field
invariants; anything that can only be judged in context (sample ordering,
sampling gaps) goes through :func:`validate_trace`, which reports violations
instead of raising so that suspect traces can still be inspected.

Units are watts, joules, and epoch seconds throughout. Counter sources that
report microjoules convert at the boundary, never here.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Iterator

import numpy as np

# Parameter sets accepted for benchmark jobs. Anything outside these is
# rejected at construction time rather than at execution time.
CODECS = ("x264", "x265")
PROCESSES = ("encode", "decode", "idle")
RESOLUTIONS = ((3840, 2160), (1920, 1080), (1280, 720))
FPS_SET = (15, 24, 30, 60)
CRF_SET = (10, 20, 30, 40, 50)

METER_KINDS = ("counter_software", "external_hardware", "synthetic")
METER_SCOPES = ("chip", "wall")
POWER_DOMAINS = ("PKG", "PP0", "PP1", "DRAM")

NATIVE_RESOLUTION = (3840, 2160)

#: A gap between consecutive samples larger than this multiple of the meter's
#: nominal interval is treated as a dropped-sampler symptom.
GAP_FACTOR = 3.0

TRACE_CSV_HEADER = "timestamp,power_w"


@dataclass(frozen=True)
class PowerSample:
    """One power reading: wall-clock epoch seconds and watts."""

    timestamp: float
    power: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp):
            raise ValueError(f"timestamp must be finite, got {self.timestamp}")
        if not math.isfinite(self.power) or self.power < 0:
            raise ValueError(f"power must be finite and >= 0, got {self.power}")


@dataclass(frozen=True)
class PowerTrace:
    """Time series of power samples from a single meter.

    Construction does not enforce sample ordering; use :func:`validate_trace`
    to check ordering and sampling gaps, since a misordered trace is a fact
    about the meter worth reporting rather than an unrepresentable state.
    """

    meter_id: str
    samples: tuple[PowerSample, ...]
    nominal_interval: float

    def __post_init__(self) -> None:
        if not isinstance(self.samples, tuple):
            object.__setattr__(self, "samples", tuple(self.samples))
        if not math.isfinite(self.nominal_interval) or self.nominal_interval <= 0:
            raise ValueError(
                f"nominal_interval must be positive, got {self.nominal_interval}"
            )

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[PowerSample]:
        return iter(self.samples)

    @property
    def start(self) -> float:
        if not self.samples:
            raise ValueError("empty trace has no start")
        return self.samples[0].timestamp

    @property
    def end(self) -> float:
        if not self.samples:
            raise ValueError("empty trace has no end")
        return self.samples[-1].timestamp

    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.samples], dtype=float)

    def powers(self) -> np.ndarray:
        return np.array([s.power for s in self.samples], dtype=float)

    @classmethod
    def from_arrays(
        cls,
        meter_id: str,
        timestamps: Iterable[float],
        powers: Iterable[float],
        nominal_interval: float,
    ) -> "PowerTrace":
        samples = tuple(
            PowerSample(float(t), float(p)) for t, p in zip(timestamps, powers)
        )
        return cls(meter_id=meter_id, samples=samples, nominal_interval=nominal_interval)


@dataclass(frozen=True)
class MeterSpec:
    """Description of one power meter.

    ``scope`` records what the meter physically sees: ``chip`` for on-package
    counters, ``wall`` for a meter between the mains and the workstation.
    ``domains`` only applies to counter-based software meters, where readings
    are available per power domain (whole socket, cores, integrated graphics,
    DRAM).
    """

    meter_id: str
    kind: str
    scope: str
    nominal_interval: float
    domains: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.domains, tuple):
            object.__setattr__(self, "domains", tuple(self.domains))
        if not self.meter_id:
            raise ValueError("meter_id must be non-empty")
        if self.kind not in METER_KINDS:
            raise ValueError(f"kind must be one of {METER_KINDS}, got {self.kind!r}")
        if self.scope not in METER_SCOPES:
            raise ValueError(f"scope must be one of {METER_SCOPES}, got {self.scope!r}")
        if not math.isfinite(self.nominal_interval) or self.nominal_interval <= 0:
            raise ValueError("nominal_interval must be positive")
        if self.kind == "counter_software":
            if not self.domains:
                raise ValueError("counter_software meter needs at least one domain")
        elif self.domains:
            raise ValueError("domains only apply to counter_software meters")
        for d in self.domains:
            if d not in POWER_DOMAINS:
                raise ValueError(f"unknown power domain {d!r}")

    def to_dict(self) -> dict:
        return {
            "meter_id": self.meter_id,
            "kind": self.kind,
            "scope": self.scope,
            "nominal_interval": self.nominal_interval,
            "domains": list(self.domains),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeterSpec":
        return cls(
            meter_id=d["meter_id"],
            kind=d["kind"],
            scope=d["scope"],
            nominal_interval=float(d["nominal_interval"]),
            domains=tuple(d.get("domains", ())),
        )


@dataclass(frozen=True)
class JobParams:
    """Parameters of one encode/decode/idle job, restricted to the benchmark
    grid (three resolutions, four frame rates, five CRF steps, two codecs)."""

    codec: str
    process: str
    width: int
    height: int
    fps: int
    crf: int
    pixel_format: str = "yuv420"
    duplication_factor: int = 1

    def __post_init__(self) -> None:
        if self.codec not in CODECS:
            raise ValueError(f"codec must be one of {CODECS}, got {self.codec!r}")
        if self.process not in PROCESSES:
            raise ValueError(f"process must be one of {PROCESSES}, got {self.process!r}")
        if (self.width, self.height) not in RESOLUTIONS:
            raise ValueError(
                f"resolution {self.width}x{self.height} not in "
                + ", ".join(f"{w}x{h}" for w, h in RESOLUTIONS)
            )
        if self.fps not in FPS_SET:
            raise ValueError(f"fps must be one of {FPS_SET}, got {self.fps}")
        if self.crf not in CRF_SET:
            raise ValueError(f"crf must be one of {CRF_SET}, got {self.crf}")
        if not self.pixel_format:
            raise ValueError("pixel_format must be non-empty")
        if self.duplication_factor < 1:
            raise ValueError("duplication_factor must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "JobParams":
        return cls(
            codec=d["codec"],
            process=d["process"],
            width=int(d["width"]),
            height=int(d["height"]),
            fps=int(d["fps"]),
            crf=int(d["crf"]),
            pixel_format=d.get("pixel_format", "yuv420"),
            duplication_factor=int(d.get("duplication_factor", 1)),
        )


@dataclass(frozen=True)
class SequenceSpec:
    """A native test sequence: a raw-video file plus its signal parameters.

    Sources are native 3840x2160; lower benchmark resolutions are produced
    by downscaling, never by registering pre-scaled files, so every cell of
    the grid traces back to the same pixels.
    """

    sequence_id: str
    path: str
    width: int
    height: int
    fps: int
    pixel_format: str
    duration: float

    def __post_init__(self) -> None:
        if not self.sequence_id:
            raise ValueError("sequence_id must be non-empty")
        if (self.width, self.height) != NATIVE_RESOLUTION:
            raise ValueError(
                f"source sequences must be native "
                f"{NATIVE_RESOLUTION[0]}x{NATIVE_RESOLUTION[1]}, "
                f"got {self.width}x{self.height}"
            )
        if self.fps not in FPS_SET:
            raise ValueError(f"fps must be one of {FPS_SET}, got {self.fps}")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceSpec":
        return cls(
            sequence_id=d["sequence_id"],
            path=d["path"],
            width=int(d["width"]),
            height=int(d["height"]),
            fps=int(d["fps"]),
            pixel_format=d.get("pixel_format", "yuv420"),
            duration=float(d["duration"]),
        )


@dataclass(frozen=True)
class JobRecord:
    """One executed job: what ran, when it ran, and how it exited.

    ``start`` and ``end`` are taken immediately around the process on the
    same clock the power samplers use, so they can be aligned against traces.
    """

    job_id: str
    params: JobParams
    start: float
    end: float
    exit_status: int
    sequence_id: str
    repetition_index: int = 0
    output_size: int | None = None

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError(f"end ({self.end}) must be after start ({self.start})")
        if self.repetition_index < 0:
            raise ValueError("repetition_index must be >= 0")
        if (
            self.params.process == "encode"
            and self.exit_status == 0
            and (self.output_size is None or self.output_size <= 0)
        ):
            raise ValueError("successful encode must record a positive output_size")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "params": self.params.to_dict(),
            "start": self.start,
            "end": self.end,
            "exit_status": self.exit_status,
            "output_size": self.output_size,
            "repetition_index": self.repetition_index,
            "sequence_id": self.sequence_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JobRecord":
        return cls(
            job_id=d["job_id"],
            params=JobParams.from_dict(d["params"]),
            start=float(d["start"]),
            end=float(d["end"]),
            exit_status=int(d["exit_status"]),
            sequence_id=d["sequence_id"],
            repetition_index=int(d.get("repetition_index", 0)),
            output_size=None if d.get("output_size") is None else int(d["output_size"]),
        )


@dataclass(frozen=True)
class EnergyMeasurement:
    """Integrated energy for one (job, meter) pair, with the sample statistics
    that back its reliability verdict."""

    job_id: str
    meter_id: str
    energy: float
    n_samples: int
    mean_power: float
    std_power: float
    reliable: bool
    alpha: float

    def __post_init__(self) -> None:
        if self.energy < 0:
            raise ValueError("energy must be >= 0")
        if self.reliable and self.n_samples < 2:
            raise ValueError("a reliable measurement needs at least 2 samples")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")


@dataclass(frozen=True)
class EnergyDecomposition:
    """Split of a wall-scope energy total into processor, storage, and
    background shares.

    Encode jobs write their output, so the total decomposes as processor +
    storage + background; decode-to-null jobs store nothing, so storage is
    zero by construction. Negative residuals are kept (they are information
    about measurement noise) and flagged instead of clamped.
    """

    e_total: float
    e_proc: float
    e_strg: float
    e_x: float
    residual_negative: bool

    def __post_init__(self) -> None:
        recomposed = self.e_proc + self.e_strg + self.e_x
        if not math.isclose(recomposed, self.e_total, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(
                f"components sum to {recomposed}, expected e_total {self.e_total}"
            )


@dataclass(frozen=True)
class FitResult:
    """Ordinary least squares fit of hardware-meter energy from software-meter
    energy, with goodness-of-fit (R^2) and mean relative estimation error
    (a fraction, not a percentage)."""

    slope: float
    intercept: float
    r_squared: float
    epsilon: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError(f"r_squared must be in [0, 1], got {self.r_squared}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class CorrelationReport:
    """Pearson/Spearman/Kendall correlation between two meters' energies for
    one (codec, process) group."""

    group: tuple[str, str]
    pcc: float
    scc: float
    kcc: float
    n_points: int

    def __post_init__(self) -> None:
        for name, value in (("pcc", self.pcc), ("scc", self.scc), ("kcc", self.kcc)):
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [-1, 1], got {value}")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")


def validate_trace(trace: PowerTrace) -> list[str]:
    """Check trace-level invariants and return a list of violations.

    An empty list means the trace is well formed: timestamps strictly
    increasing and no gap between consecutive samples exceeding
    ``GAP_FACTOR`` times the nominal interval. Violation messages carry the
    offending sample index.
    """
    violations: list[str] = []
    limit = GAP_FACTOR * trace.nominal_interval
    for i in range(1, len(trace.samples)):
        prev = trace.samples[i - 1].timestamp
        cur = trace.samples[i].timestamp
        if cur <= prev:
            violations.append(f"non-increasing timestamp at index {i}")
            continue
        gap = cur - prev
        if gap > limit:
            violations.append(
                f"gap of {gap:.6g}s between index {i - 1} and {i} "
                f"exceeds {limit:.6g}s ({GAP_FACTOR:g}x nominal interval)"
            )
    return violations


def write_trace_csv(trace: PowerTrace, stream: IO[str]) -> None:
    """Serialize a trace as CSV with epoch-second timestamps.

    Floats are written with ``repr`` so a read back through the meter-CSV
    ingester reproduces the samples bit for bit.
    """
    stream.write(TRACE_CSV_HEADER + "\n")
    for s in trace.samples:
        stream.write(f"{s.timestamp!r},{s.power!r}\n")


def write_records_jsonl(records: Iterable[JobRecord], stream: IO[str]) -> None:
    """Write job records as one JSON object per line."""
    for record in records:
        stream.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_records_jsonl(stream: IO[str]) -> list[JobRecord]:
    records = []
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(JobRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ValueError(f"bad job record at line {line_no}: {exc}") from exc
    return records
