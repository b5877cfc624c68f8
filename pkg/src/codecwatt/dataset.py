"""Flat-file persistence for measurement datasets.

A dataset directory contains:

* ``jobs.jsonl`` — every executed job, one JSON record per line
* ``measurements.csv`` — one row per (job, meter) energy measurement
* ``trace_<meter>_<job>_r<rep>.csv`` — the power trace behind each measured
  repetition
* ``meters.json`` — the meter specs used, so analysis can tell chip-scope
  from wall-scope meters
* ``idle.json`` — per-meter idle baseline power
* ``decomposition.csv`` — processor/storage/background splits, when both a
  chip and a wall meter were configured
* ``failures.jsonl`` — per-cell failures (a partial dataset is valid)

Everything is written with deterministic formatting (repr floats, sorted
JSON keys), so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import (
    EnergyDecomposition,
    EnergyMeasurement,
    JobRecord,
    MeterSpec,
    PowerTrace,
    read_records_jsonl,
    write_records_jsonl,
    write_trace_csv,
)
from .sources import ingest_meter_csv

JOBS_FILE = "jobs.jsonl"
MEASUREMENTS_FILE = "measurements.csv"
METERS_FILE = "meters.json"
IDLE_FILE = "idle.json"
DECOMPOSITION_FILE = "decomposition.csv"
FAILURES_FILE = "failures.jsonl"

MEASUREMENT_COLUMNS = [
    "job_id",
    "meter_id",
    "process",
    "codec",
    "width",
    "height",
    "fps",
    "crf",
    "energy_j",
    "n_samples",
    "mean_w",
    "std_w",
    "reliable",
    "bitrate_kbps",
]

DECOMPOSITION_COLUMNS = [
    "job_id",
    "codec",
    "process",
    "width",
    "height",
    "fps",
    "crf",
    "e_total_j",
    "e_proc_j",
    "e_strg_j",
    "e_x_j",
    "residual_negative",
]


@dataclass(frozen=True)
class MeasurementRow:
    """One measurements.csv row: an energy measurement joined with the cell
    parameters analysis needs, so the CSV is self-contained."""

    job_id: str
    meter_id: str
    process: str
    codec: str
    width: int
    height: int
    fps: int
    crf: int
    energy_j: float
    n_samples: int
    mean_w: float
    std_w: float
    reliable: bool
    bitrate_kbps: float | None = None

    @classmethod
    def from_measurement(
        cls,
        m: EnergyMeasurement,
        *,
        process: str,
        codec: str,
        width: int,
        height: int,
        fps: int,
        crf: int,
        bitrate_kbps: float | None = None,
    ) -> "MeasurementRow":
        return cls(
            job_id=m.job_id,
            meter_id=m.meter_id,
            process=process,
            codec=codec,
            width=width,
            height=height,
            fps=fps,
            crf=crf,
            energy_j=m.energy,
            n_samples=m.n_samples,
            mean_w=m.mean_power,
            std_w=m.std_power,
            reliable=m.reliable,
            bitrate_kbps=bitrate_kbps,
        )


@dataclass(frozen=True)
class DecompositionRow:
    job_id: str
    codec: str
    process: str
    width: int
    height: int
    fps: int
    crf: int
    decomposition: EnergyDecomposition


@dataclass(frozen=True)
class FailureRecord:
    cell_id: str
    stage: str
    error: str


@dataclass
class Dataset:
    """In-memory measurement dataset, savable to / loadable from a directory."""

    records: list[JobRecord] = field(default_factory=list)
    measurements: list[MeasurementRow] = field(default_factory=list)
    traces: dict[str, PowerTrace] = field(default_factory=dict)
    meters: list[MeterSpec] = field(default_factory=list)
    idle: dict[str, dict] = field(default_factory=dict)
    decompositions: list[DecompositionRow] = field(default_factory=list)
    failures: list[FailureRecord] = field(default_factory=list)

    def trace_filename(self, meter_id: str, job_id: str, repetition: int) -> str:
        return f"trace_{meter_id}_{job_id}_r{repetition}.csv"

    def add_trace(self, meter_id: str, job_id: str, repetition: int, trace: PowerTrace) -> str:
        name = self.trace_filename(meter_id, job_id, repetition)
        self.traces[name] = trace
        return name

    def save(self, directory: Path | str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / JOBS_FILE, "w") as f:
            write_records_jsonl(self.records, f)
        write_measurements_csv(self.measurements, directory / MEASUREMENTS_FILE)
        for name in sorted(self.traces):
            with open(directory / name, "w") as f:
                write_trace_csv(self.traces[name], f)
        with open(directory / METERS_FILE, "w") as f:
            json.dump(
                [m.to_dict() for m in sorted(self.meters, key=lambda m: m.meter_id)],
                f,
                sort_keys=True,
                indent=2,
            )
            f.write("\n")
        with open(directory / IDLE_FILE, "w") as f:
            json.dump(self.idle, f, sort_keys=True, indent=2)
            f.write("\n")
        if self.decompositions:
            write_decomposition_csv(self.decompositions, directory / DECOMPOSITION_FILE)
        if self.failures:
            with open(directory / FAILURES_FILE, "w") as f:
                for failure in self.failures:
                    f.write(
                        json.dumps(
                            {
                                "cell_id": failure.cell_id,
                                "stage": failure.stage,
                                "error": failure.error,
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
        return directory


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_measurements_csv(rows: list[MeasurementRow], path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MEASUREMENT_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.job_id,
                    r.meter_id,
                    r.process,
                    r.codec,
                    r.width,
                    r.height,
                    r.fps,
                    r.crf,
                    _fmt(r.energy_j),
                    r.n_samples,
                    _fmt(r.mean_w),
                    _fmt(r.std_w),
                    _fmt(r.reliable),
                    _fmt(r.bitrate_kbps),
                ]
            )


def read_measurements_csv(path: Path | str) -> list[MeasurementRow]:
    rows: list[MeasurementRow] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MEASUREMENT_COLUMNS:
            raise ValueError(
                f"{path}: unexpected measurement columns {reader.fieldnames}"
            )
        for raw in reader:
            rows.append(
                MeasurementRow(
                    job_id=raw["job_id"],
                    meter_id=raw["meter_id"],
                    process=raw["process"],
                    codec=raw["codec"],
                    width=int(raw["width"]),
                    height=int(raw["height"]),
                    fps=int(raw["fps"]),
                    crf=int(raw["crf"]),
                    energy_j=float(raw["energy_j"]),
                    n_samples=int(raw["n_samples"]),
                    mean_w=float(raw["mean_w"]),
                    std_w=float(raw["std_w"]),
                    reliable=raw["reliable"] == "true",
                    bitrate_kbps=float(raw["bitrate_kbps"]) if raw["bitrate_kbps"] else None,
                )
            )
    return rows


def write_decomposition_csv(rows: list[DecompositionRow], path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DECOMPOSITION_COLUMNS)
        for r in rows:
            d = r.decomposition
            writer.writerow(
                [
                    r.job_id,
                    r.codec,
                    r.process,
                    r.width,
                    r.height,
                    r.fps,
                    r.crf,
                    _fmt(d.e_total),
                    _fmt(d.e_proc),
                    _fmt(d.e_strg),
                    _fmt(d.e_x),
                    _fmt(d.residual_negative),
                ]
            )


def load_records(directory: Path | str) -> list[JobRecord]:
    with open(Path(directory) / JOBS_FILE) as f:
        return read_records_jsonl(f)


def load_measurements(directory: Path | str) -> list[MeasurementRow]:
    return read_measurements_csv(Path(directory) / MEASUREMENTS_FILE)


def load_meters(directory: Path | str) -> list[MeterSpec]:
    path = Path(directory) / METERS_FILE
    if not path.is_file():
        return []
    with open(path) as f:
        return [MeterSpec.from_dict(d) for d in json.load(f)]


def save_meters(directory: Path | str, meters: list[MeterSpec]) -> None:
    merged = {m.meter_id: m for m in load_meters(directory)}
    for m in meters:
        merged[m.meter_id] = m
    with open(Path(directory) / METERS_FILE, "w") as f:
        json.dump(
            [merged[k].to_dict() for k in sorted(merged)], f, sort_keys=True, indent=2
        )
        f.write("\n")


def load_trace(directory: Path | str, filename: str, spec: MeterSpec) -> PowerTrace:
    with open(Path(directory) / filename) as f:
        return ingest_meter_csv(f, spec)
