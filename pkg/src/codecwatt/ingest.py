"""Fold an externally logged power trace into an existing dataset.

External wall meters are logged by a separate box while the benchmark runs;
their traces arrive later as CSV files. Ingestion aligns every recorded job
window against the log, integrates the windows, pools repetitions per cell,
and appends the resulting measurements — giving each cell a second meter's
energy without re-running anything.

Because the jobs already happened, the reliability criterion is evaluated
post hoc on the pooled samples: it can flag an unreliable cell but can no
longer trigger more repetitions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    MEASUREMENTS_FILE,
    Dataset,
    MeasurementRow,
    load_measurements,
    load_meters,
    load_records,
    save_meters,
    write_measurements_csv,
)
from .energy import AlignmentError, extract_window, integrate_energy
from .model import EnergyMeasurement, JobRecord, MeterSpec, PowerTrace, write_trace_csv
from .reliability import ReliabilityParams, check_reliability
from .sources import ingest_meter_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IngestSummary:
    meter_id: str
    cells_measured: int
    cells_skipped: int
    rows_replaced: int


def _strip_meter_suffix(job_id: str, meter_ids: list[str]) -> str | None:
    for meter_id in meter_ids:
        suffix = "_" + meter_id
        if job_id.endswith(suffix):
            return job_id[: -len(suffix)]
    return None


def ingest_trace_into_dataset(
    dataset_dir: Path | str,
    trace: PowerTrace,
    spec: MeterSpec,
    params: ReliabilityParams | None = None,
    max_gap: float | None = None,
) -> IngestSummary:
    """Measure every benchmark cell of a dataset against an external trace.

    Repetition windows of the same cell are pooled regardless of which meter
    originally drove them — the external log saw them all. Existing rows for
    this meter are replaced, so re-ingesting a corrected log is idempotent.
    Cells the log does not cover are skipped with a warning.
    """
    dataset_dir = Path(dataset_dir)
    params = params or ReliabilityParams()
    if max_gap is None:
        max_gap = spec.nominal_interval
    records = load_records(dataset_dir)
    known_ids = [m.meter_id for m in load_meters(dataset_dir)]

    groups: dict[str, list[JobRecord]] = {}
    for record in records:
        if record.params.process == "idle":
            continue
        if record.job_id.endswith("_dryrun"):
            continue
        cell = _strip_meter_suffix(record.job_id, known_ids)
        if cell is None:
            logger.warning("cannot attribute record %s to a cell; skipping", record.job_id)
            continue
        groups.setdefault(cell, []).append(record)

    existing = load_measurements(dataset_dir)
    bitrate_by_cell: dict[str, float] = {}
    for row in existing:
        if row.bitrate_kbps is None:
            continue
        cell = _strip_meter_suffix(row.job_id, known_ids + [spec.meter_id])
        if cell is not None:
            bitrate_by_cell.setdefault(cell, row.bitrate_kbps)

    kept = [row for row in existing if row.meter_id != spec.meter_id]
    replaced = len(existing) - len(kept)
    new_rows: list[MeasurementRow] = []
    skipped = 0
    helper = Dataset()
    for cell in sorted(groups):
        reps = sorted(groups[cell], key=lambda r: r.start)
        energies: list[float] = []
        pooled: list[np.ndarray] = []
        windows: list[PowerTrace] = []
        try:
            for record in reps:
                window = extract_window(trace, record.start, record.end, max_gap)
                result = integrate_energy(window)
                energies.append(result.energy)
                pooled.append(window.powers())
                windows.append(window)
        except (AlignmentError, ValueError) as exc:
            logger.warning("cell %s not covered by the log: %s", cell, exc)
            skipped += 1
            continue
        powers = np.concatenate(pooled)
        check = check_reliability(
            n=len(powers),
            mean=float(np.mean(powers)),
            std=float(np.std(powers, ddof=1)),
            params=params,
        )
        job_id = f"{cell}_{spec.meter_id}"
        measurement = EnergyMeasurement(
            job_id=job_id,
            meter_id=spec.meter_id,
            energy=float(np.mean(energies)),
            n_samples=check.n,
            mean_power=check.mean,
            std_power=check.std,
            reliable=check.satisfied,
            alpha=params.alpha,
        )
        reference = reps[0].params
        new_rows.append(
            MeasurementRow.from_measurement(
                measurement,
                process=reference.process,
                codec=reference.codec,
                width=reference.width,
                height=reference.height,
                fps=reference.fps,
                crf=reference.crf,
                bitrate_kbps=bitrate_by_cell.get(cell),
            )
        )
        for rep_index, window in enumerate(windows):
            name = helper.trace_filename(spec.meter_id, job_id, rep_index)
            with open(dataset_dir / name, "w") as f:
                write_trace_csv(window, f)

    write_measurements_csv(kept + new_rows, dataset_dir / MEASUREMENTS_FILE)
    save_meters(dataset_dir, [spec])
    return IngestSummary(
        meter_id=spec.meter_id,
        cells_measured=len(new_rows),
        cells_skipped=skipped,
        rows_replaced=replaced,
    )


def ingest_csv_into_dataset(
    dataset_dir: Path | str,
    csv_path: Path | str,
    spec: MeterSpec,
    params: ReliabilityParams | None = None,
    max_gap: float | None = None,
) -> IngestSummary:
    with open(csv_path) as f:
        trace = ingest_meter_csv(f, spec)
    return ingest_trace_into_dataset(dataset_dir, trace, spec, params, max_gap)
