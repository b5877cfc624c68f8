"""Benchmark pipeline: prepare inputs, execute jobs under power sampling,
and persist the measurement dataset.

The driver walks the grid sequence x resolution x codec x crf strictly
sequentially — one benchmark job at a time, because a second job would
contaminate the power readings. Per cell it:

1. downscales the native sequence to the cell resolution (cached per
   resolution),
2. dry-runs encode and decode once, unsampled, to estimate durations,
3. picks the duplication factor that gives every configured meter its
   minimum expected sample count, and lengthens the input accordingly,
4. measures encode and then decode under each meter via the
   repeat-until-reliable loop,
5. decomposes the wall-meter total into processor/storage/background shares
   when both a chip- and a wall-scope meter are configured.

A cell failure is recorded and the run continues; a partial dataset is a
valid dataset.

The executor is injectable: the real one spawns subprocesses, the simulated
one (see :mod:`codecwatt.simulate`) interprets the same commands against a
virtual clock, which is what makes the whole pipeline testable without any
codec installed.
"""

from __future__ import annotations

import logging
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import commands as cmd
from .dataset import Dataset, DecompositionRow, FailureRecord, MeasurementRow
from .energy import decompose_energy, extract_window, integrate_energy, measure_idle_baseline
from .model import (
    CODECS,
    CRF_SET,
    RESOLUTIONS,
    JobParams,
    JobRecord,
    MeterSpec,
    SequenceSpec,
)
from .reliability import (
    JobExecutionError,
    ReliabilityParams,
    plan_duplication,
    run_until_reliable,
)
from .sources import SampleRun

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """The pipeline cannot proceed at all (as opposed to a per-cell failure)."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a benchmark run needs, validated at construction."""

    sequences: tuple[SequenceSpec, ...]
    meters: tuple[MeterSpec, ...]
    output_dir: str
    codecs: tuple[str, ...] = CODECS
    crf_set: tuple[int, ...] = CRF_SET
    resolutions: tuple[tuple[int, int], ...] = RESOLUTIONS
    reliability: ReliabilityParams = field(default_factory=ReliabilityParams)
    encoder_binary: str = "ffmpeg"
    idle_duration: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "meters", tuple(self.meters))
        object.__setattr__(self, "codecs", tuple(self.codecs))
        object.__setattr__(self, "crf_set", tuple(self.crf_set))
        object.__setattr__(
            self, "resolutions", tuple(tuple(r) for r in self.resolutions)
        )
        if not self.sequences:
            raise ValueError("config needs at least one sequence")
        if not self.meters:
            raise ValueError("config needs at least one meter")
        if not self.codecs:
            raise ValueError("config needs at least one codec")
        for c in self.codecs:
            if c not in CODECS:
                raise ValueError(f"codecs: unknown codec {c!r}")
        if not self.crf_set:
            raise ValueError("crf_set must be non-empty")
        for crf in self.crf_set:
            if crf not in CRF_SET:
                raise ValueError(f"crf_set: {crf} not in {sorted(CRF_SET)}")
        if not self.resolutions:
            raise ValueError("resolutions must be non-empty")
        for res in self.resolutions:
            if res not in RESOLUTIONS:
                raise ValueError(
                    f"resolutions: {res[0]}x{res[1]} not in the benchmark grid"
                )
        ids = [m.meter_id for m in self.meters]
        if len(set(ids)) != len(ids):
            raise ValueError("meter_ids must be unique")
        if self.idle_duration <= 0:
            raise ValueError("idle_duration must be > 0")


class CommandExecutor(Protocol):
    """Runs one command to completion and returns its exit status."""

    def run(self, command: Sequence[str]) -> int: ...


class SubprocessExecutor:
    """Real executor: spawns the command and waits for it."""

    def run(self, command: Sequence[str]) -> int:
        proc = subprocess.run(
            list(command),
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
            check=False,
        )
        return proc.returncode


@dataclass(frozen=True)
class JobSpec:
    """A job ready to execute: identity, parameters, and its command line."""

    job_id: str
    params: JobParams
    command: tuple[str, ...]
    sequence_id: str
    output_path: str | None = None


def run_job(
    command: Sequence[str],
    executor: CommandExecutor,
    *,
    job_id: str,
    params: JobParams,
    sequence_id: str,
    repetition: int = 0,
    clock: Callable[[], float] = time.time,
    output_path: str | Path | None = None,
) -> JobRecord:
    """Execute one job and record it.

    Start and end timestamps are taken immediately around the process on the
    sampler's clock. A nonzero exit raises :class:`JobExecutionError`
    carrying the record, so the failure keeps its timing context.
    """
    start = clock()
    status = executor.run(command)
    end = clock()
    output_size = None
    if params.process == "encode" and output_path is not None and status == 0:
        output_size = Path(output_path).stat().st_size
    record = JobRecord(
        job_id=job_id,
        params=params,
        start=start,
        end=end,
        exit_status=status,
        sequence_id=sequence_id,
        repetition_index=repetition,
        output_size=output_size,
    )
    if status != 0:
        raise JobExecutionError(
            f"job {job_id} repetition {repetition} exited with status {status}",
            repetition=repetition,
            record=record,
        )
    return record


class _RecordingSampler:
    """Wraps a sampler so every session's trace is captured for the dataset."""

    def __init__(self, inner):
        self._inner = inner
        self.runs: list[SampleRun] = []

    @property
    def meter_id(self) -> str:
        return self._inner.meter_id

    def start(self) -> None:
        self._inner.start()

    def stop(self) -> SampleRun:
        run = self._inner.stop()
        self.runs.append(run)
        return run


@dataclass
class PipelineRuntime:
    """Execution environment: executor, one sampler per meter, and the clock
    shared by job records and samplers."""

    executor: CommandExecutor
    samplers: dict[str, object]
    clock: Callable[[], float] = time.time
    sleep: Callable[[float], None] = time.sleep


def _idle_params() -> JobParams:
    # placeholder grid values; only `process` is meaningful for idle
    return JobParams(
        codec="x264", process="idle", width=3840, height=2160, fps=30, crf=10
    )


def _measure_idle(config: PipelineConfig, runtime: PipelineRuntime, ds: Dataset) -> dict[str, float]:
    baselines: dict[str, float] = {}
    for meter in config.meters:
        sampler = runtime.samplers[meter.meter_id]
        job_id = f"idle_{meter.meter_id}"
        sampler.start()
        start = runtime.clock()
        runtime.sleep(config.idle_duration)
        end = runtime.clock()
        run = sampler.stop()
        if run.failed:
            raise PipelineError(f"idle sampling failed on {meter.meter_id}: {run.error}")
        watts = measure_idle_baseline(run.trace)
        window = extract_window(run.trace, start, end, meter.nominal_interval)
        result = integrate_energy(window)
        record = JobRecord(
            job_id=job_id,
            params=_idle_params(),
            start=start,
            end=end,
            exit_status=0,
            sequence_id="",
        )
        ds.records.append(record)
        trace_name = ds.add_trace(meter.meter_id, job_id, 0, run.trace)
        ds.measurements.append(
            MeasurementRow(
                job_id=job_id,
                meter_id=meter.meter_id,
                process="idle",
                codec=record.params.codec,
                width=record.params.width,
                height=record.params.height,
                fps=record.params.fps,
                crf=record.params.crf,
                energy_j=result.energy,
                n_samples=result.n_samples,
                mean_w=result.mean_power,
                std_w=result.std_power,
                reliable=True,
                bitrate_kbps=None,
            )
        )
        ds.idle[meter.meter_id] = {
            "watts": watts,
            "n_samples": len(run.trace),
            "trace": trace_name,
        }
        baselines[meter.meter_id] = watts
        logger.info("idle baseline %s: %.2f W over %d samples", meter.meter_id, watts, len(run.trace))
    return baselines


@dataclass
class _MeterOutcome:
    measurement: object
    records: list[JobRecord]
    repetitions: int

    @property
    def mean_duration(self) -> float:
        return float(np.mean([r.duration for r in self.records]))


def _measure_under_meter(
    job: JobSpec,
    meter: MeterSpec,
    runtime: PipelineRuntime,
    ds: Dataset,
    reliability: ReliabilityParams,
) -> _MeterOutcome:
    """Run one job's repeat-until-reliable loop under one meter, capturing
    every repetition's record and trace into the dataset."""
    records: list[JobRecord] = []

    def execute(spec: JobSpec, repetition: int) -> JobRecord:
        record = run_job(
            spec.command,
            runtime.executor,
            job_id=spec.job_id,
            params=spec.params,
            sequence_id=spec.sequence_id,
            repetition=repetition,
            clock=runtime.clock,
            output_path=spec.output_path,
        )
        records.append(record)
        ds.records.append(record)
        return record

    sampler = _RecordingSampler(runtime.samplers[meter.meter_id])
    try:
        measurement, repetitions = run_until_reliable(
            job, execute, sampler, reliability, max_gap=meter.nominal_interval
        )
    finally:
        for rep, run in enumerate(sampler.runs):
            if len(run.trace) > 0:
                ds.add_trace(meter.meter_id, job.job_id, rep, run.trace)
    return _MeterOutcome(measurement=measurement, records=records, repetitions=repetitions)


def _scope_pair(meters: Sequence[MeterSpec]) -> tuple[str, str] | None:
    """First chip-scope and wall-scope meter ids, when both exist."""
    chip = next((m.meter_id for m in meters if m.scope == "chip"), None)
    wall = next((m.meter_id for m in meters if m.scope == "wall"), None)
    if chip is None or wall is None:
        return None
    return chip, wall


def run_pipeline(config: PipelineConfig, runtime: PipelineRuntime) -> Dataset:
    """Drive the full benchmark grid and persist the dataset.

    Returns the in-memory dataset after writing it to ``config.output_dir``.
    Cell failures are recorded in the dataset and do not stop the run.
    """
    out_dir = Path(config.output_dir)
    media_dir = out_dir / "media"
    try:
        media_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PipelineError(f"output_dir not writable: {exc}") from exc

    ds = Dataset(meters=list(config.meters))
    idle = _measure_idle(config, runtime, ds)
    binary = cmd.encoder_binary(config.encoder_binary)
    scope_pair = _scope_pair(config.meters)
    scaled_cache: dict[tuple[str, int, int], Path] = {}
    dup_cache: dict[tuple[str, int, int, int], Path] = {}

    for seq in config.sequences:
        for width, height in config.resolutions:
            for codec in config.codecs:
                for crf in config.crf_set:
                    cell_id = f"{seq.sequence_id}_{width}x{height}_{seq.fps}fps_{codec}_crf{crf}"
                    stage = "cell"
                    try:
                        _run_cell(
                            config,
                            runtime,
                            ds,
                            seq,
                            width,
                            height,
                            codec,
                            crf,
                            cell_id,
                            binary,
                            media_dir,
                            idle,
                            scope_pair,
                            scaled_cache,
                            dup_cache,
                        )
                    except _CellFailure as failure:
                        logger.warning("cell %s failed at %s: %s", cell_id, failure.stage, failure)
                        ds.failures.append(
                            FailureRecord(cell_id=cell_id, stage=failure.stage, error=str(failure))
                        )
                    except (JobExecutionError, OSError, ValueError, RuntimeError) as exc:
                        logger.warning("cell %s failed at %s: %s", cell_id, stage, exc)
                        ds.failures.append(
                            FailureRecord(cell_id=cell_id, stage=stage, error=str(exc))
                        )
    ds.save(out_dir)
    return ds


class _CellFailure(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _prepare_input(
    config: PipelineConfig,
    runtime: PipelineRuntime,
    seq: SequenceSpec,
    width: int,
    height: int,
    duplication: int,
    binary: str,
    media_dir: Path,
    scaled_cache: dict,
    dup_cache: dict,
) -> Path:
    """Scale (cached) and duplicate (cached) the cell input; returns the path
    the encode should consume."""
    native = (width, height) == (seq.width, seq.height)
    scaled_path = media_dir / f"{seq.sequence_id}_{width}x{height}.yuv"
    dup_path = media_dir / f"{seq.sequence_id}_{width}x{height}_x{duplication}.yuv"
    scale_key = (seq.sequence_id, width, height)
    dup_key = (seq.sequence_id, width, height, duplication)

    need_scale = (not native) and scale_key not in scaled_cache
    need_dup = duplication > 1 and dup_key not in dup_cache
    if need_scale or need_dup:
        prepare = cmd.build_prepare_commands(
            seq, (width, height), duplication, scaled_path, dup_path, binary
        )
        for command in prepare:
            is_scale = "-vf" in command
            if is_scale and not need_scale:
                continue
            if not is_scale and not need_dup:
                continue
            status = runtime.executor.run(command)
            if status != 0:
                raise _CellFailure("prepare", f"prepare command exited {status}")
        if need_scale:
            scaled_cache[scale_key] = scaled_path
        if need_dup:
            dup_cache[dup_key] = dup_path
    if duplication > 1:
        return dup_cache[dup_key]
    if native:
        return Path(seq.path)
    return scaled_cache[scale_key]


def _run_cell(
    config: PipelineConfig,
    runtime: PipelineRuntime,
    ds: Dataset,
    seq: SequenceSpec,
    width: int,
    height: int,
    codec: str,
    crf: int,
    cell_id: str,
    binary: str,
    media_dir: Path,
    idle: dict[str, float],
    scope_pair: tuple[str, str] | None,
    scaled_cache: dict,
    dup_cache: dict,
) -> None:
    reliability = config.reliability

    # dry runs at duplication 1 estimate how long this cell's jobs take
    dry_input = _prepare_input(
        config, runtime, seq, width, height, 1, binary, media_dir, scaled_cache, dup_cache
    )
    dry_params = JobParams(
        codec=codec,
        process="encode",
        width=width,
        height=height,
        fps=seq.fps,
        crf=crf,
        pixel_format=seq.pixel_format,
        duplication_factor=1,
    )
    dry_out = media_dir / f"{cell_id}_dry.mp4"
    try:
        dry_enc = run_job(
            cmd.build_encode_command(seq, dry_params, dry_input, dry_out, binary),
            runtime.executor,
            job_id=f"{cell_id}_encode_dryrun",
            params=dry_params,
            sequence_id=seq.sequence_id,
            clock=runtime.clock,
            output_path=dry_out,
        )
        ds.records.append(dry_enc)
        dry_dec = run_job(
            cmd.build_decode_command(dry_out, binary),
            runtime.executor,
            job_id=f"{cell_id}_decode_dryrun",
            params=_decode_params(dry_params),
            sequence_id=seq.sequence_id,
            clock=runtime.clock,
        )
        ds.records.append(dry_dec)
    except JobExecutionError as exc:
        if exc.record is not None:
            ds.records.append(exc.record)
        raise _CellFailure("dry-run", str(exc)) from exc

    duplication = 1
    for meter in config.meters:
        for est in (dry_enc.duration, dry_dec.duration):
            duplication = max(
                duplication,
                plan_duplication(est, meter.nominal_interval, reliability.n_min),
            )

    try:
        enc_input = _prepare_input(
            config,
            runtime,
            seq,
            width,
            height,
            duplication,
            binary,
            media_dir,
            scaled_cache,
            dup_cache,
        )
    except _CellFailure:
        raise
    except (OSError, ValueError) as exc:
        raise _CellFailure("prepare", str(exc)) from exc

    params = JobParams(
        codec=codec,
        process="encode",
        width=width,
        height=height,
        fps=seq.fps,
        crf=crf,
        pixel_format=seq.pixel_format,
        duplication_factor=duplication,
    )
    enc_out = media_dir / f"{cell_id}.mp4"
    media_duration = seq.duration * duplication

    # encode, then decode, each under every configured meter in turn
    outcomes: dict[tuple[str, str], _MeterOutcome] = {}
    bitrate: float | None = None
    for process in ("encode", "decode"):
        if process == "encode":
            job_params = params
        else:
            job_params = _decode_params(params)
            try:
                decode_command = cmd.build_decode_command(enc_out, binary)
            except FileNotFoundError as exc:
                raise _CellFailure("decode", str(exc)) from exc
        for meter in config.meters:
            job_id = f"{cell_id}_{process}_{meter.meter_id}"
            if process == "encode":
                command = cmd.build_encode_command(seq, job_params, enc_input, enc_out, binary)
                output_path = str(enc_out)
            else:
                command = decode_command
                output_path = None
            job = JobSpec(
                job_id=job_id,
                params=job_params,
                command=tuple(command),
                sequence_id=seq.sequence_id,
                output_path=output_path,
            )
            try:
                outcome = _measure_under_meter(job, meter, runtime, ds, reliability)
            except JobExecutionError as exc:
                if exc.record is not None:
                    ds.records.append(exc.record)
                raise _CellFailure(process, str(exc)) from exc
            except (ValueError, RuntimeError) as exc:
                raise _CellFailure(process, str(exc)) from exc
            outcomes[(process, meter.meter_id)] = outcome
            if process == "encode" and bitrate is None:
                bitrate = cmd.extract_bitrate(outcome.records[-1], media_duration)
            ds.measurements.append(
                MeasurementRow.from_measurement(
                    outcome.measurement,
                    process=process,
                    codec=codec,
                    width=width,
                    height=height,
                    fps=seq.fps,
                    crf=crf,
                    bitrate_kbps=bitrate,
                )
            )
            logger.info(
                "%s: %s under %s: %.2f J over %d repetition(s), reliable=%s",
                cell_id,
                process,
                meter.meter_id,
                outcome.measurement.energy,
                outcome.repetitions,
                outcome.measurement.reliable,
            )

    if scope_pair is not None:
        chip_id, wall_id = scope_pair
        for process in ("encode", "decode"):
            chip = outcomes[(process, chip_id)]
            wall = outcomes[(process, wall_id)]
            decomposition = decompose_energy(
                e_total=wall.measurement.energy,
                e_proc=chip.measurement.energy,
                idle_power=idle[wall_id],
                duration=wall.mean_duration,
                process=process,
            )
            ds.decompositions.append(
                DecompositionRow(
                    job_id=f"{cell_id}_{process}",
                    codec=codec,
                    process=process,
                    width=width,
                    height=height,
                    fps=seq.fps,
                    crf=crf,
                    decomposition=decomposition,
                )
            )


def _decode_params(encode_params: JobParams) -> JobParams:
    return JobParams(
        codec=encode_params.codec,
        process="decode",
        width=encode_params.width,
        height=encode_params.height,
        fps=encode_params.fps,
        crf=encode_params.crf,
        pixel_format=encode_params.pixel_format,
        duplication_factor=encode_params.duplication_factor,
    )
