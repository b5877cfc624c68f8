"""Deterministic end-to-end simulation: a virtual workstation with a mock
executor and synthetic chip/wall meters.

The simulated executor interprets the same command lines the real pipeline
builds, advancing a virtual clock instead of spawning processes, so the
entire measurement workflow — preparation, dry runs, duplication planning,
repeat-until-reliable sampling, analysis — runs on any machine with no codec
or meter hardware.

The physical model: the chip draws an idle floor plus a per-job active power
derived from the job parameters; the wall meter sees an affine transform of
chip power (gain for PSU/VRM losses, constant offset for the rest of the
box). Wall energy is therefore gain * chip energy + offset * duration, which
gives the cross-meter analysis a known ground truth to recover. Job
durations are constant per process so that ground truth has a well-defined
intercept. Everything is seeded: same seed, same bytes out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import MeterSpec, PowerTrace, SequenceSpec
from .pipeline import PipelineConfig, PipelineRuntime
from .reliability import ReliabilityParams
from .sources import SampleRun

#: Wall seconds of work per media second, by process. Constant across cells
#: so every cell's jobs share a duration and the wall-vs-chip energy relation
#: keeps a single intercept per process.
ENCODE_RATE = 0.2
DECODE_RATE = 0.02
SCALE_RATE = 0.03
REPEAT_RATE = 0.005

#: Virtual epoch the simulated clock starts at.
SIM_EPOCH = 1_000_000_000.0

#: Encoded size model: bits per pixel at a given crf/codec, with a global
#: shrink factor keeping placeholder files small.
_BPP_BASE = 0.9
_BPP_CRF_SLOPE = 0.11
_SIZE_SHRINK = 4096


class VirtualClock:
    """A clock that only moves when told to."""

    def __init__(self, start: float = SIM_EPOCH):
        self._now = float(start)

    def time(self) -> float:
        return self._now

    def sleep(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot sleep a negative duration")
        self._now += seconds


@dataclass(frozen=True)
class SimMedia:
    """What the simulator knows about a media file it has 'produced'."""

    seconds: float
    width: int
    height: int
    fps: int
    codec: str | None = None
    crf: int | None = None


@dataclass(frozen=True)
class WorkloadModel:
    """Chip power and size models for simulated jobs."""

    idle_chip_watts: float = 12.0
    active_base_watts: float = 48.0
    decode_power_factor: float = 0.4
    prepare_watts: float = 20.0

    def active_power(self, media: SimMedia, process: str, codec: str, crf: int) -> float:
        pixels = media.width * media.height
        res_f = (pixels / (1920.0 * 1080.0)) ** 0.6
        fps_f = (media.fps / 30.0) ** 0.4
        crf_f = 1.0 + 0.5 * (50 - crf) / 40.0
        codec_f = 1.35 if codec == "x265" else 1.0
        proc_f = 1.0 if process == "encode" else self.decode_power_factor
        return self.active_base_watts * res_f * fps_f * crf_f * codec_f * proc_f

    def encoded_bytes(self, media: SimMedia, codec: str, crf: int) -> int:
        bpp = _BPP_BASE * math.exp(-_BPP_CRF_SLOPE * crf)
        if codec == "x265":
            bpp *= 0.82
        bits = media.seconds * media.fps * media.width * media.height * bpp
        return max(1, int(bits / 8.0 / _SIZE_SHRINK))


class SimulatedWorkstation:
    """Virtual clock plus a timeline of chip power segments.

    The executor appends a segment per job; meters sample the timeline.
    Segments are closed intervals: a sample landing exactly on a job
    boundary reads the job's power, which keeps window boundaries clean.
    """

    def __init__(self, model: WorkloadModel, clock: VirtualClock | None = None):
        self.model = model
        self.clock = clock or VirtualClock()
        self._segments: list[tuple[float, float, float]] = []

    def record_segment(self, start: float, end: float, watts: float) -> None:
        self._segments.append((start, end, watts))

    def chip_power_at(self, t: float) -> float:
        # linear scan from the end: lookups cluster around recent segments
        for start, end, watts in reversed(self._segments):
            if start <= t <= end:
                return self.model.idle_chip_watts + watts
            if end < t:
                break
        return self.model.idle_chip_watts


class SimulatedExecutor:
    """Interprets benchmark command lines against the virtual workstation.

    Supports the four command shapes the pipeline emits: scale, loss-free
    repeat, encode, and decode-to-null. Outputs are placeholder files (sized
    by the encode size model; empty for raw video) registered with their
    media properties so later commands can look them up.
    """

    def __init__(
        self,
        workstation: SimulatedWorkstation,
        fail_matcher=None,
    ):
        self.workstation = workstation
        self.media: dict[str, SimMedia] = {}
        self.commands_run: list[tuple[str, ...]] = []
        #: optional hook making matching commands exit nonzero (fault injection)
        self.fail_matcher = fail_matcher

    def register_source(self, path: str | Path, media: SimMedia) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).touch()
        self.media[str(path)] = media

    def _arg(self, tokens: list[str], flag: str) -> str:
        return tokens[tokens.index(flag) + 1]

    def run(self, command: Sequence[str]) -> int:
        tokens = list(command)
        self.commands_run.append(tuple(tokens))
        if self.fail_matcher is not None and self.fail_matcher(tokens):
            self.workstation.clock.sleep(0.05)
            return 1
        if "-vf" in tokens:
            return self._run_scale(tokens)
        if "-stream_loop" in tokens:
            return self._run_repeat(tokens)
        if "-f" in tokens and tokens[tokens.index("-f") + 1] == "null":
            return self._run_decode(tokens)
        if "-c:v" in tokens:
            return self._run_encode(tokens)
        return 1

    def _input_media(self, tokens: list[str]) -> SimMedia:
        path = self._arg(tokens, "-i")
        media = self.media.get(path)
        if media is None:
            raise FileNotFoundError(f"simulated input not registered: {path}")
        return media

    def _advance(self, duration: float, active_watts: float) -> None:
        clock = self.workstation.clock
        start = clock.time()
        clock.sleep(duration)
        self.workstation.record_segment(start, clock.time(), active_watts)

    def _run_scale(self, tokens: list[str]) -> int:
        media = self._input_media(tokens)
        target = self._arg(tokens, "-vf")
        dims = target.split("=", 1)[1].split(":")
        width, height = int(dims[0]), int(dims[1])
        out = tokens[-1]
        self._advance(SCALE_RATE * media.seconds, self.workstation.model.prepare_watts)
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).touch()
        self.media[out] = SimMedia(media.seconds, width, height, media.fps)
        return 0

    def _run_repeat(self, tokens: list[str]) -> int:
        media = self._input_media(tokens)
        loops = int(self._arg(tokens, "-stream_loop")) + 1
        out = tokens[-1]
        self._advance(
            REPEAT_RATE * media.seconds * loops, self.workstation.model.prepare_watts
        )
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).touch()
        self.media[out] = SimMedia(
            media.seconds * loops, media.width, media.height, media.fps
        )
        return 0

    def _run_encode(self, tokens: list[str]) -> int:
        media = self._input_media(tokens)
        codec = {"libx264": "x264", "libx265": "x265"}[self._arg(tokens, "-c:v")]
        crf = int(self._arg(tokens, "-crf"))
        out = tokens[-1]
        watts = self.workstation.model.active_power(media, "encode", codec, crf)
        self._advance(ENCODE_RATE * media.seconds, watts)
        size = self.workstation.model.encoded_bytes(media, codec, crf)
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "wb") as f:
            f.truncate(size)
        self.media[out] = SimMedia(
            media.seconds, media.width, media.height, media.fps, codec=codec, crf=crf
        )
        return 0

    def _run_decode(self, tokens: list[str]) -> int:
        media = self._input_media(tokens)
        if media.codec is None or media.crf is None:
            raise ValueError("simulated decode input is not an encoded file")
        watts = self.workstation.model.active_power(media, "decode", media.codec, media.crf)
        self._advance(DECODE_RATE * media.seconds, watts)
        return 0


@dataclass(frozen=True)
class SimMeterModel:
    """How a synthetic meter maps chip power to its own reading."""

    gain: float = 1.0
    offset_watts: float = 0.0
    noise_std: float = 0.0


class SimulatedMeterSampler:
    """Synthetic meter: samples the workstation timeline between start and
    stop on the meter's nominal grid, with seeded Gaussian noise.

    Power values are evaluated a hair inside the session span so a sample on
    the exact boundary between two jobs reads this session's job, not its
    neighbour.
    """

    _EDGE = 1e-9

    def __init__(
        self,
        spec: MeterSpec,
        workstation: SimulatedWorkstation,
        model: SimMeterModel,
        rng: np.random.Generator,
    ):
        self.spec = spec
        self.workstation = workstation
        self.model = model
        self._master_rng = rng
        self._session_start: float | None = None
        self._session_rng: np.random.Generator | None = None

    @property
    def meter_id(self) -> str:
        return self.spec.meter_id

    def start(self) -> None:
        if self._session_start is not None:
            raise RuntimeError("sampler already started")
        self._session_start = self.workstation.clock.time()
        self._session_rng = np.random.default_rng(
            int(self._master_rng.integers(2**63))
        )

    def stop(self) -> SampleRun:
        if self._session_start is None or self._session_rng is None:
            raise RuntimeError("sampler not started")
        t0 = self._session_start
        t1 = self.workstation.clock.time()
        self._session_start = None
        interval = self.spec.nominal_interval
        n = int(math.floor((t1 - t0) / interval + 1e-9)) + 1
        times = t0 + np.arange(n) * interval
        lo, hi = t0 + self._EDGE, max(t0 + self._EDGE, t1 - self._EDGE)
        chip = np.array(
            [self.workstation.chip_power_at(min(max(t, lo), hi)) for t in times]
        )
        watts = self.model.gain * chip + self.model.offset_watts
        if self.model.noise_std > 0:
            watts = watts + self._session_rng.normal(0.0, self.model.noise_std, size=n)
        watts = np.maximum(watts, 0.0)
        self._session_rng = None
        trace = PowerTrace.from_arrays(self.spec.meter_id, times, watts, interval)
        return SampleRun(trace=trace, failed=False, error=None)


@dataclass(frozen=True)
class SimulationSetup:
    """A ready-to-run simulated benchmark."""

    config: PipelineConfig
    runtime: PipelineRuntime
    workstation: SimulatedWorkstation
    chip_model: SimMeterModel
    wall_model: SimMeterModel


#: Defaults for the paired-meter simulation. The wall meter's ground truth
#: relation to the chip meter is energy_wall = GAIN * energy_chip +
#: OFFSET * duration.
SIM_WALL_GAIN = 1.18
SIM_WALL_OFFSET = 38.0
SIM_CHIP_NOISE = 0.35
SIM_WALL_NOISE = 0.7

SIM_CHIP_METER = MeterSpec(
    meter_id="sim_chip", kind="synthetic", scope="chip", nominal_interval=0.1
)
SIM_WALL_METER = MeterSpec(
    meter_id="sim_wall", kind="synthetic", scope="wall", nominal_interval=0.5
)


def default_sim_config(output_dir: str | Path, seed: int = 0) -> PipelineConfig:
    """The stock simulation grid: one native sequence, two resolutions, both
    codecs, the full crf ladder, chip and wall synthetic meters."""
    out = Path(output_dir)
    seq = SequenceSpec(
        sequence_id="simsrc",
        path=str(out / "media" / "simsrc.yuv"),
        width=3840,
        height=2160,
        fps=30,
        pixel_format="yuv420",
        duration=20.0,
    )
    return PipelineConfig(
        sequences=(seq,),
        meters=(SIM_CHIP_METER, SIM_WALL_METER),
        output_dir=str(out),
        codecs=("x264", "x265"),
        crf_set=(10, 20, 30, 40, 50),
        resolutions=((1920, 1080), (1280, 720)),
        reliability=ReliabilityParams(alpha=0.05, n_min=30, max_repetitions=10),
        encoder_binary="ffmpeg",
        idle_duration=10.0,
        seed=seed,
    )


def build_simulation(
    config: PipelineConfig,
    *,
    noise_scale: float = 1.0,
    wall_gain: float = SIM_WALL_GAIN,
    wall_offset: float = SIM_WALL_OFFSET,
    workload: WorkloadModel | None = None,
) -> SimulationSetup:
    """Wire a config to a virtual workstation, executor, and meter samplers.

    Sequences' source files are registered as placeholder media. Meters with
    chip scope sample chip power directly; wall-scope meters sample the
    affine wall transform. ``noise_scale`` multiplies both meters' noise so
    noise sweeps stay proportional draw-for-draw under a fixed seed.
    """
    workstation = SimulatedWorkstation(workload or WorkloadModel())
    executor = SimulatedExecutor(workstation)
    for seq in config.sequences:
        executor.register_source(
            seq.path, SimMedia(seq.duration, seq.width, seq.height, seq.fps)
        )
    chip_model = SimMeterModel(gain=1.0, offset_watts=0.0, noise_std=SIM_CHIP_NOISE * noise_scale)
    wall_model = SimMeterModel(
        gain=wall_gain, offset_watts=wall_offset, noise_std=SIM_WALL_NOISE * noise_scale
    )
    master = np.random.default_rng(config.seed)
    samplers: dict[str, SimulatedMeterSampler] = {}
    for meter in config.meters:
        model = chip_model if meter.scope == "chip" else wall_model
        samplers[meter.meter_id] = SimulatedMeterSampler(
            meter, workstation, model, np.random.default_rng(int(master.integers(2**63)))
        )
    runtime = PipelineRuntime(
        executor=executor,
        samplers=samplers,
        clock=workstation.clock.time,
        sleep=workstation.clock.sleep,
    )
    return SimulationSetup(
        config=config,
        runtime=runtime,
        workstation=workstation,
        chip_model=chip_model,
        wall_model=wall_model,
    )
