"""Codec command construction and input preparation.

The encode and decode invocations follow the fixed benchmark templates:

    <ffmpeg> -s <W>x<H> -r <FPS> -pix_fmt <fmt> -i <in>.yuv -c:v <codec> -crf <crf> <out>.mp4
    <ffmpeg> -i <encoded>.mp4 -f null -

with the codec mapped to its encoder library name and the default (medium)
preset left implicit. Decode writes to the null muxer — nothing is stored,
which is also what makes the decode energy storage-free.

Input preparation downscales the native sequence with a Lanczos filter
(parameter 3) and lengthens it by loss-free repetition, never re-encoding.
"""

from __future__ import annotations

import os
from pathlib import Path

from .model import CRF_SET, FPS_SET, RESOLUTIONS, JobParams, JobRecord, SequenceSpec

ENCODER_LIBS = {"x264": "libx264", "x265": "libx265"}

#: Planar tags accepted in configs; commands always emit the planar name.
_PIXEL_FORMAT_ALIASES = {"yuv420": "yuv420p", "yuv420p": "yuv420p"}

#: Environment variable overriding the encoder binary path.
ENCODER_ENV_VAR = "CODECWATT_ENCODER"


def encoder_binary(configured: str = "ffmpeg") -> str:
    """Encoder binary to invoke, with environment override."""
    return os.environ.get(ENCODER_ENV_VAR, configured)


def normalize_pixel_format(tag: str) -> str:
    """Map chroma-sampling tags to the encoder's planar name."""
    return _PIXEL_FORMAT_ALIASES.get(tag, tag)


def build_encode_command(
    seq: SequenceSpec,
    params: JobParams,
    input_path: str | Path,
    output_path: str | Path,
    binary: str = "ffmpeg",
) -> list[str]:
    """Encode command tokens for one grid cell.

    Validates the cell against the benchmark grid before building anything,
    so an out-of-grid parameter fails here and not minutes into a run.
    """
    if (params.width, params.height) not in RESOLUTIONS:
        raise ValueError(
            f"resolution {params.width}x{params.height} outside the benchmark grid"
        )
    if params.fps not in FPS_SET:
        raise ValueError(f"fps {params.fps} outside the benchmark grid")
    if params.crf not in CRF_SET:
        raise ValueError(f"crf {params.crf} outside the benchmark grid")
    lib = ENCODER_LIBS.get(params.codec)
    if lib is None:
        raise ValueError(f"unknown codec {params.codec!r}")
    return [
        binary,
        "-s", f"{params.width}x{params.height}",
        "-r", str(params.fps),
        "-pix_fmt", normalize_pixel_format(params.pixel_format),
        "-i", str(input_path),
        "-c:v", lib,
        "-crf", str(params.crf),
        str(output_path),
    ]


def build_decode_command(
    encoded_path: str | Path, binary: str = "ffmpeg", *, check_exists: bool = True
) -> list[str]:
    """Decode-to-null command tokens.

    The trailing ``-`` is the null muxer's output target; no file path ever
    appears after it, so a decode job cannot write anything.
    """
    path = Path(encoded_path)
    if check_exists and not path.is_file():
        raise FileNotFoundError(f"encoded input not found: {path}")
    return [binary, "-i", str(path), "-f", "null", "-"]


def build_prepare_commands(
    seq: SequenceSpec,
    target: tuple[int, int],
    duplication: int,
    scaled_path: str | Path,
    duplicated_path: str | Path,
    binary: str = "ffmpeg",
) -> list[list[str]]:
    """Commands that turn a native sequence into a cell's encode input.

    Downscale first (Lanczos, parameter 3), then repeat the scaled frames
    ``duplication`` times by stream copy. Scaling is skipped at native
    resolution and repetition at duplication 1; preparing a native cell at
    duplication 1 therefore needs no commands at all, and callers should
    then feed the source file directly.
    """
    if target not in RESOLUTIONS:
        raise ValueError(f"target resolution {target[0]}x{target[1]} outside the grid")
    if duplication < 1:
        raise ValueError(f"duplication must be >= 1, got {duplication}")
    commands: list[list[str]] = []
    width, height = target
    scale_needed = target != (seq.width, seq.height)
    if scale_needed:
        commands.append(
            [
                binary,
                "-s", f"{seq.width}x{seq.height}",
                "-r", str(seq.fps),
                "-pix_fmt", normalize_pixel_format(seq.pixel_format),
                "-i", str(seq.path),
                "-vf", f"scale={width}:{height}:flags=lanczos:param0=3",
                "-f", "rawvideo",
                str(scaled_path),
            ]
        )
    if duplication > 1:
        dup_input = scaled_path if scale_needed else seq.path
        commands.append(
            [
                binary,
                "-stream_loop", str(duplication - 1),
                "-s", f"{width}x{height}",
                "-r", str(seq.fps),
                "-pix_fmt", normalize_pixel_format(seq.pixel_format),
                "-i", str(dup_input),
                "-c", "copy",
                "-f", "rawvideo",
                str(duplicated_path),
            ]
        )
    return commands


def extract_bitrate(record: JobRecord, media_duration: float) -> float:
    """Bitrate of an encode's output in kilobits per second.

    ``media_duration`` is the playback length of the encoded media (source
    clip length times duplication), not the encoding time.
    """
    if record.output_size is None or record.output_size <= 0:
        raise ValueError("record has no positive output_size")
    if media_duration <= 0:
        raise ValueError(f"media_duration must be > 0, got {media_duration}")
    return record.output_size * 8.0 / media_duration / 1000.0
