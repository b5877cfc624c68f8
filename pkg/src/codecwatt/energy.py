"""Aligning job windows with power traces and turning power into energy.

Job logs and power logs come from independent recorders on a shared clock,
so the first step for any energy figure is locating the job window inside
the trace. Energy is then the time integral of power over that window,
computed with the trapezoidal rule: exact for piecewise-linear power and
second-order accurate otherwise, which is as much as sampled data supports.

Wall-scope totals decompose into processor, storage, and background shares;
the background share is approximated by idle baseline power times duration,
the only observable proxy for it.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .model import EnergyDecomposition, PowerSample, PowerTrace


class AlignmentError(ValueError):
    """A trace cannot cover the requested time or window."""


def nearest_timestamp(trace: PowerTrace, t: float, max_gap: float) -> int:
    """Index of the sample closest in time to ``t``, ties toward the earlier.

    Raises :class:`AlignmentError` when the nearest sample is farther than
    ``max_gap`` — the symptom of a meter outage or clock skew rather than of
    ordinary sampling jitter.
    """
    if not trace.samples:
        raise AlignmentError("cannot align against an empty trace")
    if max_gap <= 0:
        raise ValueError(f"max_gap must be > 0, got {max_gap}")
    times = [s.timestamp for s in trace.samples]
    i = bisect.bisect_left(times, t)
    best = None
    best_dist = math.inf
    for j in (i - 1, i):
        if 0 <= j < len(times):
            dist = abs(times[j] - t)
            # strict < keeps the earlier index on a tie
            if dist < best_dist:
                best = j
                best_dist = dist
    assert best is not None
    if best_dist > max_gap:
        raise AlignmentError(
            f"nearest sample to t={t} is {best_dist:.6g}s away (max_gap {max_gap:.6g}s)"
        )
    return best


def _boundary_power(trace: PowerTrace, t: float, max_gap: float) -> float:
    """Power at boundary time ``t``: interpolated between bracketing samples,
    or extended from the nearest edge sample when ``t`` falls just outside
    the trace (within ``max_gap``)."""
    times = [s.timestamp for s in trace.samples]
    i = bisect.bisect_left(times, t)
    if i < len(times) and times[i] == t:
        return trace.samples[i].power
    left = i - 1
    right = i
    if left < 0:
        # before the first sample: nearest-sample extension
        if times[0] - t > max_gap:
            raise AlignmentError(
                f"boundary {t} precedes trace start {times[0]} by more than {max_gap:.6g}s"
            )
        return trace.samples[0].power
    if right >= len(times):
        if t - times[-1] > max_gap:
            raise AlignmentError(
                f"boundary {t} exceeds trace end {times[-1]} by more than {max_gap:.6g}s"
            )
        return trace.samples[-1].power
    # bracketed: demand a sample within max_gap so an outage around the
    # boundary is caught instead of papered over by a long interpolation
    if min(t - times[left], times[right] - t) > max_gap:
        raise AlignmentError(
            f"no sample within {max_gap:.6g}s of boundary {t}; trace gap suspected"
        )
    t0, p0 = times[left], trace.samples[left].power
    t1, p1 = times[right], trace.samples[right].power
    frac = (t - t0) / (t1 - t0)
    return p0 + (p1 - p0) * frac


def extract_window(
    trace: PowerTrace, start: float, end: float, max_gap: float | None = None
) -> PowerTrace:
    """Restrict a trace to the job window [start, end].

    Keeps samples strictly inside the window and synthesizes boundary
    samples at exactly ``start`` and ``end`` by linear interpolation between
    the bracketing samples (or nearest-sample extension when the boundary
    falls just off the trace ends). Interpolated boundaries matter at low
    sampling rates: snapping to the nearest sample can shift a sub-second
    window by a large fraction of its length.

    ``max_gap`` defaults to the trace's nominal interval.
    """
    if end <= start:
        raise ValueError(f"window start {start} must precede end {end}")
    if max_gap is None:
        max_gap = trace.nominal_interval
    if not trace.samples:
        raise AlignmentError("cannot window an empty trace")
    start_power = _boundary_power(trace, start, max_gap)
    end_power = _boundary_power(trace, end, max_gap)
    inner = [s for s in trace.samples if start < s.timestamp < end]
    samples = (
        PowerSample(timestamp=start, power=start_power),
        *inner,
        PowerSample(timestamp=end, power=end_power),
    )
    return PowerTrace(
        meter_id=trace.meter_id, samples=samples, nominal_interval=trace.nominal_interval
    )


@dataclass(frozen=True)
class IntegrationResult:
    """Energy over a window plus the sample statistics feeding the
    reliability criterion."""

    energy: float
    n_samples: int
    mean_power: float
    std_power: float


def integrate_energy(window: PowerTrace) -> IntegrationResult:
    """Trapezoidal integral of power over a windowed trace.

    Also returns the sample count, arithmetic mean power, and sample
    standard deviation (n-1 divisor) of the window. Fewer than two samples
    means the sampling rate cannot resolve the window at all; the caller
    should lengthen the job (duplication) rather than accept a rectangle
    guess.
    """
    n = len(window.samples)
    if n < 2:
        raise ValueError(
            f"cannot integrate a window of {n} sample(s); "
            "increase job duration or sampling rate"
        )
    t = window.timestamps()
    p = window.powers()
    energy = float(np.sum((p[:-1] + p[1:]) / 2.0 * np.diff(t)))
    return IntegrationResult(
        energy=energy,
        n_samples=n,
        mean_power=float(np.mean(p)),
        std_power=float(np.std(p, ddof=1)),
    )


def measure_idle_baseline(trace: PowerTrace) -> float:
    """Mean power of a trace taken with no benchmark job running."""
    if len(trace.samples) < 2:
        raise ValueError(
            f"idle baseline needs at least 2 samples, got {len(trace.samples)}"
        )
    return float(np.mean(trace.powers()))


def decompose_energy(
    e_total: float,
    e_proc: float,
    idle_power: float,
    duration: float,
    process: str,
) -> EnergyDecomposition:
    """Split a wall-scope total into processor, storage, and background parts.

    Encode: the background share is idle power times duration and storage is
    the remainder. Decode streams to a null sink and stores nothing, so the
    whole non-processor remainder is background. Remainders can go negative
    under measurement noise; they are preserved and flagged, not clamped,
    because a clamped decomposition would no longer sum to the total.
    """
    if e_total < 0 or e_proc < 0:
        raise ValueError("energies must be >= 0")
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    if process == "encode":
        e_x = idle_power * duration
        e_strg = e_total - e_proc - e_x
    elif process == "decode":
        e_strg = 0.0
        e_x = e_total - e_proc
    else:
        raise ValueError(f"process must be encode or decode, got {process!r}")
    return EnergyDecomposition(
        e_total=e_total,
        e_proc=e_proc,
        e_strg=e_strg,
        e_x=e_x,
        residual_negative=(e_strg < 0 or e_x < 0),
    )
