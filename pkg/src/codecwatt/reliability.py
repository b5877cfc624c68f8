"""Statistical reliability control for power measurements.

Short jobs sampled at a modest rate yield few power samples, and background
activity makes single measurements noisy. Two levers compensate: lengthening
the job by duplicating its input until the expected sample count is met, and
repeating the job while pooling window samples until the dispersion bound

    t_{alpha/2} * sigma / (2 * alpha * mean) < N * sqrt(2N)

holds, where N is the pooled sample count, sigma and mean the pooled sample
statistics, and t the Student-t critical value at N-1 degrees of freedom.
The bound is applied exactly as written; its right-hand side grows like
N^1.5, so once satisfied it stays satisfied as samples accumulate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
from scipy import stats as sp_stats

from .energy import extract_window, integrate_energy
from .model import EnergyMeasurement, JobRecord, PowerTrace


class JobExecutionError(RuntimeError):
    """A benchmark job failed; carries the repetition it failed on."""

    def __init__(self, message: str, repetition: int, record: JobRecord | None = None):
        super().__init__(message)
        self.repetition = repetition
        self.record = record


@dataclass(frozen=True)
class ReliabilityParams:
    """Knobs of the reliability loop.

    ``alpha`` is the confidence bound of the dispersion test, ``n_min`` the
    sample count the duplication planner aims for, ``max_repetitions`` the
    hard cap on repeats when the test never passes.
    """

    alpha: float = 0.05
    n_min: int = 30
    max_repetitions: int = 10

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must be in (0, 0.5), got {self.alpha}")
        if self.n_min < 2:
            raise ValueError(f"n_min must be >= 2, got {self.n_min}")
        if self.max_repetitions < 1:
            raise ValueError("max_repetitions must be >= 1")


@dataclass(frozen=True)
class ReliabilityCheck:
    """Outcome of one evaluation of the dispersion bound."""

    n: int
    mean: float
    std: float
    t_crit: float
    lhs: float
    rhs: float
    satisfied: bool


def t_critical(alpha_half: float, df: float) -> float:
    """Student-t critical value with upper-tail probability ``alpha_half``.

    ``df`` may be ``math.inf``, which returns the normal-limit quantile.
    """
    if not 0.0 < alpha_half < 0.5:
        raise ValueError(f"alpha_half must be in (0, 0.5), got {alpha_half}")
    if math.isinf(df):
        return float(sp_stats.norm.ppf(1.0 - alpha_half))
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    return float(sp_stats.t.ppf(1.0 - alpha_half, df))


def check_reliability(
    n: int, mean: float, std: float, params: ReliabilityParams
) -> ReliabilityCheck:
    """Evaluate the dispersion bound on pooled power-sample statistics.

    Degrees of freedom are ``n - 1``, the standard choice for a sample-mean
    interval. A non-positive mean makes the bound meaningless and signals an
    empty or garbage window, so it is an error rather than a failed check.
    """
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if mean <= 0:
        raise ValueError(f"mean power must be > 0, got {mean}")
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    t_crit = t_critical(params.alpha / 2.0, n - 1)
    lhs = (t_crit * std) / (2.0 * params.alpha * mean)
    rhs = n * math.sqrt(2.0 * n)
    return ReliabilityCheck(
        n=n, mean=mean, std=std, t_crit=t_crit, lhs=lhs, rhs=rhs, satisfied=lhs < rhs
    )


def plan_duplication(est_duration: float, interval: float, n_min: int) -> int:
    """Input copies needed so a job yields at least ``n_min`` power samples.

    ``est_duration`` is the measured single-copy duration; concatenating
    ``k`` copies scales it by ``k``, so ``k = ceil(n_min * interval /
    est_duration)`` (at least 1) gives the expected sample count.
    """
    if est_duration <= 0:
        raise ValueError(f"est_duration must be > 0, got {est_duration}")
    if interval <= 0:
        raise ValueError(f"interval must be > 0, got {interval}")
    if n_min < 2:
        raise ValueError(f"n_min must be >= 2, got {n_min}")
    return max(1, math.ceil(n_min * interval / est_duration))


class TraceSampler(Protocol):
    """One-job-at-a-time power sampler; ``stop`` returns the session trace."""

    @property
    def meter_id(self) -> str: ...

    def start(self) -> None: ...

    def stop(self) -> "SampleRunLike": ...


class SampleRunLike(Protocol):
    trace: PowerTrace
    failed: bool
    error: str | None


def run_until_reliable(
    job,
    executor: Callable[[object, int], JobRecord],
    sampler: TraceSampler,
    params: ReliabilityParams,
    *,
    max_gap: float | None = None,
) -> tuple[EnergyMeasurement, int]:
    """Repeat a job until its pooled power samples pass the dispersion bound.

    Each repetition runs under the sampler, the job window is cut from the
    session trace, and its power samples join the pool. The bound is
    re-evaluated after every repetition; the loop stops at the first pass or
    at ``params.max_repetitions``, whichever comes first. Repetitions are
    strictly sequential — concurrent jobs would contaminate each other's
    power readings.

    The dispersion test applies to the pooled power distribution, but energy
    is a per-execution quantity, so the reported energy is the mean of the
    per-repetition integrals. ``job`` must expose a ``job_id`` attribute; it
    is passed through to the executor untouched.
    """
    pooled: list[np.ndarray] = []
    energies: list[float] = []
    check: ReliabilityCheck | None = None
    repetitions = 0
    for rep in range(params.max_repetitions):
        sampler.start()
        try:
            record = executor(job, rep)
        except JobExecutionError:
            sampler.stop()
            raise
        except Exception as exc:
            sampler.stop()
            raise JobExecutionError(
                f"repetition {rep}: job execution failed: {exc}", repetition=rep
            ) from exc
        run = sampler.stop()
        if run.failed:
            raise JobExecutionError(
                f"repetition {rep}: sampler failed: {run.error}", repetition=rep, record=record
            )
        window = extract_window(run.trace, record.start, record.end, max_gap)
        result = integrate_energy(window)
        energies.append(result.energy)
        pooled.append(window.powers())
        repetitions = rep + 1
        powers = np.concatenate(pooled)
        check = check_reliability(
            n=len(powers),
            mean=float(np.mean(powers)),
            std=float(np.std(powers, ddof=1)),
            params=params,
        )
        if check.satisfied:
            break
    assert check is not None
    measurement = EnergyMeasurement(
        job_id=job.job_id,
        meter_id=sampler.meter_id,
        energy=float(np.mean(energies)),
        n_samples=check.n,
        mean_power=check.mean,
        std_power=check.std,
        reliable=check.satisfied,
        alpha=params.alpha,
    )
    return measurement, repetitions
