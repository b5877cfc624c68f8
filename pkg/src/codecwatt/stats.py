"""Cross-meter statistics: correlation coefficients, the linear model that
predicts wall-meter energy from chip-meter energy, and the per-group report.

Chip and wall meters see different power (one measures the package, the
other the whole workstation), so the meaningful comparison is correlation
and a fitted linear map, not a direct difference. Pearson captures the
linear relation, Spearman and Kendall the rank agreement; Kendall uses the
tie-corrected tau-b variant because sampled energies can tie. All statistics
run on raw joules — log scales are for plots, not for the numbers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import MeasurementRow
from .model import CorrelationReport, FitResult

logger = logging.getLogger(__name__)

TABLE_FILE = "table2.csv"
TABLE_COLUMNS = ["codec", "process", "pcc", "scc", "kcc", "r2", "epsilon"]
SCATTER_COLUMNS = ["bitrate_kbps", "energy_j", "codec", "resolution", "meter"]


def _as_vectors(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.ndim != 1 or ya.ndim != 1:
        raise ValueError("inputs must be one-dimensional")
    if len(xa) != len(ya):
        raise ValueError(f"length mismatch: {len(xa)} vs {len(ya)}")
    if len(xa) < 2:
        raise ValueError(f"need at least 2 points, got {len(xa)}")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise ValueError("inputs must be finite")
    return xa, ya


def _clamp_unit(value: float) -> float:
    return max(-1.0, min(1.0, value))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    xa, ya = _as_vectors(x, y)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("pearson undefined for zero-variance input")
    return _clamp_unit(float(np.dot(dx, dy)) / math.sqrt(sxx * syy))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties assigned the average of their positions."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=float)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson applied to average ranks."""
    xa, ya = _as_vectors(x, y)
    return pearson(average_ranks(xa), average_ranks(ya))


def kendall(x: Sequence[float], y: Sequence[float]) -> float:
    """Kendall tau-b over all sample pairs.

    tau-b = (C - D) / sqrt((n0 - n1)(n0 - n2)) with C/D the concordant and
    discordant pair counts, n0 the total pair count, and n1/n2 the tie-pair
    counts of each input. Pair enumeration is O(n^2), which is fine at this
    dataset scale and keeps every tie case explicit.
    """
    xa, ya = _as_vectors(x, y)
    n = len(xa)
    iu = np.triu_indices(n, k=1)
    sx = np.sign(xa[:, None] - xa[None, :])[iu]
    sy = np.sign(ya[:, None] - ya[None, :])[iu]
    product = sx * sy
    concordant = int(np.sum(product > 0))
    discordant = int(np.sum(product < 0))
    ties_x = int(np.sum(sx == 0))
    ties_y = int(np.sum(sy == 0))
    n0 = n * (n - 1) // 2
    denom_sq = (n0 - ties_x) * (n0 - ties_y)
    if denom_sq == 0:
        raise ValueError("kendall undefined when an input is entirely tied")
    return _clamp_unit((concordant - discordant) / math.sqrt(denom_sq))


def fit_linear(sw: Sequence[float], hw: Sequence[float]) -> FitResult:
    """Least squares fit hw ~ slope * sw + intercept.

    Returns the fit with R^2 and the mean relative estimation error: the
    average of |prediction - hw| / hw over the points, which requires every
    hw value to be positive.
    """
    xa, ya = _as_vectors(sw, hw)
    if len(xa) < 3:
        raise ValueError(f"need at least 3 points to fit, got {len(xa)}")
    dx = xa - xa.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise ValueError("cannot fit: sw values have zero variance")
    if np.any(ya <= 0):
        raise ValueError("epsilon undefined: hw values must be positive")
    slope = float(np.dot(dx, ya - ya.mean())) / sxx
    intercept = float(ya.mean()) - slope * float(xa.mean())
    predicted = slope * xa + intercept
    ss_res = float(np.sum((ya - predicted) ** 2))
    ss_tot = float(np.sum((ya - ya.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("cannot score fit: hw values have zero variance")
    r_squared = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    epsilon = float(np.mean(np.abs(predicted - ya) / ya))
    return FitResult(slope=slope, intercept=intercept, r_squared=r_squared, epsilon=epsilon)


@dataclass(frozen=True)
class GroupAnalysis:
    """Correlations plus fit for one (codec, process) group."""

    report: CorrelationReport
    fit: FitResult


def correlate_groups(
    rows: Sequence[MeasurementRow], sw_meter_id: str, hw_meter_id: str
) -> list[GroupAnalysis]:
    """Pair software- and hardware-meter energies per cell and analyze each
    (codec, process) group.

    Rows pair up when they share the same job identity apart from the meter
    suffix. Cells present under only one meter are skipped with a warning;
    groups with fewer than 3 complete pairs are skipped entirely since no
    meaningful fit exists there.
    """
    pairs: dict[tuple[str, str], dict[str, dict[str, float]]] = {}
    for row in rows:
        if row.process not in ("encode", "decode"):
            continue
        if row.meter_id == sw_meter_id:
            side = "sw"
        elif row.meter_id == hw_meter_id:
            side = "hw"
        else:
            continue
        suffix = "_" + row.meter_id
        if not row.job_id.endswith(suffix):
            logger.warning("skipping row %s: job_id does not carry its meter", row.job_id)
            continue
        cell = row.job_id[: -len(suffix)]
        group = pairs.setdefault((row.codec, row.process), {})
        group.setdefault(cell, {})[side] = row.energy_j

    results: list[GroupAnalysis] = []
    for codec, process in sorted(pairs):
        cells = pairs[(codec, process)]
        sw_values = []
        hw_values = []
        for cell in sorted(cells):
            sides = cells[cell]
            if "sw" not in sides or "hw" not in sides:
                logger.warning(
                    "unpaired cell %s for group (%s, %s); skipping", cell, codec, process
                )
                continue
            sw_values.append(sides["sw"])
            hw_values.append(sides["hw"])
        if len(sw_values) < 3:
            logger.warning(
                "group (%s, %s) has %d complete pair(s); need 3, skipping",
                codec,
                process,
                len(sw_values),
            )
            continue
        report = CorrelationReport(
            group=(codec, process),
            pcc=pearson(sw_values, hw_values),
            scc=spearman(sw_values, hw_values),
            kcc=kendall(sw_values, hw_values),
            n_points=len(sw_values),
        )
        results.append(GroupAnalysis(report=report, fit=fit_linear(sw_values, hw_values)))
    return results


def write_table_csv(results: Sequence[GroupAnalysis], path: Path | str) -> None:
    """Write the per-group correlation/fit table."""
    with open(path, "w") as f:
        f.write(",".join(TABLE_COLUMNS) + "\n")
        for ga in results:
            codec, process = ga.report.group
            f.write(
                ",".join(
                    [
                        codec,
                        process,
                        repr(ga.report.pcc),
                        repr(ga.report.scc),
                        repr(ga.report.kcc),
                        repr(ga.fit.r_squared),
                        repr(ga.fit.epsilon),
                    ]
                )
                + "\n"
            )


def write_scatter_csv(
    rows: Sequence[MeasurementRow], process: str, path: Path | str
) -> int:
    """Write the energy-vs-bitrate scatter data for one process.

    Returns the number of points written. Rows without a bitrate (idle, or
    failed bitrate extraction) are omitted.
    """
    count = 0
    with open(path, "w") as f:
        f.write(",".join(SCATTER_COLUMNS) + "\n")
        for row in rows:
            if row.process != process or row.bitrate_kbps is None:
                continue
            f.write(
                ",".join(
                    [
                        repr(row.bitrate_kbps),
                        repr(row.energy_j),
                        row.codec,
                        f"{row.width}x{row.height}",
                        row.meter_id,
                    ]
                )
                + "\n"
            )
            count += 1
    return count
