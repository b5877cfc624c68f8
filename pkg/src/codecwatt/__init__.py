"""codecwatt: energy benchmarking for video encode/decode jobs with
statistically reliable power sampling and cross-meter calibration."""

__version__ = "0.1.0"

from .model import (
    CorrelationReport,
    EnergyDecomposition,
    EnergyMeasurement,
    FitResult,
    JobParams,
    JobRecord,
    MeterSpec,
    PowerSample,
    PowerTrace,
    SequenceSpec,
    validate_trace,
)

__all__ = [
    "CorrelationReport",
    "EnergyDecomposition",
    "EnergyMeasurement",
    "FitResult",
    "JobParams",
    "JobRecord",
    "MeterSpec",
    "PowerSample",
    "PowerTrace",
    "SequenceSpec",
    "validate_trace",
    "__version__",
]
