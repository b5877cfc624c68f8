import io
import math

import pytest
from hypothesis import given, strategies as st

from codecwatt.model import (
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
    read_records_jsonl,
    validate_trace,
    write_records_jsonl,
    write_trace_csv,
)
from codecwatt.sources import ingest_meter_csv

from conftest import make_trace


class TestPowerSample:
    def test_rejects_negative_power(self):
        with pytest.raises(ValueError, match="power"):
            PowerSample(timestamp=1.0, power=-0.1)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PowerSample(timestamp=math.nan, power=1.0)
        with pytest.raises(ValueError):
            PowerSample(timestamp=0.0, power=math.inf)

    def test_zero_power_allowed(self):
        assert PowerSample(timestamp=0.0, power=0.0).power == 0.0


class TestValidateTrace:
    def test_well_formed_trace_empty_report(self):
        trace = make_trace([0.0, 0.5, 1.0], [1.0, 2.0, 3.0], nominal_interval=0.5)
        assert validate_trace(trace) == []

    def test_non_increasing_timestamp_reported_with_index(self):
        trace = make_trace([0.0, 0.5, 0.4], [1.0, 1.0, 1.0], nominal_interval=0.5)
        report = validate_trace(trace)
        assert report == ["non-increasing timestamp at index 2"]

    def test_gap_over_three_intervals_reported(self):
        # 2.0 s gap > 3 x 0.5 s
        trace = make_trace([0.0, 2.0], [1.0, 1.0], nominal_interval=0.5)
        report = validate_trace(trace)
        assert len(report) == 1
        assert "gap" in report[0]
        assert "index 0 and 1" in report[0]

    def test_gap_at_exactly_three_intervals_ok(self):
        trace = make_trace([0.0, 1.5], [1.0, 1.0], nominal_interval=0.5)
        assert validate_trace(trace) == []

    def test_empty_trace_valid(self):
        trace = PowerTrace(meter_id="m", samples=(), nominal_interval=0.5)
        assert validate_trace(trace) == []


class TestMeterSpec:
    def test_counter_meter_needs_domains(self):
        with pytest.raises(ValueError, match="domain"):
            MeterSpec(meter_id="m", kind="counter_software", scope="chip", nominal_interval=0.1)

    def test_external_meter_rejects_domains(self):
        with pytest.raises(ValueError, match="domains"):
            MeterSpec(
                meter_id="m",
                kind="external_hardware",
                scope="wall",
                nominal_interval=0.5,
                domains=("PKG",),
            )

    def test_roundtrip_dict(self, chip_meter):
        assert MeterSpec.from_dict(chip_meter.to_dict()) == chip_meter


class TestJobParams:
    def test_valid_cell(self):
        p = JobParams(codec="x265", process="encode", width=1920, height=1080, fps=60, crf=30)
        assert p.duplication_factor == 1

    @pytest.mark.parametrize(
        "kwargs,match",
        [
            (dict(crf=35), "crf"),
            (dict(width=1280, height=800), "resolution"),
            (dict(fps=25), "fps"),
            (dict(codec="av1"), "codec"),
            (dict(process="transcode"), "process"),
        ],
    )
    def test_out_of_grid_rejected(self, kwargs, match):
        base = dict(codec="x264", process="encode", width=3840, height=2160, fps=30, crf=10)
        base.update(kwargs)
        with pytest.raises(ValueError, match=match):
            JobParams(**base)


class TestJobRecord:
    def _params(self, process="encode"):
        return JobParams(
            codec="x264", process=process, width=1920, height=1080, fps=30, crf=20
        )

    def test_end_must_follow_start(self):
        with pytest.raises(ValueError, match="end"):
            JobRecord(
                job_id="j",
                params=self._params(),
                start=10.0,
                end=10.0,
                exit_status=0,
                sequence_id="s",
                output_size=1,
            )

    def test_successful_encode_needs_output(self):
        with pytest.raises(ValueError, match="output_size"):
            JobRecord(
                job_id="j",
                params=self._params(),
                start=0.0,
                end=1.0,
                exit_status=0,
                sequence_id="s",
            )

    def test_failed_encode_may_lack_output(self):
        record = JobRecord(
            job_id="j",
            params=self._params(),
            start=0.0,
            end=1.0,
            exit_status=1,
            sequence_id="s",
        )
        assert record.output_size is None

    def test_jsonl_roundtrip(self):
        records = [
            JobRecord(
                job_id=f"j{i}",
                params=self._params(),
                start=float(i),
                end=i + 0.5,
                exit_status=0,
                sequence_id="seq",
                repetition_index=i,
                output_size=1000 + i,
            )
            for i in range(3)
        ]
        buf = io.StringIO()
        write_records_jsonl(records, buf)
        buf.seek(0)
        assert read_records_jsonl(buf) == records


class TestSequenceSpec:
    def test_native_resolution_enforced(self):
        with pytest.raises(ValueError, match="native"):
            SequenceSpec(
                sequence_id="s",
                path="a.yuv",
                width=1920,
                height=1080,
                fps=30,
                pixel_format="yuv420",
                duration=20.0,
            )


class TestResultTypes:
    def test_fit_bounds(self):
        with pytest.raises(ValueError, match="r_squared"):
            FitResult(slope=1.0, intercept=0.0, r_squared=1.2, epsilon=0.0)
        with pytest.raises(ValueError, match="epsilon"):
            FitResult(slope=1.0, intercept=0.0, r_squared=1.0, epsilon=-0.1)

    def test_correlation_bounds(self):
        with pytest.raises(ValueError, match="pcc"):
            CorrelationReport(group=("x264", "encode"), pcc=1.5, scc=0.0, kcc=0.0, n_points=3)

    def test_reliable_measurement_needs_samples(self):
        with pytest.raises(ValueError, match="2 samples"):
            EnergyMeasurement(
                job_id="j",
                meter_id="m",
                energy=1.0,
                n_samples=1,
                mean_power=1.0,
                std_power=0.0,
                reliable=True,
                alpha=0.05,
            )


@given(
    e_total=st.floats(0.0, 1e6),
    e_proc=st.floats(0.0, 1e6),
    e_x=st.floats(-1e6, 1e6),
)
def test_decomposition_identity_is_constructional(e_total, e_proc, e_x):
    e_strg = e_total - e_proc - e_x
    d = EnergyDecomposition(
        e_total=e_total,
        e_proc=e_proc,
        e_strg=e_strg,
        e_x=e_x,
        residual_negative=(e_strg < 0 or e_x < 0),
    )
    assert math.isclose(d.e_proc + d.e_strg + d.e_x, d.e_total, rel_tol=1e-12, abs_tol=1e-9)


@given(
    st.lists(
        st.tuples(
            st.floats(0.0, 1e6, allow_nan=False),
            st.floats(0.0, 5e3, allow_nan=False),
        ),
        min_size=1,
        max_size=50,
    )
)
def test_trace_csv_roundtrip_bit_for_bit(points):
    # build strictly increasing timestamps from non-negative offsets
    t = 0.0
    samples = []
    for offset, power in points:
        t += offset + 0.001
        samples.append((t, power))
    trace = make_trace([s[0] for s in samples], [s[1] for s in samples])
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    spec = MeterSpec(meter_id="m", kind="external_hardware", scope="wall", nominal_interval=0.5)
    parsed = ingest_meter_csv(buf.getvalue(), spec)
    assert parsed.samples == trace.samples
