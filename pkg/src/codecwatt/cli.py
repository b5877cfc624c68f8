"""Command-line front end.

Subcommands map onto the pipeline stages: ``measure`` runs the benchmark on
real hardware, ``ingest`` folds an external meter log into a dataset,
``analyze`` and ``report`` produce the cross-meter statistics and plot data,
``idle`` measures a standing baseline, and ``simulate`` exercises the whole
workflow end to end with a mock executor and synthetic meters — no codec, no
counter interface, no meter hardware required.

Logs go to standard error; data only ever goes to files. Exit codes: 0 ok,
2 usage, 3 bad configuration, 4 execution failure, 5 analysis/data failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .dataset import (
    Dataset,
    load_measurements,
    load_meters,
)
from .energy import measure_idle_baseline
from .ingest import ingest_csv_into_dataset
from .model import MeterSpec, SequenceSpec
from .pipeline import (
    PipelineConfig,
    PipelineError,
    PipelineRuntime,
    SubprocessExecutor,
    run_pipeline,
)
from .reliability import JobExecutionError, ReliabilityParams
from .simulate import build_simulation, default_sim_config
from .sources import PowercapCounterSource, make_counter_sampler
from .stats import TABLE_FILE, correlate_groups, write_scatter_csv, write_table_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_EXECUTION = 4
EXIT_DATA = 5

_EPILOG = """exit codes:
  0  success
  2  usage error
  3  configuration error (bad file, schema, or out-of-grid value)
  4  execution failure (job, sampler, or meter)
  5  analysis or dataset error
"""


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or out of the grid."""


def parse_config(path: Path | str) -> PipelineConfig:
    """Load and validate a pipeline configuration file.

    Grid constraints (codecs, crf values, resolutions) are enforced here so
    a bad config dies before any job runs; error messages carry the field
    that failed.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")

    def fail(field: str, exc: Exception) -> ConfigError:
        return ConfigError(f"{field}: {exc}")

    try:
        sequences = tuple(
            SequenceSpec.from_dict(d) for d in data.get("sequences", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise fail("sequences", exc) from exc
    try:
        meters = tuple(MeterSpec.from_dict(d) for d in data.get("meters", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise fail("meters", exc) from exc
    rel = data.get("reliability", {})
    if not isinstance(rel, dict):
        raise ConfigError("reliability: must be an object")
    try:
        reliability = ReliabilityParams(
            alpha=float(rel.get("alpha", 0.05)),
            n_min=int(rel.get("n_min", 30)),
            max_repetitions=int(rel.get("max_repetitions", 10)),
        )
    except (TypeError, ValueError) as exc:
        raise fail("reliability", exc) from exc
    if "output_dir" not in data:
        raise ConfigError("output_dir: required")

    kwargs = {}
    for field, caster in (
        ("codecs", lambda v: tuple(v)),
        ("crf_set", lambda v: tuple(int(x) for x in v)),
        ("resolutions", lambda v: tuple((int(r[0]), int(r[1])) for r in v)),
        ("encoder_binary", str),
        ("idle_duration", float),
        ("seed", int),
    ):
        if field in data:
            try:
                kwargs[field] = caster(data[field])
            except (TypeError, ValueError, IndexError) as exc:
                raise fail(field, exc) from exc
    try:
        return PipelineConfig(
            sequences=sequences,
            meters=meters,
            output_dir=str(data["output_dir"]),
            reliability=reliability,
            **kwargs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _real_samplers(config: PipelineConfig) -> dict[str, object]:
    samplers: dict[str, object] = {}
    for meter in config.meters:
        if meter.kind == "counter_software":
            source = PowercapCounterSource()
            missing = [d for d in meter.domains if d not in source.available_domains()]
            if missing:
                raise PipelineError(
                    f"meter {meter.meter_id}: domain(s) {missing} not available "
                    "on this platform"
                )
            samplers[meter.meter_id] = make_counter_sampler(meter, source)
        elif meter.kind == "external_hardware":
            raise ConfigError(
                f"meter {meter.meter_id}: external_hardware logs are ingested "
                "offline with the `ingest` subcommand, not sampled live"
            )
        else:
            raise ConfigError(
                f"meter {meter.meter_id}: synthetic meters only run under `simulate`"
            )
    return samplers


def _analyze_dataset(directory: Path, sw: str | None, hw: str | None):
    rows = load_measurements(directory)
    meters = load_meters(directory)
    if sw is None:
        sw = next((m.meter_id for m in meters if m.scope == "chip"), None)
    if hw is None:
        hw = next((m.meter_id for m in meters if m.scope == "wall"), None)
    if sw is None or hw is None:
        raise ValueError(
            "could not determine the chip/wall meter pair; pass --sw and --hw"
        )
    return rows, correlate_groups(rows, sw, hw)


def _write_analysis(directory: Path, results) -> Path:
    table_path = directory / TABLE_FILE
    write_table_csv(results, table_path)
    return table_path


def _write_scatter(directory: Path, rows) -> list[Path]:
    paths = []
    for process in ("encode", "decode"):
        path = directory / f"scatter_{process}.csv"
        write_scatter_csv(rows, process, path)
        paths.append(path)
    return paths


def _cmd_measure(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    if args.out:
        config = PipelineConfig(
            sequences=config.sequences,
            meters=config.meters,
            output_dir=args.out,
            codecs=config.codecs,
            crf_set=config.crf_set,
            resolutions=config.resolutions,
            reliability=config.reliability,
            encoder_binary=config.encoder_binary,
            idle_duration=config.idle_duration,
            seed=config.seed,
        )
    runtime = PipelineRuntime(executor=SubprocessExecutor(), samplers=_real_samplers(config))
    dataset = run_pipeline(config, runtime)
    print(f"dataset written to {config.output_dir}")
    print(
        f"{len(dataset.measurements)} measurements, "
        f"{len(dataset.failures)} failed cell(s)"
    )
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    config = default_sim_config(out, seed=args.seed)
    setup = build_simulation(config, noise_scale=args.noise)
    dataset = run_pipeline(setup.config, setup.runtime)
    rows, results = _analyze_dataset(out, None, None)
    table_path = _write_analysis(out, results)
    scatter_paths = _write_scatter(out, rows)
    print(f"simulated dataset written to {out}")
    print(f"analysis written to {table_path}")
    for p in scatter_paths:
        print(f"scatter data written to {p}")
    if dataset.failures:
        print(f"{len(dataset.failures)} failed cell(s)", file=sys.stderr)
        return EXIT_EXECUTION
    return EXIT_OK


def _cmd_ingest(args: argparse.Namespace) -> int:
    spec = MeterSpec(
        meter_id=args.meter_id,
        kind=args.kind,
        scope=args.scope,
        nominal_interval=args.interval,
        domains=(),
    )
    summary = ingest_csv_into_dataset(
        args.dataset,
        args.csv,
        spec,
        ReliabilityParams(alpha=args.alpha),
        max_gap=args.max_gap,
    )
    print(
        f"ingested {summary.meter_id}: {summary.cells_measured} cell(s) measured, "
        f"{summary.cells_skipped} skipped, {summary.rows_replaced} old row(s) replaced"
    )
    print(f"measurements updated in {args.dataset}")
    return EXIT_OK


def _cmd_analyze(args: argparse.Namespace) -> int:
    directory = Path(args.dataset)
    rows, results = _analyze_dataset(directory, args.sw, args.hw)
    table_path = _write_analysis(directory, results)
    print(f"analysis written to {table_path}")
    for ga in results:
        codec, process = ga.report.group
        print(
            f"{codec} {process}: pcc={ga.report.pcc:.4f} scc={ga.report.scc:.4f} "
            f"kcc={ga.report.kcc:.4f} r2={ga.fit.r_squared:.4f} "
            f"epsilon={ga.fit.epsilon * 100:.2f}% (n={ga.report.n_points})"
        )
    if not results:
        print("no group had enough paired measurements", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    directory = Path(args.dataset)
    rows = load_measurements(directory)
    scatter_paths = _write_scatter(directory, rows)
    for p in scatter_paths:
        print(f"scatter data written to {p}")
    by_process: dict[str, int] = {}
    unreliable = 0
    for row in rows:
        by_process[row.process] = by_process.get(row.process, 0) + 1
        if not row.reliable:
            unreliable += 1
    print("measurement counts: " + ", ".join(f"{k}={v}" for k, v in sorted(by_process.items())))
    print(f"unreliable measurements: {unreliable}")
    try:
        _, results = _analyze_dataset(directory, args.sw, args.hw)
    except (ValueError, FileNotFoundError) as exc:
        print(f"cross-meter summary unavailable: {exc}", file=sys.stderr)
        return EXIT_OK
    for ga in results:
        codec, process = ga.report.group
        print(
            f"{codec} {process}: hw ~ {ga.fit.slope:.3f}*sw + {ga.fit.intercept:.1f} J, "
            f"r2={ga.fit.r_squared:.4f}, epsilon={ga.fit.epsilon * 100:.2f}%, "
            f"pcc={ga.report.pcc:.4f}, scc={ga.report.scc:.4f}, kcc={ga.report.kcc:.4f}"
        )
    return EXIT_OK


def _cmd_idle(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    samplers = _real_samplers(config)
    out = Path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    duration = args.duration or config.idle_duration
    ds = Dataset(meters=list(config.meters))
    for meter in config.meters:
        sampler = samplers[meter.meter_id]
        sampler.start()
        time.sleep(duration)
        run = sampler.stop()
        if run.failed:
            raise PipelineError(f"idle sampling failed on {meter.meter_id}: {run.error}")
        watts = measure_idle_baseline(run.trace)
        name = ds.add_trace(meter.meter_id, "idle", 0, run.trace)
        ds.idle[meter.meter_id] = {
            "watts": watts,
            "n_samples": len(run.trace),
            "trace": name,
        }
        print(f"{meter.meter_id}: idle baseline {watts:.2f} W ({len(run.trace)} samples)")
    ds.save(out)
    print(f"idle data written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codecwatt",
        description="Energy benchmarking for video encode/decode with "
        "cross-calibrated hardware and software power meters.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    p = sub.add_parser("measure", help="run the benchmark grid on real hardware")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", help="override the config's output_dir")

    p = sub.add_parser(
        "simulate", help="synthetic end-to-end run (mock executor, synthetic meters)"
    )
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--seed", type=int, default=0, help="simulation seed (default 0)")
    p.add_argument(
        "--noise", type=float, default=1.0, help="meter noise scale (default 1.0)"
    )

    p = sub.add_parser("ingest", help="fold an external meter CSV log into a dataset")
    p.add_argument("--dataset", required=True, help="existing dataset directory")
    p.add_argument("--csv", required=True, help="meter log (timestamp,power_w)")
    p.add_argument("--meter-id", required=True, help="identifier for the new meter")
    p.add_argument("--scope", choices=("chip", "wall"), default="wall")
    p.add_argument("--kind", choices=("external_hardware", "synthetic"), default="external_hardware")
    p.add_argument("--interval", type=float, default=0.5, help="nominal sample interval (s)")
    p.add_argument("--alpha", type=float, default=0.05, help="reliability confidence bound")
    p.add_argument("--max-gap", type=float, default=None, help="alignment gap tolerance (s)")

    p = sub.add_parser("analyze", help="cross-meter correlations and linear fit")
    p.add_argument("--dataset", "--in", dest="dataset", required=True)
    p.add_argument("--sw", help="chip-scope (software) meter id")
    p.add_argument("--hw", help="wall-scope (hardware) meter id")

    p = sub.add_parser("report", help="scatter CSVs plus a human-readable summary")
    p.add_argument("--dataset", "--in", dest="dataset", required=True)
    p.add_argument("--sw", help="chip-scope (software) meter id")
    p.add_argument("--hw", help="wall-scope (hardware) meter id")

    p = sub.add_parser("idle", help="measure the idle power baseline")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--duration", type=float, help="seconds to sample (default from config)")
    p.add_argument("--out", help="output directory (default from config)")

    return parser


_HANDLERS = {
    "measure": _cmd_measure,
    "simulate": _cmd_simulate,
    "ingest": _cmd_ingest,
    "analyze": _cmd_analyze,
    "report": _cmd_report,
    "idle": _cmd_idle,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, JobExecutionError) as exc:
        print(f"execution error: {exc}", file=sys.stderr)
        return EXIT_EXECUTION
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
