"""``clicktree`` command line: simulate, analyze, sweep, oracle-check, report and runs.

Exit codes: 0 on success, 1 on invalid input or configuration, 2 when the oracle check fails.
"""

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from pydantic import ValidationError

from .analytic import g_closed, theta_closed
from .config import PRESETS, RunConfig, load_config
from .estimator import (
    DEFAULT_BOOTSTRAP,
    Estimate,
    EstimateReport,
    Kind,
    aggregate_and_classify,
    analyze,
    render_report,
)
from .exceptions import ClickTreeError, IllegalParameterError, UndefinedEstimatorError
from .models import CountSummary
from .oracle import DEFAULT_ENUMERATION_LIMIT, check_equivalence
from .registry import RunManifest, open_registry, query_runs, read_manifest, record_run, write_manifest
from .simulator import simulate, simulate_stream
from .timetags import (
    DEFAULT_CHUNK_SIZE,
    StreamHeader,
    TimeTagStream,
    calibrate_t0,
    ingest,
    parse_stream,
    save_stream,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ORACLE_FAILURE = 2

SWEEP_AXES = ("lam", "noise-rate", "m", "imbalance")
SWEEP_COLUMNS = (
    "axis",
    "value",
    "theta_model",
    "g_model",
    "theta_sim",
    "theta_sim_sigma",
    "g_sim",
    "g_sim_sigma",
)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from e


def _ints(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from e


def _add_config_arguments(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("source and detector tree")
    group.add_argument("--preset", choices=sorted(PRESETS), help="start from a named configuration")
    group.add_argument("--config", type=Path, help="key = value config file, applied over the preset")
    group.add_argument("--m", type=int, help="number of emitters")
    group.add_argument("--eta", type=float, help="collection efficiency of every emitter")
    group.add_argument("--eta-per-emitter", dest="eta_per_emitter", type=_floats)
    group.add_argument("--lam", type=float, help="mean background photons per pulse")
    group.add_argument("--noise-rate", dest="noise_rate_hz", type=float, help="detected background counts per second")
    group.add_argument("--channels", type=int)
    group.add_argument("--xi", type=_floats, help="detection efficiency, one value or one per channel")
    group.add_argument("--weights", type=_floats, help="routing probability per channel")
    group.add_argument("--pulses", dest="n_pulses", type=int)
    group.add_argument("--seed", type=int)
    group.add_argument("--rep-rate", dest="rep_rate", type=float, help="excitation rate in Hz")
    group.add_argument("--window-ns", dest="window_ns", type=float)
    group.add_argument("--cutoff", type=float, help="photon-number truncation cutoff")
    group.add_argument("--workers", type=int, help="simulation threads")


def _add_estimator_arguments(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("estimator")
    group.add_argument("--method", choices=("auto", "propagation", "bootstrap"), default="auto")
    group.add_argument("--boot", type=int, default=DEFAULT_BOOTSTRAP, help="bootstrap replicates")
    group.add_argument("--boot-seed", type=int, default=0)
    group.add_argument("--k-sigma", type=float, default=3.0)
    group.add_argument("--weighting", choices=("mean", "spread", "inverse-variance"), default="mean")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key in RunConfig.model_fields}
    return load_config(args.config, preset=args.preset, overrides=overrides)


def _write_text(path: Path | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _finish(args: argparse.Namespace, manifest: RunManifest, output: Path | None):
    if output is not None:
        write_manifest(manifest, output)

    if args.registry is not None:
        record_run(open_registry(args.registry), manifest)


def _replay(args: argparse.Namespace, command: str) -> RunManifest:
    previous = read_manifest(args.manifest)
    if previous.command != command:
        raise IllegalParameterError(f"{args.manifest} records a {previous.command} run, not a {command} run")

    for key, value in previous.options.items():
        setattr(args, key, value)

    return previous


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    output: Path | None = args.output
    stream_path: Path | None = args.stream
    binary: bool = args.binary

    if args.manifest is not None:
        previous = _replay(args, "simulate")
        config = RunConfig.model_validate(previous.config)
        output = output or Path(previous.outputs["counts"])
        if stream_path is None and "stream" in previous.outputs:
            stream_path = Path(previous.outputs["stream"])
        binary = binary or args.binary
    else:
        config = _resolve_config(args)

    if output is None:
        raise IllegalParameterError("simulate needs --output")

    simulation = config.to_simulation_config(emit_stream=stream_path is not None)
    counts = simulate(simulation, workers=config.workers)
    output.write_text(counts.model_dump_json(indent=2) + "\n")
    outputs = {"counts": str(output)}

    if stream_path is not None:
        save_stream(simulate_stream(simulation), stream_path, binary=binary)
        outputs["stream"] = str(stream_path)

    logger.info(
        "%d pulses: %d singles, %d pair combinations",
        counts.n_trials,
        sum(counts.singles.values()),
        len(counts.pairs),
    )
    manifest = RunManifest(
        command="simulate",
        config=config.model_dump(mode="json"),
        options={"binary": binary},
        seed=config.seed,
        outputs=outputs,
        duration_s=time.perf_counter() - started,
    )
    _finish(args, manifest, output)
    return EXIT_OK


def _counts_from_stream(data: bytes, args: argparse.Namespace) -> CountSummary:
    stream = parse_stream(data)
    if args.calibrate_t0:
        t0, fraction = calibrate_t0(stream)
        logger.info("calibrated t0 = %d ps, %.1f%% of events inside the window", t0, 100 * fraction)
        header = StreamHeader.model_validate({**stream.header.model_dump(), "t0_ps": t0})
        stream = TimeTagStream(header=header, event_channels=stream.event_channels, timestamps=stream.timestamps)

    return ingest(stream, chunk_size=args.chunk_size)


def cmd_analyze(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    source: Path | None = args.input
    output: Path | None = args.output
    if args.manifest is not None:
        previous = _replay(args, "analyze")
        source = source or Path(previous.inputs["input"])
        if output is None and "report" in previous.outputs:
            output = Path(previous.outputs["report"])

    if source is None:
        raise IllegalParameterError("analyze needs an input file")

    data = source.read_bytes()

    report: EstimateReport
    if data.lstrip().startswith(b"{"):
        payload = json.loads(data)
        if "estimates" in payload:
            estimates = [Estimate.model_validate(item) for item in payload["estimates"]]
            report = aggregate_and_classify(
                estimates, k_sigma=args.k_sigma, weighting=args.weighting, method="precomputed"
            )
        else:
            counts = CountSummary.model_validate(payload)
            report = _analyze_counts(counts, args)
    else:
        report = _analyze_counts(_counts_from_stream(data, args), args)

    sys.stdout.write(render_report(report))
    if output is not None:
        output.write_text(report.model_dump_json(indent=2) + "\n")

    manifest = RunManifest(
        command="analyze",
        options={
            "orders": args.orders,
            "method": args.method,
            "boot": args.boot,
            "boot_seed": args.boot_seed,
            "k_sigma": args.k_sigma,
            "weighting": args.weighting,
            "calibrate_t0": args.calibrate_t0,
            "chunk_size": args.chunk_size,
        },
        seed=args.boot_seed,
        inputs={"input": str(source)},
        outputs={} if output is None else {"report": str(output)},
        duration_s=time.perf_counter() - started,
        classification=report.classification.value,
    )
    _finish(args, manifest, output)
    return EXIT_OK


def _analyze_counts(counts: CountSummary, args: argparse.Namespace) -> EstimateReport:
    return analyze(
        counts,
        orders=args.orders,
        method=args.method,
        n_boot=args.boot,
        seed=args.boot_seed,
        k_sigma=args.k_sigma,
        weighting=args.weighting,
    )


def _sweep_point(config: RunConfig, axis: str, value: float) -> RunConfig:
    values = config.model_dump()
    match axis:
        case "lam":
            values.update(lam=value, noise_rate_hz=None)
        case "noise-rate":
            values.update(lam=0.0, noise_rate_hz=value)
        case "m":
            if value != int(value):
                raise IllegalParameterError(f"emitter number {value} is not an integer")
            values.update(m=int(value), eta_per_emitter=None)
        case "imbalance":
            if config.channels % 2:
                raise IllegalParameterError("an imbalance sweep needs an even number of channels")
            tree = config.tree
            xi = sum(tree.xi) / tree.channels
            values.update(xi=tuple(xi + value if i % 2 == 0 else xi - value for i in range(tree.channels)))
        case unknown:
            raise IllegalParameterError(f"unknown sweep axis {unknown!r}")

    return RunConfig.model_validate(values)


def _pair_model(config: RunConfig) -> tuple[float | None, float | None]:
    """Closed-form θ(2) and g(2) averaged over every channel pair."""
    if config.channels < 2:
        raise IllegalParameterError("pairwise parameters need at least two channels")

    thetas: list[float] = []
    gs: list[float] = []
    for pair in itertools.combinations(range(config.channels), 2):
        for values, function in ((thetas, theta_closed), (gs, g_closed)):
            try:
                values.append(function(2, config.ensemble, config.noise, config.tree, pair, cutoff=config.cutoff))
            except UndefinedEstimatorError as e:
                logger.warning("%s undefined for %s: %s", function.__name__, pair, e)

    return (
        sum(thetas) / len(thetas) if thetas else None,
        sum(gs) / len(gs) if gs else None,
    )


def _cell(value: float | None) -> str:
    return "" if value is None else f"{value:.15g}"


def cmd_sweep(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    output: Path | None = args.output
    if args.manifest is not None:
        previous = _replay(args, "sweep")
        config = RunConfig.model_validate(previous.config)
        output = output or Path(previous.outputs["table"])
    else:
        config = _resolve_config(args)

    if args.axis is None:
        raise IllegalParameterError("sweep needs --axis")
    if output is None:
        raise IllegalParameterError("sweep needs --output")
    if not args.values:
        raise IllegalParameterError("a sweep needs at least one axis value")

    rows: list[list[str]] = []
    for value in args.values:
        point = _sweep_point(config, args.axis, value)
        theta_model, g_model = _pair_model(point)

        counts = simulate(point.to_simulation_config(), workers=point.workers)
        report = analyze(
            counts,
            orders=(2,),
            method=args.method,
            n_boot=args.boot,
            seed=args.boot_seed,
            k_sigma=args.k_sigma,
            weighting=args.weighting,
        )
        theta = report.aggregate(Kind.THETA, 2)
        g = report.aggregate(Kind.G, 2)
        rows.append(
            [
                args.axis,
                _cell(value),
                _cell(theta_model),
                _cell(g_model),
                _cell(theta.mean if theta else None),
                _cell(theta.sigma if theta else None),
                _cell(g.mean if g else None),
                _cell(g.sigma if g else None),
            ]
        )
        logger.info("%s = %g done", args.axis, value)

    with output.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)

    manifest = RunManifest(
        command="sweep",
        config=config.model_dump(mode="json"),
        options={
            "axis": args.axis,
            "values": args.values,
            "method": args.method,
            "boot": args.boot,
            "boot_seed": args.boot_seed,
            "k_sigma": args.k_sigma,
            "weighting": args.weighting,
        },
        seed=config.seed,
        outputs={"table": str(output)},
        duration_s=time.perf_counter() - started,
    )
    _finish(args, manifest, output)
    return EXIT_OK


def cmd_oracle_check(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    report = check_equivalence(
        max_photons=args.max_photons,
        max_channels=args.max_channels,
        trees=args.trees,
        seed=args.seed,
        literal=args.paper_literal,
        limit=args.limit,
    )

    verdict = "pass" if report.passed else "FAIL"
    lines = [
        f"oracle check: {verdict}",
        f"comparisons: {report.comparisons}",
        f"max deviation: {report.max_deviation:.3e} (tolerance {report.tolerance:.0e})",
    ]
    if not report.passed:
        lines.append(f"worst case: {report.worst}")
    sys.stdout.write("\n".join(lines) + "\n")

    if args.output is not None:
        args.output.write_text(report.model_dump_json(indent=2) + "\n")

    manifest = RunManifest(
        command="oracle-check",
        options={
            "max_photons": args.max_photons,
            "max_channels": args.max_channels,
            "trees": args.trees,
            "paper_literal": args.paper_literal,
        },
        seed=args.seed,
        outputs={} if args.output is None else {"report": str(args.output)},
        duration_s=time.perf_counter() - started,
        classification=verdict.lower(),
    )
    _finish(args, manifest, args.output)
    return EXIT_OK if report.passed else EXIT_ORACLE_FAILURE


def cmd_report(args: argparse.Namespace) -> int:
    report = EstimateReport.model_validate_json(args.input.read_text())
    _write_text(args.output, render_report(report))
    return EXIT_OK


def cmd_runs(args: argparse.Namespace) -> int:
    if args.registry is None:
        raise IllegalParameterError("runs needs --registry")

    records = query_runs(open_registry(args.registry), args.query)
    for record in records:
        fields: list[Any] = [
            record.id,
            record.created_at.strftime("%Y-%m-%dT%H:%M:%S"),
            record.command,
            f"seed={record.seed}",
            record.classification or "-",
            record.output or "-",
        ]
        sys.stdout.write("\t".join(str(field) for field in fields) + "\n")

    logger.info("%d runs match", len(records))
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="clicktree", description="Nonclassicality of emitter ensembles seen by detector trees")
    parser.add_argument(
        "--verbosity",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        default="WARNING",
        help="logging level",
    )
    parser.add_argument("--registry", type=Path, help="SQLite run registry to record runs in")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate_parser = commands.add_parser("simulate", help="Monte Carlo click counts")
    _add_config_arguments(simulate_parser)
    simulate_parser.add_argument("-o", "--output", type=Path, help="count summary JSON")
    simulate_parser.add_argument("--stream", type=Path, help="also write a synthetic time-tag stream")
    simulate_parser.add_argument("--binary", action="store_true", help="binary stream format")
    simulate_parser.add_argument("--manifest", type=Path, help="repeat the run recorded in a manifest")
    simulate_parser.set_defaults(handler=cmd_simulate)

    analyze_parser = commands.add_parser("analyze", help="θ and g estimates with classification")
    analyze_parser.add_argument(
        "input", type=Path, nargs="?", help="count summary JSON, precomputed estimates or time-tag stream"
    )
    analyze_parser.add_argument("-o", "--output", type=Path, help="report JSON")
    analyze_parser.add_argument("--orders", type=_ints, default=[2, 3, 4])
    analyze_parser.add_argument("--calibrate-t0", action="store_true", help="align pulse windows to the events")
    analyze_parser.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK_SIZE)
    analyze_parser.add_argument("--manifest", type=Path, help="repeat the analysis recorded in a manifest")
    _add_estimator_arguments(analyze_parser)
    analyze_parser.set_defaults(handler=cmd_analyze)

    sweep_parser = commands.add_parser("sweep", help="model and simulated θ(2), g(2) along one axis")
    _add_config_arguments(sweep_parser)
    _add_estimator_arguments(sweep_parser)
    sweep_parser.add_argument("--axis", choices=SWEEP_AXES)
    sweep_parser.add_argument("--values", type=_floats, help="comma separated axis values")
    sweep_parser.add_argument("-o", "--output", type=Path, help="CSV table")
    sweep_parser.add_argument("--manifest", type=Path, help="repeat the sweep recorded in a manifest")
    sweep_parser.set_defaults(handler=cmd_sweep)

    oracle_parser = commands.add_parser("oracle-check", help="closed forms against exhaustive enumeration")
    oracle_parser.add_argument("--max-photons", type=int, default=6)
    oracle_parser.add_argument("--max-channels", type=int, default=4)
    oracle_parser.add_argument("--trees", type=int, default=50)
    oracle_parser.add_argument("--seed", type=int, default=0)
    oracle_parser.add_argument("--limit", type=int, default=DEFAULT_ENUMERATION_LIMIT)
    oracle_parser.add_argument(
        "--paper-literal",
        action="store_true",
        help="use the full-tree coincidence formula without the photon-number exponent",
    )
    oracle_parser.add_argument("-o", "--output", type=Path)
    oracle_parser.set_defaults(handler=cmd_oracle_check)

    report_parser = commands.add_parser("report", help="render a saved report as text")
    report_parser.add_argument("input", type=Path)
    report_parser.add_argument("-o", "--output", type=Path)
    report_parser.set_defaults(handler=cmd_report)

    runs_parser = commands.add_parser("runs", help="list registered runs matching a query")
    runs_parser.add_argument("query", nargs="?", default="", help="e.g. 'command:simulate AND seed:[1 TO 10]'")
    runs_parser.set_defaults(handler=cmd_runs)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.verbosity, format=LOG_FORMAT)

    try:
        return args.handler(args)
    except (ClickTreeError, ValidationError) as e:
        logger.error("%s", e)
    except (OSError, json.JSONDecodeError) as e:
        logger.error("cannot read or write %s", e)

    return EXIT_INVALID
