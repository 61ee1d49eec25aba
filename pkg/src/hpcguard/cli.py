"""Command-line entry points.

Subcommands cover the whole workflow: synthesize traces, train and persist
a pipeline, replay a trace through the online detector, run the backup
recovery simulation, serve the HTTP interface, and render a report.

detect's exit code is a total function of the detector's final mode:
0 for anything benign or unresolved, 2 for a ransomware verdict, 3 when
suspended awaiting human adjudication.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import detector, manifest, recoverysim, telemetry
from .detector import Mode
from .telemetry import Regime

EXIT_CLEAN = 0
EXIT_RANSOMWARE = 2
EXIT_AWAITING_ADJUDICATION = 3


class CliError(Exception):
    pass


def exit_code_for_mode(mode: Mode) -> int:
    """Map the final detector mode to the process exit code."""
    if mode is Mode.TERMINATED_RANSOMWARE:
        return EXIT_RANSOMWARE
    if mode is Mode.AWAITING_ADJUDICATION:
        return EXIT_AWAITING_ADJUDICATION
    return EXIT_CLEAN


def parse_config_file(path: str) -> dict[str, str]:
    """key=value lines; blank lines and #-comments ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _as_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise CliError(f"config key {key}: expected a boolean, got {raw!r}")


def apply_train_config(
    settings: manifest.TrainSettings, values: dict[str, str]
) -> manifest.TrainSettings:
    """Overlay config-file values onto training settings."""
    for key, raw in values.items():
        if not hasattr(settings, key):
            raise CliError(f"unknown training config key {key!r}")
        current = getattr(settings, key)
        if isinstance(current, bool):
            setattr(settings, key, _as_bool(key, raw))
        elif isinstance(current, int):
            setattr(settings, key, int(raw))
        elif isinstance(current, float):
            setattr(settings, key, float(raw))
        else:
            raise CliError(f"config key {key!r} is not a scalar setting")
    return settings


def _regime(name: str) -> Regime:
    for regime in Regime:
        if regime.value.lower() == name.lower():
            return regime
    raise CliError(
        f"unknown profile {name!r}; expected one of "
        + ", ".join(r.value for r in Regime if r is not Regime.UNKNOWN)
    )


def cmd_gen_trace(args: argparse.Namespace) -> int:
    trace = telemetry.generate_trace(_regime(args.profile), args.ticks, args.seed)
    telemetry.save_trace(args.out, trace)
    print(f"wrote {len(trace)} samples to {args.out}")
    return EXIT_CLEAN


def cmd_train(args: argparse.Namespace) -> int:
    settings = manifest.TrainSettings()
    if args.config:
        settings = apply_train_config(settings, parse_config_file(args.config))
    if args.seed is not None:
        settings.seed = args.seed

    if args.baseline_trace:
        baselines = [telemetry.load_trace(p) for p in args.baseline_trace]
        if not args.disk_trace:
            raise manifest.MissingDiskTrace(
                "a disk-encryption trace is required for the template"
            )
        disk = telemetry.load_trace(args.disk_trace)
    else:
        baselines, disk = manifest.default_training_traces()
        if args.disk_trace:
            disk = telemetry.load_trace(args.disk_trace)

    trained = manifest.train_pipeline(baselines, disk, settings)
    path = manifest.save_pipeline(args.out_dir, trained)
    print(f"manifest: {path}")
    print(
        f"stage-1 threshold {trained.config.calibration_1.threshold:.6g} "
        f"({trained.train_frac_below_1:.2%} of training windows below)"
    )
    print(
        f"stage-2 threshold {trained.config.calibration_2.threshold:.6g} "
        f"({trained.train_frac_below_2:.2%} of training windows below)"
    )
    return EXIT_CLEAN


def _load_or_generate_trace(args: argparse.Namespace) -> telemetry.Trace:
    if args.trace:
        return telemetry.load_trace(args.trace)
    if args.profile:
        return telemetry.generate_trace(_regime(args.profile), args.ticks, args.seed)
    raise CliError("provide --trace FILE or --profile NAME")


def cmd_detect(args: argparse.Namespace) -> int:
    models, templates, config, _ = manifest.load_pipeline(args.manifest)
    trace = _load_or_generate_trace(args)
    result = detector.run_online(trace, models, templates, config)

    if args.events_out:
        detector.save_event_log(args.events_out, result.events)
        out = sys.stdout
    else:
        for event in result.events:
            print(detector.event_to_json(event))
        out = sys.stderr

    latency = result.latency
    print(f"windows processed: {latency.windows_processed}", file=out)
    print(
        f"mean per-window analysis: {latency.mean_window_ms:.4f} ms "
        f"(budget {latency.budget_ms:.1f} ms, "
        f"{'within' if latency.within_budget else 'OVER'})",
        file=out,
    )
    if latency.detection_latency_ms is not None:
        print(
            f"first anomaly at window {latency.first_anomaly_window}, "
            f"modeled detection latency {latency.detection_latency_ms:.4f} ms",
            file=out,
        )
    print(f"final mode: {result.final_state.mode.value}", file=out)
    return exit_code_for_mode(result.final_state.mode)


def cmd_simulate_attack(args: argparse.Namespace) -> int:
    if args.scenario:
        rows = recoverysim.parse_scenario(open(args.scenario, encoding="utf-8").read())
        result = recoverysim.run_scenario(
            rows, capacity_n=args.capacity, quantum_ticks=args.quantum
        )
        report = result.report
        print(f"scenario: {args.scenario}")
        print(f"files touched: {len(result.files)}")
        print(f"verdict tick: {result.alarm_tick}")
    else:
        ledger = recoverysim.BackupLedger(
            capacity_n=args.capacity, quantum_ticks=args.quantum
        )
        files = [recoverysim.SimFile.new(f"file-{i:05d}") for i in range(args.files)]
        encrypted = recoverysim.simulate_attack(
            ledger, files, args.rate, args.latency_ms
        )
        report = recoverysim.recover(ledger, files)
        print(f"files: {args.files}, rate: {args.rate}/s, latency: {args.latency_ms} ms")
        print(f"encrypted before the verdict: {len(encrypted)}")
    print(f"recovered: {len(report.recovered)}")
    print(f"lost: {len(report.lost)}")
    for file_id in report.lost:
        print(f"  lost {file_id}")
    return EXIT_CLEAN


def cmd_serve(args: argparse.Namespace) -> int:
    from . import service

    models, templates, config, run = manifest.load_pipeline(args.manifest)
    recovery = service.RecoverySettings() if args.recovery_sim else None
    server = service.DetectorService(
        models=models,
        templates=templates,
        config=config,
        scaler=run.scaler,
        host=args.host,
        port=args.port,
        recovery=recovery,
    )
    print(f"serving on http://{server.host}:{server.port}/", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_CLEAN


def cmd_report(args: argparse.Namespace) -> int:
    from . import report

    models, templates, config, _ = manifest.load_pipeline(args.manifest)
    trace = _load_or_generate_trace(args)
    result = detector.run_online(trace, models, templates, config)
    paths = report.render_report(args.out_dir, trace, result, templates[0], config)
    for path in paths:
        print(path)
    return exit_code_for_mode(result.final_state.mode)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpcguard",
        description="Two-stage streaming anomaly detection over counter telemetry.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="synthesize a seeded workload trace")
    p.add_argument("--profile", required=True, help="Baseline, RepeatedEncryption, HighCompute, DiskEncryption")
    p.add_argument("--ticks", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("train", help="train models, calibrate thresholds, write a manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key=value training settings file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--baseline-trace", action="append", default=[],
                   help="baseline trace file; may repeat (default: synthesized corpus)")
    p.add_argument("--disk-trace", help="disk-encryption trace for the template")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="replay a trace through the online detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--trace", help="trace file to replay")
    p.add_argument("--profile", help="synthesize instead of loading a file")
    p.add_argument("--ticks", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--events-out", help="write the event log here instead of stdout")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate-attack", help="backup ledger recovery simulation")
    p.add_argument("--scenario", help="CSV of tick,action,file_id rows")
    p.add_argument("--capacity", type=int, default=4)
    p.add_argument("--quantum", type=int, default=recoverysim.DEFAULT_QUANTUM_TICKS)
    p.add_argument("--files", type=int, default=10000)
    p.add_argument("--rate", type=float, default=12.79874650582457,
                   help="encryption rate in files per second")
    p.add_argument("--latency-ms", type=float,
                   default=recoverysim.DEFAULT_DETECTION_LATENCY_MS)
    p.set_defaults(func=cmd_simulate_attack)

    p = sub.add_parser("serve", help="HTTP interface for the dashboard")
    p.add_argument("--manifest", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--recovery-sim", action="store_true",
                   help="run the backup recovery simulation after a verdict")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="render figures and delimited series for a run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--trace", help="trace file to replay")
    p.add_argument("--profile", help="synthesize instead of loading a file")
    p.add_argument("--ticks", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        CliError,
        manifest.ManifestError,
        telemetry.TelemetryError,
        detector.DetectorError,
        recoverysim.SimError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
