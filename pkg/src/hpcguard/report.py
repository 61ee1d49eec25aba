"""Render a detection run into files: figures plus delimited data.

Output directory contents:
  errors.csv        per-window reconstruction errors, both stages
  correlation.csv   cumulative correlation track against the template
  events.jsonl      the event log, one JSON object per line
  summary.json      final mode, latency report, event counts
  errors.png        error series with threshold lines
  correlation.png   correlation track with the decision bands
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import detector
from .corrmod import ErrorTemplate
from .detector import OnlineResult, PipelineConfig
from .telemetry import Trace


def _write_errors_csv(path: str, result: OnlineResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "stage1_error", "stage2_error"])
        for idx, e1, e2 in result.errors:
            writer.writerow([idx, repr(e1), "" if e2 is None else repr(e2)])


def _write_correlation_csv(path: str, result: OnlineResult) -> None:
    rho = result.final_state.correlation.track.rho
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "rho"])
        for i, value in enumerate(rho):
            writer.writerow([i, repr(value)])


def _write_summary(path: str, trace: Trace, result: OnlineResult) -> None:
    latency = result.latency
    payload = {
        "regime": trace.regime.value,
        "privilege": trace.privilege.value,
        "ticks": len(trace),
        "final_mode": result.final_state.mode.value,
        "events": len(result.events),
        "stage2_evaluations": result.final_state.stage2_evaluations,
        "windows_processed": latency.windows_processed,
        "mean_window_ms": latency.mean_window_ms,
        "budget_ms": latency.budget_ms,
        "within_budget": latency.within_budget,
        "first_anomaly_window": latency.first_anomaly_window,
        "detection_latency_ms": latency.detection_latency_ms,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _plot_errors(path: str, result: OnlineResult, config: PipelineConfig) -> None:
    idx = [row[0] for row in result.errors]
    e1 = [row[1] for row in result.errors]
    s2 = [(row[0], row[2]) for row in result.errors if row[2] is not None]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    ax1.plot(idx, e1, lw=0.7, color="tab:blue", label="stage 1 error")
    ax1.axhline(
        config.calibration_1.threshold, color="tab:red", lw=1.0, ls="--",
        label="threshold",
    )
    ax1.set_ylabel("reconstruction error")
    ax1.legend(loc="upper left", fontsize=8)
    ax1.set_title("stage 1: time-domain autoencoder")

    if s2:
        ax2.plot(
            [p[0] for p in s2], [p[1] for p in s2],
            lw=0.0, marker=".", ms=2.5, color="tab:purple", label="stage 2 error",
        )
    ax2.axhline(
        config.calibration_2.threshold, color="tab:red", lw=1.0, ls="--",
        label="threshold",
    )
    ax2.set_xlabel("window index")
    ax2.set_ylabel("reconstruction error")
    ax2.legend(loc="upper left", fontsize=8)
    ax2.set_title("stage 2: spectrum autoencoder (only evaluated on stage-1 alarms)")

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _plot_correlation(
    path: str, result: OnlineResult, template: ErrorTemplate, config: PipelineConfig
) -> None:
    rho = result.final_state.correlation.track.rho
    fig, ax = plt.subplots(figsize=(10, 3.2))
    if rho:
        ax.plot(range(len(rho)), rho, lw=0.8, color="tab:green")
    ax.axhline(config.policy.rho_high, color="tab:orange", lw=1.0, ls="--")
    ax.axhline(config.policy.rho_low, color="tab:red", lw=1.0, ls="--")
    ax.set_ylim(-1.05, 1.05)
    ax.set_xlabel("observation index")
    ax.set_ylabel("cumulative rho")
    ax.set_title(f"correlation against template {template.label!r}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_report(
    out_dir: str,
    trace: Trace,
    result: OnlineResult,
    template: ErrorTemplate,
    config: PipelineConfig,
) -> list[str]:
    """Write every report artifact into out_dir; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "errors_csv": os.path.join(out_dir, "errors.csv"),
        "correlation_csv": os.path.join(out_dir, "correlation.csv"),
        "events": os.path.join(out_dir, "events.jsonl"),
        "summary": os.path.join(out_dir, "summary.json"),
        "errors_png": os.path.join(out_dir, "errors.png"),
        "correlation_png": os.path.join(out_dir, "correlation.png"),
    }
    _write_errors_csv(paths["errors_csv"], result)
    _write_correlation_csv(paths["correlation_csv"], result)
    detector.save_event_log(paths["events"], result.events)
    _write_summary(paths["summary"], trace, result)
    _plot_errors(paths["errors_png"], result, config)
    _plot_correlation(paths["correlation_png"], result, template, config)
    return [
        paths["errors_csv"],
        paths["correlation_csv"],
        paths["events"],
        paths["summary"],
        paths["errors_png"],
        paths["correlation_png"],
    ]
