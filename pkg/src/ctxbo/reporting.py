"""Trace CSV, summary text, run manifest, and SVG figure emission.

All numeric output uses 17-significant-digit formatting so files round-trip
float64 losslessly, and figures are rendered with a pinned SVG hash salt and
no embedded date so every artifact except the manifest is bit-reproducible.
"""

from __future__ import annotations

import csv
import datetime
import json
import math
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .objectives import Direction
from .runner import (
    StudySummary,
    SweepResult,
    Trace,
    TraceRecord,
    overall_z,
    risk_area,
)

__all__ = [
    "TRACE_COLUMNS",
    "RunManifest",
    "emit_trace_csv",
    "read_trace_csv",
    "emit_summary",
    "render_plot",
]

TRACE_COLUMNS = [
    "strategy",
    "repeat",
    "iteration",
    "x",
    "y",
    "best_so_far",
    "c_v",
    "mean_posterior_variance",
]

SVG_HASHSALT = "ctxbo"
GREY = "0.75"


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


@dataclass
class RunManifest:
    """Reproduction record: resolved config, tool version, seeds, and
    timestamps.  The manifest is the only output that is not bit-identical
    across re-runs (it carries the wall-clock timestamp)."""

    command: str
    config_text: str
    master_seed: int
    per_repeat_seeds: list[int]
    strategies: list[str]
    tool: str = "ctxbo"
    version: str = __version__
    created_utc: str = field(
        default_factory=lambda: datetime.datetime.now(datetime.timezone.utc).isoformat()
    )

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")


def emit_trace_csv(traces: dict[str, list[Trace]], path) -> None:
    """Write every record of every repeat as one CSV row.

    ``x`` is the semicolon-joined coordinate list; all numbers carry 17
    significant digits and re-parse bit-identically.
    """
    if not traces or not any(traces.values()):
        raise ValueError("no traces to emit")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for strategy, runs in traces.items():
            for repeat, trace in enumerate(runs):
                for record in trace.records:
                    writer.writerow(
                        [
                            strategy,
                            repeat,
                            record.iteration,
                            ";".join(_fmt(v) for v in record.point),
                            _fmt(record.value),
                            _fmt(record.best_so_far),
                            _fmt(record.contextual_variance),
                            _fmt(record.mean_posterior_variance),
                        ]
                    )


def read_trace_csv(path) -> dict[str, list[Trace]]:
    """Rebuild traces from an emitted CSV (seeds are not stored there and
    come back as -1)."""
    out: dict[str, dict[int, Trace]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace CSV header: {header}")
        for row in reader:
            strategy, repeat, iteration, x, y, best, c_v, mpv = row
            trace = out.setdefault(strategy, {}).setdefault(
                int(repeat), Trace(strategy=strategy, seed=-1)
            )
            trace.records.append(
                TraceRecord(
                    iteration=int(iteration),
                    point=np.array([float(v) for v in x.split(";")]),
                    value=float(y),
                    best_so_far=float(best),
                    contextual_variance=float(c_v),
                    mean_posterior_variance=float(mpv),
                    kernel_valid=True,
                )
            )
    return {
        strategy: [runs[i] for i in sorted(runs)] for strategy, runs in out.items()
    }


def _z_table(rows: list[tuple[str, float, float, float]]) -> list[str]:
    lines = [f"{'strategy':<12} {'search':<24} {'delta_ci':<24} {'overall':<24}"]
    for label, search, dci, both in rows:
        lines.append(f"{label:<12} {_fmt(search):<24} {_fmt(dci):<24} {_fmt(both):<24}")
    return lines


def emit_summary(summaries: list[StudySummary], path) -> None:
    """Structured-text study summary: per-strategy mean and delta CI, the
    per-study Z ranking, and the cross-study overall Z table."""
    summaries = list(summaries)
    lines = ["ctxbo study summary", "==================="]
    for summary in summaries:
        total = summary.n_init + summary.budget
        lines += [
            "",
            f"study: {summary.objective_name} ({summary.direction.value})",
            f"samples per run: {total} ({summary.n_init} seed + "
            f"{summary.budget} acquired; 'final' below is sample {total})",
            f"master seed: {summary.master_seed}",
            f"{'strategy':<12} {'mean_final':<24} {'delta_ci':<24} {'repeats':<8}",
        ]
        for s in summary.strategies:
            lines.append(
                f"{s.label:<12} {_fmt(s.final_mean):<24} {_fmt(s.delta_ci):<24} "
                f"{len(s.traces):<8}"
            )
            if s.dropped:
                lines.append(f"  ({s.label}: {s.dropped} repeat(s) dropped)")
        lines.append("z scores:")
        lines += _z_table(
            [
                (s.label, summary.z_search[s.label], summary.z_delta_ci[s.label],
                 summary.z_overall[s.label])
                for s in summary.strategies
            ]
        )
    combined = overall_z(summaries)
    lines += ["", f"overall z across {len(summaries)} studies:"]
    lines += _z_table(
        [
            (label, z["search"], z["delta_ci"], z["overall"])
            for label, z in combined.items()
        ]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _sample_axis(n: int) -> np.ndarray:
    return np.arange(1, n + 1)


def _render_study(summary: StudySummary, ax) -> None:
    for s in summary.strategies:
        x = _sample_axis(s.mean_trace.shape[0])
        (line,) = ax.plot(x, s.mean_trace, label=s.label, gid=f"series-{s.label}")
        ax.fill_between(
            x,
            s.band_low,
            s.band_high,
            alpha=0.2,
            color=line.get_color(),
            gid=f"band-{s.label}",
            linewidth=0,
        )
    ax.set_title(f"{summary.objective_name} ({summary.direction.value})")
    ax.legend()


def _render_sweep(sweep: SweepResult, ax) -> None:
    x = _sample_axis(sweep.adaptive_trace.shape[0])
    for eps, trace in zip(sweep.epsilons, sweep.eps_mean_traces):
        ax.plot(x, trace, color=GREY, linewidth=0.8, gid=f"eps-trace-{eps:g}")
    ax.plot(
        x,
        sweep.adaptive_trace,
        color="black",
        linewidth=1.8,
        gid="adaptive-trace",
        label="adaptive (AEI)",
    )
    ax.set_title(f"{sweep.objective_name} epsilon sweep ({sweep.repeats} repeats)")
    ax.legend()


def render_plot(data: StudySummary | SweepResult, path) -> None:
    """Render a study's mean best-so-far traces with 10/90 bootstrap bands,
    or a sweep's grey fixed-margin traces under the black adaptive trace,
    to a self-contained reproducible SVG."""
    with plt.rc_context({"svg.hashsalt": SVG_HASHSALT}):
        fig, ax = plt.subplots(figsize=(7.0, 4.4))
        try:
            if isinstance(data, SweepResult):
                _render_sweep(data, ax)
            else:
                _render_study(data, ax)
            ax.set_xlabel("samples")
            ax.set_ylabel("best objective value")
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)


def sweep_summary_text(sweep: SweepResult) -> str:
    """Risk-area digest of an epsilon sweep."""
    loss, gain = risk_area(sweep.eps_mean_traces, sweep.adaptive_trace, sweep.direction)
    lines = [
        "ctxbo epsilon sweep summary",
        "===========================",
        f"study: {sweep.objective_name} ({sweep.direction.value})",
        f"epsilon grid: {', '.join(f'{e:g}' for e in sweep.epsilons)}",
        f"repeats per epsilon: {sweep.repeats}",
        f"samples per run: {sweep.n_init + sweep.budget} "
        f"({sweep.n_init} seed + {sweep.budget} acquired)",
        f"master seed: {sweep.master_seed}",
        f"loss area (fixed-margin worse than adaptive): {_fmt(loss)}",
        f"gain area (fixed-margin better than adaptive): {_fmt(gain)}",
        f"{'epsilon':<10} {'mean_final':<24}",
    ]
    for eps, trace in zip(sweep.epsilons, sweep.eps_mean_traces):
        lines.append(f"{eps:<10g} {_fmt(trace[-1]):<24}")
    lines.append(f"{'adaptive':<10} {_fmt(sweep.adaptive_trace[-1]):<24}")
    return "\n".join(lines) + "\n"
