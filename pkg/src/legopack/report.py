"""Report serialization: stable-key JSON, sweep CSV, and the sweep figure.

The CSV column set is fixed (`k,b,bits,theoretical_cr,metric,inertia,seconds`)
so sweep outputs from different runs concatenate cleanly. The figure renderer
uses the Agg backend and writes a PNG next to the delimited output: metric vs K
as an orange line, the baseline as a blue dashed rule.

All serialized values are deterministic for a fixed seed except the wall-clock
`seconds` fields, which measure the run that produced them.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .pipeline import CompressionReport, SearchOutcome

SWEEP_COLUMNS = ("k", "b", "bits", "theoretical_cr", "metric", "inertia", "seconds")


def report_to_dict(rep: CompressionReport) -> dict:
    """JSON-shaped view of a report; key names are a documented interface."""
    out = {
        "k": rep.k,
        "b": rep.b,
        "bits_per_index": rep.bits_per_index,
        "theoretical_cr": rep.theoretical_cr,
        "effective_cr": rep.effective_cr,
        "compressed_bits": rep.compressed_bits,
        "codebook_bits": rep.codebook_bits,
        "inertia": rep.inertia,
        "iterations": rep.iterations,
        "block_count": rep.block_count,
        "compressed_params": rep.compressed_params,
        "raw_params": rep.raw_params,
        "skipped_layers": list(rep.skipped_layers),
        "seed": rep.seed,
        "seconds": dict(rep.seconds),
    }
    if rep.metric_kind is not None:
        out["metric_kind"] = rep.metric_kind
        out["baseline_metric"] = rep.baseline_metric
        out["compressed_metric"] = rep.compressed_metric
    return out


def outcome_to_dict(outcome: SearchOutcome) -> dict:
    return {
        "mode": outcome.mode,
        "best_k": outcome.best_k,
        "flag": outcome.flag,
        "metric_kind": outcome.metric_kind,
        "baseline_metric": outcome.baseline_metric,
        "best": report_to_dict(outcome.best_report),
        "reports": [report_to_dict(r) for r in outcome.reports],
    }


def to_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=False)


def _sweep_row(rep: CompressionReport) -> dict:
    metric = "" if rep.compressed_metric is None else repr(rep.compressed_metric)
    return {
        "k": rep.k,
        "b": rep.b,
        "bits": rep.bits_per_index,
        "theoretical_cr": repr(rep.theoretical_cr),
        "metric": metric,
        "inertia": repr(rep.inertia),
        "seconds": f"{rep.seconds.get('total', 0.0):.6f}",
    }


def sweep_csv(reports: tuple[CompressionReport, ...] | list[CompressionReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(_sweep_row(rep))
    return buf.getvalue()


def write_sweep_csv(reports, path) -> Path:
    path = Path(path)
    path.write_text(sweep_csv(reports), encoding="utf-8")
    return path


def default_figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def render_sweep_figure(
    reports,
    fig_path,
    baseline_metric: float | None = None,
    metric_kind: str | None = None,
    title: str | None = None,
) -> Path:
    """Metric-vs-K line plot saved as a PNG; returns the written path."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    ks = [rep.k for rep in reports]
    metrics = [rep.compressed_metric for rep in reports]
    if any(m is None for m in metrics):
        metrics = [float("nan") if m is None else m for m in metrics]

    fig, ax = plt.subplots(figsize=(7, 4.5), dpi=150)
    ax.plot(ks, metrics, color="tab:orange", marker="o", linewidth=1.8, label="compressed")
    if baseline_metric is not None:
        ax.axhline(baseline_metric, color="tab:blue", linestyle="--", linewidth=1.4, label="baseline")
    ax.set_xscale("log", base=2)
    ax.set_xticks(ks)
    ax.get_xaxis().set_major_formatter(matplotlib.ticker.ScalarFormatter())
    ax.set_xlabel("K (codebook size)")
    ax.set_ylabel(metric_kind or "metric")
    b_values = {rep.b for rep in reports}
    ax.set_title(title or f"metric vs K (b={', '.join(str(b) for b in sorted(b_values))})")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig_path = Path(fig_path)
    fig.savefig(fig_path)
    plt.close(fig)
    return fig_path
