"""Metrics CSV I/O and the plain-text + SVG run report."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRICS_FILE = "metrics.csv"
CSV_FIELDS = ("epoch", "mode", "metric", "mean", "std")


class ReportError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricRow:
    epoch: int
    mode: str
    metric: str
    mean: float
    std: float


def write_metrics(path, rows) -> None:
    """Rows are (epoch, mode, metric, mean, std); floats use round-trip repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for epoch, mode, metric, mean, std in rows:
            w.writerow([int(epoch), mode, metric, repr(float(mean)), repr(float(std))])


def read_metrics(path) -> list[MetricRow]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"no metrics file at {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ReportError(f"{path}: expected columns {','.join(CSV_FIELDS)}")
        rows = [MetricRow(int(r["epoch"]), r["mode"], r["metric"], float(r["mean"]), float(r["std"]))
                for r in reader]
    if not rows:
        raise ReportError(f"{path} holds no metric rows")
    return rows


def _series(rows: list[MetricRow]) -> dict[str, dict[str, list[MetricRow]]]:
    out: dict[str, dict[str, list[MetricRow]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        out[r.metric][r.mode].append(r)
    for modes in out.values():
        for series in modes.values():
            series.sort(key=lambda r: r.epoch)
    return out


def summary_table(rows: list[MetricRow]) -> str:
    """Final-epoch value of every (mode, metric), pipe-delimited."""
    final: dict[tuple[str, str], MetricRow] = {}
    for r in rows:
        key = (r.mode, r.metric)
        if key not in final or r.epoch >= final[key].epoch:
            final[key] = r
    lines = ["mode | metric | epoch | mean | std"]
    for (mode, metric), r in sorted(final.items()):
        lines.append(f"{mode} | {metric} | {r.epoch} | {r.mean:.6g} | {r.std:.3g}")
    return "\n".join(lines) + "\n"


def plot_curves(rows: list[MetricRow], path) -> None:
    series = _series(rows)
    metrics = sorted(series)
    fig, axes = plt.subplots(len(metrics), 1, figsize=(6, 2.4 * len(metrics)), squeeze=False)
    for ax, metric in zip(axes[:, 0], metrics):
        for mode, pts in sorted(series[metric].items()):
            x = [r.epoch for r in pts]
            ax.errorbar(x, [r.mean for r in pts], yerr=[r.std for r in pts], marker="o", ms=3,
                        capsize=2, label=mode)
        ax.set_ylabel(metric)
        ax.xaxis.get_major_locator().set_params(integer=True)
        ax.legend(fontsize="small")
    axes[-1, 0].set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_kl_bars(rows: list[MetricRow], path) -> bool:
    """Final KL of each model as bars; returns False when there is no KL metric."""
    final: dict[str, MetricRow] = {}
    for r in rows:
        if r.metric == "kl" and (r.mode not in final or r.epoch >= final[r.mode].epoch):
            final[r.mode] = r
    if not final:
        return False
    modes = sorted(final)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar([m.upper() for m in modes], [final[m].mean for m in modes], color=["#4c72b0", "#dd8452"][: len(modes)])
    ax.set_ylabel("KL(data || model)")
    ax.set_title(f"final epoch {max(r.epoch for r in final.values())}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True


def emit_report(run_dir) -> str:
    """Write report.txt, curves.svg and (for KL runs) kl_bars.svg; return the table."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"{run_dir} is not a directory")
    rows = read_metrics(run_dir / METRICS_FILE)
    table = summary_table(rows)
    (run_dir / "report.txt").write_text(table)
    plot_curves(rows, run_dir / "curves.svg")
    plot_kl_bars(rows, run_dir / "kl_bars.svg")
    return table
