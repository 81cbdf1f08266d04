"""Aggregate per-seed reports into result tables, CSV/JSON and figures."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .metrics import delta_percent, format_delta
from .pipeline import ROWS

METRICS = ("ba", "f1", "auroc")
METRIC_LABELS = {"ba": "BA", "f1": "F1", "auroc": "AUROC"}


def load_reports(run_dir) -> list[dict]:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise DataError(f"{run_dir}: not a run directory")
    reports = [json.loads(p.read_text()) for p in sorted(run_dir.glob("seed_*/report.json"))]
    if not reports:
        raise DataError(f"{run_dir}: no report.json files found")
    return sorted(reports, key=lambda r: r["seed"])


def collect_values(reports: list[dict]) -> dict:
    """``{task: {row: {metric: [value per seed]}}}`` from per-seed reports."""
    values: dict = {}
    for rep in reports:
        for task in rep.get("task_order") or rep["tasks"]:
            for row, metrics in rep["tasks"][task]["rows"].items():
                slot = values.setdefault(task, {}).setdefault(row, {})
                for m in METRICS:
                    if m in metrics:
                        slot.setdefault(m, []).append(float(metrics[m]))
    return values


def aggregate(values: dict, seeds=None) -> dict:
    """Mean/std per cell and the delta row (guided vs inferior, on the means)."""
    summary, delta = {}, {}
    for task, rows in values.items():
        summary[task] = {}
        for row, metrics in rows.items():
            summary[task][row] = {m: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
                                  for m, v in metrics.items()}
        base, new = summary[task].get("I"), summary[task].get("G(I)+I")
        if base and new:
            delta[task] = {m: (delta_percent(new[m]["mean"], base[m]["mean"])
                               if m in new and base[m]["mean"] > 0 else None)
                           for m in base}
    return {"tasks": list(values), "rows": [r for r in ROWS],
            "seeds": list(seeds) if seeds is not None else None,
            "values": values, "summary": summary, "delta_pct": delta}


def aggregate_reports(reports: list[dict]) -> dict:
    return aggregate(collect_values(reports), [r["seed"] for r in reports])


def _task_metrics(agg: dict, task: str) -> list[str]:
    present = set()
    for row in agg["summary"][task].values():
        present.update(row)
    return [m for m in METRICS if m in present]


def _cell(stats: dict | None) -> str:
    if stats is None:
        return "-"
    if stats["n"] > 1:
        return f"{stats['mean']:.3f} ± {stats['std']:.3f}"
    return f"{stats['mean']:.3f}"


def render_table(agg: dict) -> str:
    """Plain-text table: five method rows plus the delta row, per-task metric columns."""
    header1, header2 = ["", "Method"], ["", ""]
    columns = []
    for task in agg["tasks"]:
        ms = _task_metrics(agg, task)
        for i, m in enumerate(ms):
            header1.append(task if i == 0 else "")
            header2.append(METRIC_LABELS[m])
            columns.append((task, m))
    body = []
    for i, row in enumerate(ROWS, start=1):
        line = [f"{i}.", row]
        for task, m in columns:
            line.append(_cell(agg["summary"][task].get(row, {}).get(m)))
        body.append(line)
    line = [f"{len(ROWS) + 1}.", "Δ (%)"]
    for task, m in columns:
        d = agg["delta_pct"].get(task, {}).get(m)
        line.append(format_delta(d) if d is not None else "-")
    body.append(line)
    table = [header1, header2] + body
    widths = [max(len(r[c]) for r in table) for c in range(len(header1))]
    fmt = lambda r: "  ".join(s.ljust(w) if c < 2 else s.rjust(w) for c, (s, w) in enumerate(zip(r, widths)))
    rule = "-" * len(fmt(header1))
    return "\n".join([fmt(header1), fmt(header2), rule, *(fmt(r) for r in body[:-1]), rule, fmt(body[-1])])


def to_json(agg: dict) -> str:
    return json.dumps(agg, indent=1, sort_keys=True)


def to_csv(agg: dict) -> str:
    """Long format, one line per (task, method, metric, seed) with exact float reprs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "method", "metric", "seed", "value"])
    seeds = agg.get("seeds")
    for task, rows in agg["values"].items():
        for row, metrics in rows.items():
            for m, vals in metrics.items():
                for k, v in enumerate(vals):
                    w.writerow([task, row, m, seeds[k] if seeds else k, repr(float(v))])
    return buf.getvalue()


def from_csv(text: str) -> dict:
    values: dict = {}
    seeds: list = []
    for rec in csv.DictReader(io.StringIO(text)):
        values.setdefault(rec["task"], {}).setdefault(rec["method"], {}) \
              .setdefault(rec["metric"], []).append(float(rec["value"]))
        s = int(rec["seed"])
        if s not in seeds:
            seeds.append(s)
    return aggregate(values, seeds)


def plot_report(agg: dict, out_dir) -> list[Path]:
    """Write ``delta_pct.png`` and ``ba_by_method.png`` into ``out_dir``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = agg["tasks"]
    x = np.arange(len(tasks))
    written = []

    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(tasks) + 2), 3.2))
    for k, m in enumerate(("ba", "f1")):
        vals = [agg["delta_pct"].get(t, {}).get(m) or 0.0 for t in tasks]
        ax.bar(x + (k - 0.5) * 0.38, vals, width=0.38, label=METRIC_LABELS[m])
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(tasks, rotation=30 if len(tasks) > 4 else 0)
    ax.set_ylabel("Δ (%) of G(I)+I over I")
    ax.legend(frameon=False)
    fig.tight_layout()
    written.append(out_dir / "delta_pct.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(max(4.0, 1.4 * len(tasks) + 2), 3.2))
    width = 0.8 / len(ROWS)
    for k, row in enumerate(ROWS):
        means = [agg["summary"][t].get(row, {}).get("ba", {}).get("mean", np.nan) for t in tasks]
        stds = [agg["summary"][t].get(row, {}).get("ba", {}).get("std", 0.0) for t in tasks]
        ax.bar(x + (k - (len(ROWS) - 1) / 2) * width, means, width=width, yerr=stds, label=row, capsize=2)
    ax.set_xticks(x)
    ax.set_xticklabels(tasks, rotation=30 if len(tasks) > 4 else 0)
    ax.set_ylabel("balanced accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(frameon=False, ncol=len(ROWS), fontsize=7, loc="upper center", bbox_to_anchor=(0.5, 1.18))
    fig.tight_layout()
    written.append(out_dir / "ba_by_method.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)
    return written
