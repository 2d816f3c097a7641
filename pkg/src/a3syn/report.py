"""Run trace persistence and figure rendering.

Traces are JSONL, one record per optimizer iteration plus occasional
event records. Figures summarize convergence the way the optimization
is usually judged: total loss over iterations with stage boundaries,
and the loss components on their own axes.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_COMPONENTS = ("bc", "mvbc", "rp", "penetration", "no_contact")


def write_trace(path, records: list) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def read_trace(path) -> list:
    records = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records


def _iteration_records(records: list) -> list:
    return [r for r in records if "total" in r]


def render_figures(trace, out_dir) -> list[Path]:
    """Write loss_total.png and loss_components.png; returns the paths."""
    records = _iteration_records(trace if isinstance(trace, list) else read_trace(trace))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if not records:
        return paths

    xs = range(len(records))
    totals = [r["total"] for r in records]
    stages = [r.get("stage", 1) for r in records]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(xs, totals, lw=1.2, color="tab:blue")
    for i in range(1, len(records)):
        if stages[i] != stages[i - 1] or (
            records[i].get("round") != records[i - 1].get("round")
        ):
            ax.axvline(i, color="0.75", lw=0.8, ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("total loss")
    if min(totals) > 0:
        ax.set_yscale("log")
    ax.set_title("optimization trace")
    fig.tight_layout()
    total_path = out_dir / "loss_total.png"
    fig.savefig(total_path, dpi=120)
    plt.close(fig)
    paths.append(total_path)

    fig, axes = plt.subplots(
        len(_COMPONENTS), 1, figsize=(7, 2.0 * len(_COMPONENTS)), sharex=True
    )
    for ax, key in zip(axes, _COMPONENTS):
        ax.plot(xs, [r.get(key, 0.0) for r in records], lw=1.0)
        ax.set_ylabel(key)
    axes[-1].set_xlabel("iteration")
    fig.tight_layout()
    comp_path = out_dir / "loss_components.png"
    fig.savefig(comp_path, dpi=120)
    plt.close(fig)
    paths.append(comp_path)
    return paths


def trace_summary(records: list) -> list[dict]:
    """Per stage/round: iteration count and first/last totals."""
    rows = []
    key = None
    for rec in _iteration_records(records):
        k = (rec.get("stage", 1), rec.get("round"))
        if k != key:
            rows.append(
                {
                    "stage": k[0],
                    "round": k[1],
                    "iterations": 0,
                    "first_total": rec["total"],
                    "last_total": rec["total"],
                }
            )
            key = k
        rows[-1]["iterations"] += 1
        rows[-1]["last_total"] = rec["total"]
    return rows


def write_summary_tsv(path, records: list) -> Path:
    path = Path(path)
    rows = trace_summary(records)
    lines = ["stage\tround\titerations\tfirst_total\tlast_total"]
    for row in rows:
        rnd = "" if row["round"] is None else str(row["round"])
        lines.append(
            f"{row['stage']}\t{rnd}\t{row['iterations']}"
            f"\t{row['first_total']:.6g}\t{row['last_total']:.6g}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path
