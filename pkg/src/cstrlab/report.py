"""Aggregate ablation cells into markdown, CSV, and bar-chart figures.

Every rendered table carries two accuracy columns: "this run (toy
scale)" with mean and stddev across seeds, and "reference (full scale)"
with the published full-scale numbers embedded as static fixtures for
qualitative comparison only. Toy runs are never asserted to match them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ablate import read_results
from .errors import DataError

# Full-scale reference accuracies (percent), shown beside toy results.
REFERENCE_ACCURACY = {
    "heads": {
        "SHPN CTC": 83.8, "SHPN CE": 83.6,
        "SEPN CTC": 83.2, "SEPN CE": 83.2,
        "SPPN CTC": 82.4, "SPPN CE": 84.1,
    },
    "backbone": {"Base": 84.1, "Base+EM": 87.2, "Base+EM+SADM": 87.3},
    "augment": {"Base": 87.3, "Base+DA": 89.0},
}

TABLE_TITLES = {
    "heads": "Prediction head and objective",
    "backbone": "Backbone variants",
    "augment": "Training-time augmentation (noisy eval)",
}

THIS_RUN = "this run (toy scale)"
REFERENCE = "reference (full scale)"


@dataclass
class CellSummary:
    table: str
    label: str
    n_seeds: int
    mean_acc: float  # percent
    std_acc: float  # percent, population stddev across seeds
    reference_acc: Optional[float]


def aggregate(rows: Sequence[dict]) -> list[CellSummary]:
    """Group per-seed cell rows by (table, label) and average them."""
    groups: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        try:
            key = (row["table"], row["label"])
            acc = float(row["word_acc"]) * 100.0
        except (KeyError, ValueError) as e:
            raise DataError(f"malformed cell row {row!r}: {e}") from e
        groups.setdefault(key, []).append(acc)

    def order(key: tuple[str, str]):
        table, label = key
        ref = REFERENCE_ACCURACY.get(table, {})
        pos = list(ref).index(label) if label in ref else len(ref)
        return (table, pos, label)

    out = []
    for key in sorted(groups, key=order):
        table, label = key
        accs = np.asarray(groups[key], dtype=np.float64)
        out.append(CellSummary(
            table=table, label=label, n_seeds=accs.size,
            mean_acc=float(accs.mean()), std_acc=float(accs.std()),
            reference_acc=REFERENCE_ACCURACY.get(table, {}).get(label),
        ))
    return out


def _fmt_ref(v: Optional[float]) -> str:
    return f"{v:.1f}" if v is not None else "-"


def _write_table_csv(path: Path, cells: Sequence[CellSummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["table", "label", "n_seeds", "mean_acc", "std_acc",
                         "reference_acc"])
        for c in cells:
            writer.writerow([c.table, c.label, c.n_seeds,
                             f"{c.mean_acc:.2f}", f"{c.std_acc:.2f}",
                             _fmt_ref(c.reference_acc)])


def _render_figure(path: Path, cells: Sequence[CellSummary]) -> None:
    from . import figstyle

    fig, ax = figstyle.new_figure(len(cells))
    xs = np.arange(len(cells))
    ax.bar(xs - 0.2, [c.mean_acc for c in cells], width=0.4,
           yerr=[c.std_acc for c in cells], capsize=3,
           color=figstyle.COLOR_THIS_RUN, label=THIS_RUN)
    refs = [c.reference_acc for c in cells]
    if any(r is not None for r in refs):
        ax.bar(xs + 0.2, [r if r is not None else 0.0 for r in refs],
               width=0.4, color=figstyle.COLOR_REFERENCE, label=REFERENCE)
    ax.set_xticks(xs)
    ax.set_xticklabels([c.label for c in cells], rotation=20, ha="right")
    ax.set_title(TABLE_TITLES.get(cells[0].table, cells[0].table))
    ax.legend(fontsize=8)
    figstyle.save_figure(fig, path)


def build_report(results_dir, out_dir) -> dict:
    """Render the store into report.md plus per-table CSVs and PNGs."""
    rows = read_results(results_dir)
    if not rows:
        raise DataError(f"no completed cells in {results_dir}")
    summaries = aggregate(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tables: dict[str, list[CellSummary]] = {}
    for c in summaries:
        tables.setdefault(c.table, []).append(c)

    lines = ["# Ablation report", "",
             f"Aggregated from {len(rows)} completed cell runs. Accuracy "
             f"columns: '{THIS_RUN}' is the mean over seeds of this "
             f"repository's runs; '{REFERENCE}' lists published full-scale "
             "results for qualitative comparison only.", ""]
    paths: dict[str, list[Path]] = {"csv": [], "png": []}
    for table, cells in tables.items():
        csv_path = out / f"table_{table}.csv"
        fig_path = out / f"fig_{table}.png"
        _write_table_csv(csv_path, cells)
        _render_figure(fig_path, cells)
        paths["csv"].append(csv_path)
        paths["png"].append(fig_path)
        lines.append(f"## {TABLE_TITLES.get(table, table)}")
        lines.append("")
        lines.append(f"| row | {THIS_RUN} [%] | seeds | {REFERENCE} [%] |")
        lines.append("| --- | --- | --- | --- |")
        for c in cells:
            lines.append(
                f"| {c.label} | {c.mean_acc:.2f} +/- {c.std_acc:.2f} "
                f"| {c.n_seeds} | {_fmt_ref(c.reference_acc)} |")
        lines.append("")
        lines.append(f"![{table}]({fig_path.name})")
        lines.append("")

    md_path = out / "report.md"
    md_path.write_text("\n".join(lines), encoding="utf-8")
    paths["markdown"] = [md_path]
    return paths
