"""Figure construction from benchmark CSV files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FigureKind = str

KINDS = ("flux_overlay", "rank_evolution", "eta_bound")

REQUIRED_COLUMNS = {
    "flux_overlay": ("x", "phi"),
    "rank_evolution": ("t", "rank"),
    "eta_bound": ("t", "eta", "reject_bound"),
}


class SchemaError(ValueError):
    """Input CSV does not match the documented schema."""


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple[str, ...]
    kind: FigureKind
    output: str
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}, expected one of {KINDS}")
        if not self.inputs:
            raise SchemaError("at least one input CSV is required")
        if self.labels and len(self.labels) != len(self.inputs):
            raise SchemaError(
                f"got {len(self.labels)} labels for {len(self.inputs)} inputs"
            )

    def resolved_labels(self) -> tuple[str, ...]:
        if self.labels:
            return self.labels
        return tuple(Path(p).stem for p in self.inputs)


def read_table(path: str | Path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Parse a CSV into float arrays, checking the required columns exist."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or ()
        for col in required:
            if col not in names:
                raise SchemaError(f"{path}: missing required column {col!r}")
        rows = list(reader)
    table = {}
    for col in names:
        table[col] = np.array([float(row[col]) for row in rows])
    return table


def _positive_mask_plot(ax, t, values, label, style):
    mask = values > 0
    ax.semilogy(t[mask], values[mask], style, label=label)


def build_figure(spec: FigureSpec):
    """Build the matplotlib figure and return it with the plotted arrays.

    The plotted arrays are returned so determinism tests can compare them
    without decoding the image.
    """
    labels = spec.resolved_labels()
    fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=100)
    plotted: list[tuple[np.ndarray, np.ndarray]] = []

    if spec.kind == "flux_overlay":
        for path, label in zip(spec.inputs, labels):
            table = read_table(path, REQUIRED_COLUMNS["flux_overlay"])
            ax.plot(table["x"], table["phi"], label=label)
            plotted.append((table["x"], table["phi"]))
        ax.set_xlabel("x")
        ax.set_ylabel("scalar flux")
    elif spec.kind == "rank_evolution":
        for path, label in zip(spec.inputs, labels):
            table = read_table(path, REQUIRED_COLUMNS["rank_evolution"])
            if table["t"].size == 1:
                ax.plot(table["t"], table["rank"], "o", label=label)
            else:
                ax.plot(table["t"], table["rank"], drawstyle="steps-post", label=label)
            plotted.append((table["t"], table["rank"]))
        ax.set_xlabel("t")
        ax.set_ylabel("rank")
    else:
        for path, label in zip(spec.inputs, labels):
            table = read_table(path, REQUIRED_COLUMNS["eta_bound"])
            _positive_mask_plot(ax, table["t"], table["eta"], f"{label}: eta", "-")
            _positive_mask_plot(ax, table["t"], table["reject_bound"],
                                f"{label}: c*theta/h", "--")
            plotted.append((table["t"], table["eta"]))
            plotted.append((table["t"], table["reject_bound"]))
        ax.set_xlabel("t")
        ax.set_ylabel("eta and rejection bound")

    ax.legend(loc="best")
    fig.tight_layout()
    return fig, plotted


def render(spec: FigureSpec) -> Path:
    """Render the figure deterministically and write the image file."""
    fig, _ = build_figure(spec)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    # strip the Software tag so identical inputs give identical bytes
    metadata = {"Software": None} if out.suffix.lower() == ".png" else None
    fig.savefig(out, metadata=metadata)
    plt.close(fig)
    return out
