"""Figure rendering for CLI tables (headless, Agg backend)."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (5.5, 3.6),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "legend.fontsize": 8,
    "lines.linewidth": 1.4,
    "lines.markersize": 3.5,
    # keep output byte-stable across runs
    "svg.hashsalt": "longrange-mf",
}


@contextmanager
def style():
    with matplotlib.rc_context(_STYLE):
        yield


def write_dat(path, columns: Sequence[str], rows: Sequence[Sequence], header: str = "") -> None:
    """Whitespace-delimited data file with '#' comment header lines."""
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def line_plot(path, x: np.ndarray, series: Mapping[str, np.ndarray], xlabel: str, ylabel: str,
              title: str = "", logy: bool = False) -> Path:
    path = Path(path)
    with style():
        fig, ax = plt.subplots()
        for label, y in series.items():
            ax.plot(x, y, marker="o", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if logy:
            ax.set_yscale("log")
        if len(series) > 1:
            ax.legend()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
