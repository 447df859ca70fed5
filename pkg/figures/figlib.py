"""Shared loading, validation, and figure builders for the plot scripts.

This package is a pure view of the experiment harness's CSV outputs: it
never recomputes statistics. Column schemas are validated up front so that
a mismatched input fails with the offending column names.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "felab-figures"

SUMMARY_COLUMNS = ["n", "reps", "mean_F", "se_F", "L0_times_n", "theory_minus_nL0", "residual"]
THEORY_COLUMNS = ["n", "theory_F_minus_nL0", "theory_G"]

IMAGE_FORMATS = ("svg", "png")


class SchemaError(ValueError):
    """A CSV is missing required columns; names are carried for reporting."""

    def __init__(self, path, missing):
        self.missing = sorted(missing)
        super().__init__(f"{path}: missing required columns {self.missing}")


def _load_columns(path, required) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = set(required) - set(fields)
        if missing:
            raise SchemaError(path, missing)
        records = list(reader)
    out = {}
    for col in required:
        out[col] = np.array([float(rec[col]) for rec in records])
    return out


def load_summary(path) -> dict[str, np.ndarray]:
    data = _load_columns(path, SUMMARY_COLUMNS)
    if data["n"].size == 0:
        raise ValueError(f"{path}: summary CSV has no rows")
    return data


def load_theory(path) -> dict[str, np.ndarray]:
    """Theory curve; an empty table (headers only or no file content rows)
    is allowed and triggers the points-only degraded mode."""
    return _load_columns(path, THEORY_COLUMNS)


def build_free_energy_figure(summary, theory=None):
    """Figure-1 analogue: experimental mean free energy with the theory curve.

    Both series have n L0 subtracted. Returns (figure, meta) where meta
    records the plotted point count, whether the theory overlay was drawn,
    and the theory values for monotonicity checks.
    """
    n = summary["n"]
    y = summary["mean_F"] - summary["L0_times_n"]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(
        n, y, yerr=summary["se_F"], fmt="o", capsize=3, color="tab:blue",
        label="experiment (mean over replications)",
    )
    meta = {"n_points": int(n.size), "theory_drawn": False, "theory_values": None}
    if theory is not None and theory["n"].size > 0:
        order = np.argsort(theory["n"])
        tn, tv = theory["n"][order], theory["theory_F_minus_nL0"][order]
        ax.plot(tn, tv, "-", color="tab:orange", label="theory (O(1) term omitted)")
        meta.update(theory_drawn=True, theory_values=tv)
    ax.set_xlabel("sample size n")
    ax.set_ylabel("free energy minus n L0 [nats]")
    ax.set_title("Free energy vs sample size")
    ax.legend()
    fig.tight_layout()
    return fig, meta


def build_residual_figure(summary):
    """Figure-2 analogue: experiment minus theory with a zero reference."""
    n = summary["n"]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(
        n, summary["residual"], yerr=summary["se_F"], fmt="o", capsize=3,
        color="tab:blue", label="experiment - theory",
    )
    ax.axhline(0.0, color="gray", linewidth=1.0, linestyle="--")
    ax.set_xlabel("sample size n")
    ax.set_ylabel("residual [nats]")
    ax.set_title("Residual against the predicted expansion")
    ax.legend()
    fig.tight_layout()
    return fig, {"n_points": int(n.size)}


def save_figure(fig, out_dir, stem, image_format) -> Path:
    if image_format not in IMAGE_FORMATS:
        raise ValueError(f"unsupported format {image_format!r}; use one of {IMAGE_FORMATS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.{image_format}"
    metadata = {"Date": None} if image_format == "svg" else None
    fig.savefig(path, format=image_format, metadata=metadata)
    plt.close(fig)
    return path
