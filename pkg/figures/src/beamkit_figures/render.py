"""Regenerate the result figures from sweep CSV outputs.

The renderer consumes only the aggregated CSV schema written by the sweep
runner (columns ``sweep_value,method`` plus ``_mean``/``_stderr`` pairs) and
never recomputes anything; it deliberately does not import the numeric core.
"""

from __future__ import annotations

import csv
import glob
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

KINDS = ("convergence", "beampattern", "snr", "gamma", "rfc")

EE_LABEL = "Energy efficiency (bits/Hz/J)"
AXIS_LABELS = {
    "snr": ("SNR (dB)", EE_LABEL),
    "gamma": ("Beampattern gain threshold (dB)", EE_LABEL),
    "rfc": ("Number of RF chains", EE_LABEL),
    "convergence": ("Outer iteration", EE_LABEL),
    "beampattern": ("Angle (deg)", "Beampattern gain (dB)"),
}

DEFAULT_STYLE = {
    "proposed": {"fmt": "-o", "label": "Proposed HBF"},
    "omp": {"fmt": "--s", "label": "OMP-based HBF"},
    "fdb": {"fmt": ":^", "label": "Fully-digital"},
    "comm_only": {"fmt": "-.d", "label": "Communication only"},
}


class SchemaError(RuntimeError):
    """Input CSV does not satisfy the sweep schema."""


@dataclass
class FigureSpec:
    input_csv: str
    kind: str
    output: str
    style: dict = field(default_factory=lambda: DEFAULT_STYLE)
    overlays: list = field(default_factory=list)  # extra CSVs (beampattern)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")


def _required_columns(kind):
    cols = ["sweep_value", "method"]
    if kind == "beampattern":
        cols += ["min_target_gain_db_mean", "min_target_gain_db_stderr"]
    else:
        cols += ["ee_bits_per_hz_joule_mean", "ee_bits_per_hz_joule_stderr"]
    if kind == "convergence":
        cols += ["outer_iters_mean"]
    return cols


def load_rows(path, kind):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in _required_columns(kind):
            if col not in header:
                raise SchemaError(f"{os.path.basename(path)}: missing column {col}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{os.path.basename(path)}: no data rows")
    return rows


def _series_label(method, style, suffix=""):
    base = style.get(method, {}).get("label", method)
    return f"{base}{suffix}"


def render(spec: FigureSpec) -> dict:
    """Draw one figure; returns metadata about what was drawn.

    The metadata dict carries the axis labels, legend entries and series
    count so callers (and snapshot tests) can assert on the plot contents
    without decoding the image.
    """
    sources = [(spec.input_csv, "")]
    for extra in spec.overlays:
        tag = os.path.basename(extra)
        tag = tag.replace("_agg.csv", "").replace(".csv", "")
        tag = tag.replace("beampattern", "").strip("_")
        sources.append((extra, f" [{tag}]" if tag else " [overlay]"))

    fig, ax = plt.subplots(figsize=(5.2, 3.9))
    n_series = 0
    legend_entries = []
    ycol, ecol = ("min_target_gain_db_mean", "min_target_gain_db_stderr") \
        if spec.kind == "beampattern" else \
        ("ee_bits_per_hz_joule_mean", "ee_bits_per_hz_joule_stderr")

    for path, suffix in sources:
        rows = load_rows(path, spec.kind)
        methods = sorted({r["method"] for r in rows})
        for method in methods:
            sub = [r for r in rows if r["method"] == method]
            if spec.kind == "convergence":
                # one curve per swept chain count, x is the iteration index
                values = sorted({float(r["sweep_value"]) for r in sub})
                for val in values:
                    pts = sorted((float(r["outer_iters_mean"]), float(r[ycol]),
                                  float(r[ecol]))
                                 for r in sub if float(r["sweep_value"]) == val)
                    label = _series_label(method, spec.style,
                                          f"{suffix}, M_t={int(val)}")
                    ax.errorbar([p[0] for p in pts], [p[1] for p in pts],
                                yerr=[p[2] for p in pts],
                                fmt=spec.style.get(method, {}).get("fmt", "-o"),
                                capsize=2, markersize=3, label=label)
                    legend_entries.append(label)
                    n_series += 1
            else:
                pts = sorted((float(r["sweep_value"]), float(r[ycol]),
                              float(r[ecol])) for r in sub)
                label = _series_label(method, spec.style, suffix)
                ax.errorbar([p[0] for p in pts], [p[1] for p in pts],
                            yerr=[p[2] for p in pts],
                            fmt=spec.style.get(method, {}).get("fmt", "-o"),
                            capsize=2, markersize=3, label=label)
                legend_entries.append(label)
                n_series += 1

    xlabel, ylabel = AXIS_LABELS[spec.kind]
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(spec.output)), exist_ok=True)
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    return {
        "output": spec.output,
        "kind": spec.kind,
        "xlabel": xlabel,
        "ylabel": ylabel,
        "legend": legend_entries,
        "n_series": n_series,
    }


def render_directory(in_dir, out_dir, style=None) -> list:
    """Render every figure whose aggregated CSV is present in in_dir."""
    style = style or DEFAULT_STYLE
    results = []
    for kind in KINDS:
        if kind == "beampattern":
            matches = sorted(glob.glob(os.path.join(in_dir, "beampattern*_agg.csv")))
            if not matches:
                continue
            spec = FigureSpec(input_csv=matches[0], kind=kind,
                              output=os.path.join(out_dir, f"{kind}.png"),
                              style=style, overlays=matches[1:])
        else:
            path = os.path.join(in_dir, f"{kind}_agg.csv")
            if not os.path.exists(path):
                continue
            spec = FigureSpec(input_csv=path, kind=kind,
                              output=os.path.join(out_dir, f"{kind}.png"),
                              style=style)
        results.append(render(spec))
    return results
