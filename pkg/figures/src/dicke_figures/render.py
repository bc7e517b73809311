"""Render simulation CSV outputs as figures.

Rendering is a pure function of the CSV content (plus an optional JSON
sidecar for axis normalization); no physics is recomputed here.  Input
files must match the documented column contracts of the producing CLI and
fail fast with an explicit column diff otherwise.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("ramp", "trajectory", "heatmap", "lines")

REQUIRED_COLUMNS = {
    "ramp": ["t_ms", "bx_khz"],
    "trajectory": ["t_ms", "sx", "sy", "sz", "abs_sz"],
    "heatmap": ["b_hold_over_j", "t_hold_ms"],
    "lines": [],
}


class RenderError(ValueError):
    """Input does not satisfy the CSV contract."""


@dataclass
class PlotSpec:
    path: str
    kind: str
    out: str
    metric: str = "fidelity"           # heatmap color / lines y-column
    n_spins: float | None = None       # spin normalization for trajectories
    x: str | None = None               # lines: x column
    y: list[str] = field(default_factory=list)   # lines: y columns
    series: str | None = None          # lines: group rows by this column
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RenderError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {KINDS}")


def read_table(path):
    """CSV as {column: list[str]}; header order preserved."""
    path = Path(path)
    if not path.exists():
        raise RenderError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RenderError(f"{path} is empty (no header)") from None
        rows = [row for row in reader if row]
    if not rows:
        raise RenderError(f"{path} has a header but no data rows")
    columns = {name: [row[k] for row in rows] for k, name in enumerate(header)}
    return columns


def check_columns(columns, needed, path):
    missing = [c for c in needed if c not in columns]
    if missing:
        raise RenderError(
            f"{path}: missing required columns {missing}; "
            f"found {sorted(columns)}")


def floats(columns, name):
    return np.array([float(v) if v != "" else np.nan for v in columns[name]])


def sidecar_n_spins(path):
    side = Path(str(path) + ".json")
    if side.exists():
        try:
            doc = json.loads(side.read_text())
            return float(doc["config"]["n_spins"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError):
            return None
    return None


def render(spec: PlotSpec) -> str:
    """Render one figure; returns the output path."""
    columns = read_table(spec.path)
    check_columns(columns, REQUIRED_COLUMNS[spec.kind], spec.path)
    fig = _RENDERERS[spec.kind](columns, spec)
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return str(out)


def _render_ramp(columns, spec):
    t = floats(columns, "t_ms")
    b = floats(columns, "bx_khz")
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(t, b, lw=1.8)
    ax.set_xlabel("t (ms)")
    ax.set_ylabel(r"$B^x$ (kHz)")
    ax.set_title(spec.title or "transverse-field ramp profile")
    fig.tight_layout()
    return fig


def _render_trajectory(columns, spec):
    t = floats(columns, "t_ms")
    n_spins = spec.n_spins or sidecar_n_spins(spec.path)
    scale = n_spins if n_spins else 1.0
    suffix = "/N" if n_spins else ""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(5.4, 5.2), sharex=True)
    for name, style in (("sx", "-"), ("sy", "--"), ("sz", ":")):
        top.plot(t, floats(columns, name) / scale, style,
                 label=rf"$\langle S_{name[-1]}\rangle${suffix}")
    top.legend(loc="best", fontsize=8)
    top.set_ylabel(f"spin projection{suffix}")
    bottom.plot(t, floats(columns, "abs_sz") / scale, color="tab:red")
    bottom.set_ylabel(rf"$\langle |S_z|\rangle${suffix}")
    bottom.set_xlabel("t (ms)")
    if spec.title:
        top.set_title(spec.title)
    fig.tight_layout()
    return fig


def _render_heatmap(columns, spec):
    metric = spec.metric
    check_columns(columns, [metric], spec.path)
    b = floats(columns, "b_hold_over_j")
    t = floats(columns, "t_hold_ms")
    z = floats(columns, metric)
    b_axis = np.unique(b)
    t_axis = np.unique(t)
    if len(b_axis) * len(t_axis) != len(z):
        raise RenderError(
            f"{spec.path}: rows do not form a complete "
            f"{len(b_axis)}x{len(t_axis)} grid")
    grid = np.full((len(b_axis), len(t_axis)), np.nan)
    for bi, ti, zi in zip(b, t, z):
        grid[np.searchsorted(b_axis, bi), np.searchsorted(t_axis, ti)] = zi
    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    mesh = ax.pcolormesh(t_axis, b_axis, grid, shading="nearest",
                         cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=metric)
    k = np.unravel_index(np.nanargmax(grid), grid.shape)
    ax.plot(t_axis[k[1]], b_axis[k[0]], "r*", ms=12, mec="white")
    ax.annotate(f"max {grid[k]:.3g}", (t_axis[k[1]], b_axis[k[0]]),
                textcoords="offset points", xytext=(6, 6), color="white",
                fontsize=8)
    ax.set_xlabel(r"$t_{\rm hold}$ (ms)")
    ax.set_ylabel(r"$B^x_{\rm hold}/J$")
    ax.set_title(spec.title or metric)
    fig.tight_layout()
    return fig


def _render_lines(columns, spec):
    x_name = spec.x
    y_names = list(spec.y)
    if x_name is None:
        # sensible defaults for the protocol-comparison contract
        if "tau_ms" in columns:
            x_name = "tau_ms"
            y_names = y_names or [c for c in ("f_bang_bang", "f_la")
                                  if c in columns]
        elif "n_spins" in columns:
            x_name = "n_spins"
            y_names = y_names or [spec.metric]
    if not x_name or not y_names:
        raise RenderError(
            f"{spec.path}: lines figure needs --x and --y columns "
            f"(found {sorted(columns)})")
    check_columns(columns, [x_name] + y_names, spec.path)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    if spec.series and spec.series in columns:
        labels = columns[spec.series]
        x = floats(columns, x_name)
        for y_name in y_names:
            yv = floats(columns, y_name)
            for label in sorted(set(labels)):
                mask = np.array([l == label for l in labels])
                order = np.argsort(x[mask])
                ax.plot(x[mask][order], yv[mask][order], "o-",
                        label=f"{label} {y_name}" if len(y_names) > 1 else label)
    else:
        x = floats(columns, x_name)
        order = np.argsort(x)
        for y_name in y_names:
            ax.plot(x[order], floats(columns, y_name)[order], "o-",
                    label=y_name)
    ax.set_xlabel(x_name)
    ax.set_ylabel(", ".join(y_names))
    ax.legend(loc="best", fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return fig


_RENDERERS = {
    "ramp": _render_ramp,
    "trajectory": _render_trajectory,
    "heatmap": _render_heatmap,
    "lines": _render_lines,
}
