"""SVG trajectory plots and summary files.

Every setpoint/achieved marker carries a ``<title>`` with the exact values
plotted (``%.17g``), so the figure can be checked against the trajectory CSV.
"""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .mpc import CONTROL_NAMES, MpcTrajectory

WIDTH, HEIGHT = 900, 560
MARGIN = 60
PANEL_GAP = 50
COLOURS = {"setpoint": "#222222", "predicted": "#1f77b4", "actual": "#d62728"}
CONTROL_COLOURS = ("#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _fmt(v: float) -> str:
    return "%.17g" % v


class _Axes:
    def __init__(self, x0, y0, w, h, n, lo, hi):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.n = n
        if not hi > lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.05 * (hi - lo)
        self.lo, self.hi = lo - pad, hi + pad

    def x(self, i):
        return self.x0 + (self.w * (i + 0.5) / self.n)

    def y(self, v):
        return self.y0 + self.h * (1.0 - (v - self.lo) / (self.hi - self.lo))

    def points(self, values):
        return " ".join(f"{self.x(i):.2f},{self.y(v):.2f}" for i, v in enumerate(values) if np.isfinite(v))


def _frame(svg, ax: _Axes, label: str):
    ET.SubElement(svg, "rect", x=f"{ax.x0}", y=f"{ax.y0}", width=f"{ax.w}", height=f"{ax.h}",
                  fill="none", stroke="#999999")
    for v in np.linspace(ax.lo, ax.hi, 5):
        ET.SubElement(svg, "text", x=f"{ax.x0 - 6}", y=f"{ax.y(v) + 4:.2f}", **{"text-anchor": "end", "font-size": "10"}).text = f"{v:.1f}"
    t = ET.SubElement(svg, "text", x=f"{ax.x0}", y=f"{ax.y0 - 8}", **{"font-size": "12"})
    t.text = label


def _series(svg, ax, name, values, colour, markers: bool, dashed: bool = False):
    g = ET.SubElement(svg, "g", {"class": f"series-{name}"})
    attrs = {"points": ax.points(values), "fill": "none", "stroke": colour, "stroke-width": "1.5"}
    if dashed:
        attrs["stroke-dasharray"] = "4,3"
    ET.SubElement(g, "polyline", attrs)
    if markers:
        for i, v in enumerate(values):
            if not np.isfinite(v):
                continue
            c = ET.SubElement(g, "circle", {"class": f"marker marker-{name}", "cx": f"{ax.x(i):.2f}",
                                            "cy": f"{ax.y(v):.2f}", "r": "2.5", "fill": colour})
            ET.SubElement(c, "title").text = f"step={i} {name}={_fmt(v)}"


def render_svg(traj: MpcTrajectory, control_names=CONTROL_NAMES) -> str:
    """Temperatures (setpoint, surrogate prediction, achieved) on top and
    control traces below."""
    if traj.T < 1:
        raise ValueError("cannot plot an empty trajectory")
    achieved_name = "actual" if traj.has_plant else "predicted"
    achieved = traj.achieved()
    temps = [traj.setpoint, traj.predicted] + ([traj.actual] if traj.has_plant else [])
    allv = np.concatenate([t[np.isfinite(t)] for t in temps])
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(WIDTH), height=str(HEIGHT),
                     viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(svg, "title").text = f"{traj.mode} trajectory, {traj.T} steps"
    h_top = 0.6 * (HEIGHT - 2 * MARGIN - PANEL_GAP)
    h_bot = HEIGHT - 2 * MARGIN - PANEL_GAP - h_top
    w = WIDTH - 2 * MARGIN
    top = _Axes(MARGIN, MARGIN, w, h_top, traj.T, float(allv.min()), float(allv.max()))
    _frame(svg, top, "temperature [degC]")
    _series(svg, top, "setpoint", traj.setpoint, COLOURS["setpoint"], markers=True)
    if traj.has_plant:
        _series(svg, top, "predicted", traj.predicted, COLOURS["predicted"], markers=False, dashed=True)
    _series(svg, top, achieved_name, achieved, COLOURS[achieved_name], markers=True)
    bot = _Axes(MARGIN, MARGIN + h_top + PANEL_GAP, w, h_bot, traj.T,
                float(traj.controls.min()), float(traj.controls.max()))
    _frame(svg, bot, "controls")
    for j in range(traj.controls.shape[1]):
        name = control_names[j] if j < len(control_names) else f"u{j}"
        _series(svg, bot, name, traj.controls[:, j], CONTROL_COLOURS[j % len(CONTROL_COLOURS)], markers=False)
    ET.SubElement(svg, "text", x=f"{MARGIN}", y=f"{HEIGHT - 15}", **{"font-size": "10"}).text = "step"
    return ET.tostring(svg, encoding="unicode")


def emit_report(traj: MpcTrajectory, out_dir, stem: str = "report") -> dict:
    """Write ``<stem>.svg`` and ``<stem>_summary.json`` under ``out_dir``;
    returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.svg").write_text(render_svg(traj))
    summary = traj.summary()
    (out / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
