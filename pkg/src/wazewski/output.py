"""File writers: trajectory CSV, JSON reports and SVG projections.

All writers are deterministic: identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Sequence

import contourpy
import numpy as np

from . import __version__
from .core import RegionSpec, Trajectory, state_names
from .exprlang import evaluate, free_names

__all__ = ["write_csv", "write_json", "report", "render_svg", "write_svg"]

WIDTH, HEIGHT = 800, 600
MARGIN = 50


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_rows(traj: Trajectory) -> list[list[float]]:
    """Accepted step points with strictly increasing time."""
    rows = []
    last = -math.inf
    for t, x in zip(traj.times, traj.states):
        if t > last:
            rows.append([t, *x])
            last = t
    return rows


def write_csv(path: str | Path, traj: Trajectory) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *state_names(traj.dim)])
        for row in trajectory_rows(traj):
            w.writerow([_g17(v) for v in row])
    return path


def report(command: str, resolved: dict, horizon: float | None, result: Any) -> dict:
    """Wrap a result with its provenance: tool version, resolved config, horizon, tolerances."""
    integ = resolved.get("integrator", {})
    # the output directory is where the report lands, not an input; leaving it
    # out keeps reruns into different directories byte-identical
    config = dict(resolved)
    if "outputs" in config:
        config["outputs"] = {k: v for k, v in config["outputs"].items() if k != "dir"}
    return {
        "tool": "wazewski",
        "version": __version__,
        "command": command,
        "horizon": horizon,
        "tolerances": {
            "rel_tol": integ.get("rel_tol"),
            "abs_tol": integ.get("abs_tol"),
            "event_tol": integ.get("event_tol"),
        },
        "config": config,
        "result": result,
    }


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, ensure_ascii=False)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return path


def _projection(traj: Trajectory, axes: Sequence[int]) -> tuple[np.ndarray, np.ndarray, str, str]:
    ts, xs = traj.sample()
    xs = np.asarray(xs)
    i, j = axes
    if i == j:
        return np.asarray(ts), xs[:, i], "t", state_names(traj.dim)[i]
    names = state_names(traj.dim)
    return xs[:, i], xs[:, j], names[i], names[j]


def _face_lines(region: RegionSpec, axes, ref_state, bounds, n: int = 201):
    """Zero level sets of faces that depend only on the two plotted state variables."""
    i, j = axes
    if i == j:
        return []
    names = state_names(region.dim)
    plotted = {names[i], names[j]}
    (x0, x1), (y0, y1) = bounds
    gx = np.linspace(x0, x1, n)
    gy = np.linspace(y0, y1, n)
    out = []
    for face in region.faces:
        used = free_names(face.g) - set(region.params)
        if not used <= plotted:
            continue
        env = region.env(ref_state, 0.0)
        z = np.empty((n, n))
        for r, yv in enumerate(gy):
            env[names[j]] = float(yv)
            for c, xv in enumerate(gx):
                env[names[i]] = float(xv)
                z[r, c] = evaluate(face.g, env)
        gen = contourpy.contour_generator(gx, gy, z, line_type=contourpy.LineType.Separate)
        for line in gen.lines(0.0):
            if len(line) > 1:
                out.append((face.name, np.asarray(line)))
    return out


def render_svg(
    trajs: Sequence[Trajectory],
    axes: Sequence[int] = (0, 1),
    region: RegionSpec | None = None,
    title: str = "",
) -> str:
    """2-D projection of one or more trajectories with the face curves overlaid when they fit the axes."""
    projs = [_projection(t, axes) for t in trajs]
    xs = np.concatenate([p[0] for p in projs])
    ys = np.concatenate([p[1] for p in projs])
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    padx = 0.05 * (xhi - xlo) or 0.5
    pady = 0.05 * (yhi - ylo) or 0.5
    xlo, xhi, ylo, yhi = xlo - padx, xhi + padx, ylo - pady, yhi + pady

    def sx(v):
        return MARGIN + (v - xlo) / (xhi - xlo) * (WIDTH - 2 * MARGIN)

    def sy(v):
        return HEIGHT - MARGIN - (v - ylo) / (yhi - ylo) * (HEIGHT - 2 * MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
        'fill="none" stroke="#999" stroke-width="1"/>',
    ]
    if region is not None:
        ref = trajs[0].states[0]
        for name, line in _face_lines(region, axes, ref, ((xlo, xhi), (ylo, yhi))):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in line)
            parts.append(f'<polyline points="{pts}" fill="none" stroke="#c33" stroke-width="1.5" '
                         f'stroke-dasharray="6 3"><title>{name}</title></polyline>')
    for k, (px, py, _, _) in enumerate(projs):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(px, py))
        colour = "#1f4e9c" if k == 0 else "#3a8f3a"
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
    xl, yl = projs[0][2], projs[0][3]
    parts.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="14">{xl}</text>')
    parts.append(f'<text x="14" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="14" '
                 f'transform="rotate(-90 14 {HEIGHT / 2:.0f})">{yl}</text>')
    for v, anchor, x, y in (
        (xlo, "start", MARGIN, HEIGHT - MARGIN + 16),
        (xhi, "end", WIDTH - MARGIN, HEIGHT - MARGIN + 16),
    ):
        parts.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="11">{v:.4g}</text>')
    parts.append(f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="11">{ylo:.4g}</text>')
    parts.append(f'<text x="{MARGIN - 4}" y="{MARGIN + 10}" text-anchor="end" font-size="11">{yhi:.4g}</text>')
    if title:
        parts.append(f'<text x="{WIDTH / 2:.0f}" y="30" text-anchor="middle" font-size="16">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path: str | Path, trajs: Sequence[Trajectory], axes=(0, 1), region=None, title="") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(render_svg(trajs, axes, region, title))
    return path
