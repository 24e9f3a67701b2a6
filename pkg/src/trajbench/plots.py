"""Deterministic SVG rendering: line charts and scene drawings.

Everything here is plain string assembly with fixed-precision coordinates,
so the same inputs always produce byte-identical files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Scene, ValidationError

__all__ = ["LineSeries", "line_plot", "render_scene"]

_PALETTE = ("#1f6fb2", "#d1495b", "#3d8b5f", "#8a5fbf", "#c98a2b", "#4a4a4a")
_W, _H = 640, 420
_MARGIN = dict(left=62, right=18, top=34, bottom=46)


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _tick_label(x: float) -> str:
    if x == int(x) and abs(x) < 1e6:
        return str(int(x))
    return f"{x:.4g}"


@dataclass(frozen=True)
class LineSeries:
    name: str
    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.xs) != len(self.ys) or not self.xs:
            raise ValidationError("series needs matching, non-empty xs and ys")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12:
        ticks.append(round(t, 10))
        t += step
    return ticks


def line_plot(
    series: tuple[LineSeries, ...],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    path=None,
) -> str:
    """Render line series to an SVG chart; returns the SVG text and writes
    it to ``path`` when given."""
    if not series:
        raise ValidationError("line_plot needs at least one series")
    xs = np.concatenate([np.asarray(s.xs, dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s.ys, dtype=float) for s in series])
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValidationError("line_plot values must be finite")
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    px0, px1 = _MARGIN["left"], _W - _MARGIN["right"]
    py0, py1 = _H - _MARGIN["bottom"], _MARGIN["top"]

    def sx(x: float) -> float:
        return px0 + (x - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def sy(y: float) -> float:
        return py0 + (y - y_lo) / (y_hi - y_lo) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif">',
        f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>'
        )

    for t in _nice_ticks(x_lo, x_hi):
        X = sx(t)
        parts.append(
            f'<line x1="{_fmt(X)}" y1="{py0}" x2="{_fmt(X)}" y2="{py1}" stroke="#e3e3e3" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(X)}" y="{py0 + 16}" text-anchor="middle" font-size="11">{_tick_label(t)}</text>'
        )
    for t in _nice_ticks(y_lo, y_hi):
        Y = sy(t)
        parts.append(
            f'<line x1="{px0}" y1="{_fmt(Y)}" x2="{px1}" y2="{_fmt(Y)}" stroke="#e3e3e3" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{px0 - 6}" y="{_fmt(Y + 4)}" text-anchor="end" font-size="11">{_tick_label(t)}</text>'
        )
    parts.append(
        f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" height="{py0 - py1}" '
        'fill="none" stroke="#777777" stroke-width="1"/>'
    )
    if xlabel:
        parts.append(
            f'<text x="{(px0 + px1) / 2:.0f}" y="{_H - 10}" text-anchor="middle" '
            f'font-size="12">{_esc(xlabel)}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="16" y="{(py0 + py1) / 2:.0f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {(py0 + py1) / 2:.0f})">{_esc(ylabel)}</text>'
        )

    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(s.xs, s.ys))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for x, y in zip(s.xs, s.ys):
            parts.append(
                f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="2.5" fill="{color}"/>'
            )
        ly = py1 + 14 + 16 * i
        parts.append(
            f'<line x1="{px1 - 130}" y1="{ly}" x2="{px1 - 108}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{px1 - 102}" y="{ly + 4}" font-size="11">{_esc(s.name)}</text>'
        )

    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg


def _esc(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def render_scene(scene: Scene, prediction=None, path=None) -> str:
    """Draw a scene: lane corridors, agent pasts and futures, the target
    highlighted, optional predicted modes, and a 10 m scale bar.

    ``prediction`` pairs target-frame mode arrays with probabilities; modes
    are mapped back through the scene's target frame for drawing.
    """
    pts = [lane.centerline for lane in scene.lane_map.lanes]
    for agent in scene.agents:
        pts.append(agent.past.points)
        pts.append(agent.future.points)
    allp = np.concatenate(pts)
    lo = allp.min(axis=0) - 12.0
    hi = allp.max(axis=0) + 12.0
    span = np.maximum(hi - lo, 1.0)

    width = 760.0
    scale = (width - 20) / span[0]
    height = span[1] * scale + 20

    def sx(x: float) -> float:
        return 10 + (x - lo[0]) * scale

    def sy(y: float) -> float:
        return height - 10 - (y - lo[1]) * scale  # +y up

    def poly(points: np.ndarray, stroke: str, sw: float, dash: str = "", opacity: float = 1.0) -> str:
        body = " ".join(f"{_fmt(sx(p[0]))},{_fmt(sy(p[1]))}" for p in points)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        op = f' stroke-opacity="{opacity:.3f}"' if opacity < 1.0 else ""
        return f'<polyline points="{body}" fill="none" stroke="{stroke}" stroke-width="{sw:.2f}"{extra}{op}/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif">',
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="#f4f2ee"/>',
    ]
    for lane in scene.lane_map.lanes:
        parts.append(poly(lane.centerline, "#d8d4cc", lane.width * scale))
    for lane in scene.lane_map.lanes:
        parts.append(poly(lane.centerline, "#aaa49a", 1.0, dash="6,5"))

    target = scene.target
    for agent in scene.agents:
        if agent.is_target:
            continue
        parts.append(poly(agent.past.points, "#7c7c7c", 1.6, dash="4,3"))
        parts.append(poly(agent.future.points, "#1f6fb2", 1.6))
        p = agent.position()
        parts.append(
            f'<circle cx="{_fmt(sx(p[0]))}" cy="{_fmt(sy(p[1]))}" r="4" fill="#1f6fb2"/>'
        )
        parts.append(
            f'<text x="{_fmt(sx(p[0]) + 6)}" y="{_fmt(sy(p[1]) - 6)}" font-size="10" '
            f'fill="#444444">{_esc(agent.id)}</text>'
        )

    if prediction is not None:
        from .core import target_frame_of

        frame = scene.frame or target_frame_of(scene)
        order = np.argsort(-np.asarray(prediction.probs), kind="stable")
        for rank, mode_idx in enumerate(order):
            world = frame.to_world(prediction.modes[int(mode_idx)])
            opacity = 0.9 if rank == 0 else 0.35
            parts.append(poly(world, "#8a5fbf", 2.0, opacity=opacity))

    parts.append(poly(target.past.points, "#b06a00", 2.2, dash="4,3"))
    parts.append(poly(target.future.points, "#d1495b", 2.4))
    tp = target.position()
    parts.append(
        f'<circle cx="{_fmt(sx(tp[0]))}" cy="{_fmt(sy(tp[1]))}" r="5" fill="#d1495b" '
        'stroke="#7a1f2b" stroke-width="1.5"/>'
    )
    parts.append(
        f'<text x="{_fmt(sx(tp[0]) + 7)}" y="{_fmt(sy(tp[1]) - 7)}" font-size="11" '
        f'fill="#7a1f2b">{_esc(target.id)}</text>'
    )

    # 10 m scale bar, bottom left
    bar = 10.0 * scale
    parts.append(
        f'<line x1="14" y1="{height - 14:.0f}" x2="{14 + bar:.2f}" y2="{height - 14:.0f}" '
        'stroke="#333333" stroke-width="2"/>'
    )
    parts.append(f'<text x="14" y="{height - 20:.0f}" font-size="10" fill="#333333">10 m</text>')
    parts.append(f'<text x="10" y="16" font-size="12" fill="#333333">{_esc(scene.id)}</text>')
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
