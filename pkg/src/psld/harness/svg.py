"""Minimal SVG scatter emitter: points, axes, two series colors."""

from __future__ import annotations

import numpy as np

_COLORS = ("#1f77b4", "#d62728")
_SIZE = 480
_PAD = 40


def scatter_svg(series, path, max_points: int = 2000,
                rng: np.random.Generator | None = None) -> str:
    """Write a 2-D scatter of up to two (name, (n, >=2) array) series."""
    rng = rng or np.random.default_rng(0)
    clipped = []
    for name, pts in series:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))[:, :2]
        if pts.shape[0] > max_points:
            pts = pts[rng.choice(pts.shape[0], size=max_points, replace=False)]
        clipped.append((name, pts))
    allpts = np.concatenate([p for _, p in clipped], axis=0)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)

    def to_px(p):
        rel = (p - lo) / span
        x = _PAD + rel[:, 0] * (_SIZE - 2 * _PAD)
        y = _SIZE - _PAD - rel[:, 1] * (_SIZE - 2 * _PAD)
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" '
        f'height="{_SIZE}" viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
        f'<line x1="{_PAD}" y1="{_SIZE - _PAD}" x2="{_SIZE - _PAD}" '
        f'y2="{_SIZE - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_SIZE - _PAD}" '
        f'stroke="black"/>',
    ]
    for (name, pts), color in zip(clipped, _COLORS):
        x, y = to_px(pts)
        parts.append(f'<g fill="{color}" fill-opacity="0.5" data-series="{name}">')
        parts.extend(f'<circle cx="{xi:.1f}" cy="{yi:.1f}" r="2"/>'
                     for xi, yi in zip(x, y))
        parts.append("</g>")
    parts.append("</svg>")
    doc = "\n".join(parts)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(doc)
    return doc
