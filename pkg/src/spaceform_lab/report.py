"""Plain SVG figures and report writers used by the command-line interface."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .mesh import Mesh

_PALETTE = np.array([[49, 54, 149], [116, 173, 209], [255, 255, 191], [244, 109, 67], [165, 0, 38]], float)


def colormap(t: np.ndarray) -> list:
    """Piecewise-linear diverging map of ``t`` in [0, 1] to ``#rrggbb`` strings."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0) * (len(_PALETTE) - 1)
    i = np.minimum(t.astype(int), len(_PALETTE) - 2)
    f = (t - i)[:, None]
    rgb = (1.0 - f) * _PALETTE[i] + f * _PALETTE[i + 1]
    return ["#%02x%02x%02x" % tuple(int(round(c)) for c in row) for row in rgb]


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def heatmap_svg(mesh: Mesh, values: np.ndarray, title: str = "", width: int = 640) -> str:
    """Triangles filled by the mean nodal value, Sigma/T drawn on top, with a colour legend."""
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad, legend = 20, 70
    scale = (width - 2 * pad - legend) / span
    height = int((hi[1] - lo[1]) * scale + 2 * pad + 20)

    def xy(p):
        return (pad + (p[..., 0] - lo[0]) * scale, height - pad - (p[..., 1] - lo[1]) * scale)

    tv = np.asarray(values)[mesh.triangles].mean(axis=1)
    vmin, vmax = float(np.min(values)), float(np.max(values))
    colors = colormap((tv - vmin) / (vmax - vmin) if vmax > vmin else np.zeros_like(tv))
    X, Y = xy(v)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">', f'<text x="{pad}" y="14" font-size="12">{title}</text>']
    for t, col in zip(mesh.triangles, colors):
        pts = " ".join(f"{X[i]:.2f},{Y[i]:.2f}" for i in t)
        parts.append(f'<polygon points="{pts}" fill="{col}" stroke="{col}" stroke-width="0.3"/>')
    for edges, col in ((mesh.sigma_edges, "#000000"), (mesh.robin_edges, "#1b7837")):
        for a, b in edges:
            parts.append(f'<line x1="{X[a]:.2f}" y1="{Y[a]:.2f}" x2="{X[b]:.2f}" y2="{Y[b]:.2f}" '
                         f'stroke="{col}" stroke-width="1.5"/>')
    x0 = width - legend + 10
    steps = 50
    bar = height - 2 * pad - 20
    for k, col in enumerate(colormap(np.linspace(1.0, 0.0, steps))):
        parts.append(f'<rect x="{x0}" y="{pad + 20 + k * bar / steps:.2f}" width="15" '
                     f'height="{bar / steps + 0.5:.2f}" fill="{col}"/>')
    parts.append(f'<text x="{x0 + 18}" y="{pad + 28}" font-size="10">{_fmt(vmax)}</text>')
    parts.append(f'<text x="{x0 + 18}" y="{pad + 20 + bar}" font-size="10">{_fmt(vmin)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def loglog_svg(h: Sequence[float], series: dict, title: str = "", width: int = 480, height: int = 360) -> str:
    """Log-log line plot of each series against ``h``."""
    h = np.asarray(h, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    allv = np.concatenate([y[y > 0] for y in ys.values()] + [np.array([1.0])])
    lx0, lx1 = math.log10(h.min()), math.log10(h.max())
    ly0, ly1 = math.log10(allv.min()), math.log10(allv.max())
    lx1, ly1 = (lx1 if lx1 > lx0 else lx0 + 1), (ly1 if ly1 > ly0 else ly0 + 1)
    pad = 50

    def px(x, y):
        return (pad + (math.log10(x) - lx0) / (lx1 - lx0) * (width - 2 * pad),
                height - pad - (math.log10(y) - ly0) / (ly1 - ly0) * (height - 2 * pad))

    cols = ["#d73027", "#4575b4", "#1a9850", "#984ea3"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{pad}" y="20" font-size="12">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             'fill="none" stroke="#888"/>',
             f'<text x="{width / 2:.0f}" y="{height - 10}" font-size="11">h_max</text>',
             f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{_fmt(10 ** lx0)}</text>',
             f'<text x="{width - pad - 30}" y="{height - pad + 14}" font-size="10">{_fmt(10 ** lx1)}</text>',
             f'<text x="2" y="{height - pad}" font-size="10">{_fmt(10 ** ly0)}</text>',
             f'<text x="2" y="{pad + 4}" font-size="10">{_fmt(10 ** ly1)}</text>']
    for k, (name, y) in enumerate(ys.items()):
        ok = y > 0
        pts = " ".join("%.2f,%.2f" % px(a, b) for a, b in zip(h[ok], y[ok]))
        col = cols[k % len(cols)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>')
        parts.append(f'<text x="{width - pad - 60}" y="{pad + 16 * (k + 1)}" font-size="11" fill="{col}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True))


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
