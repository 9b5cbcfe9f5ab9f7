"""PGM and SVG exports for surfaces and embeddings."""

from __future__ import annotations

import numpy as np

CLAIM_COLOR = "#1f4fd8"
NO_CLAIM_COLOR = "#2ca02c"
MARKER_COLORS = ("#2ca02c", "#d62728", "#c71585", "#ff7f0e", "#17becf", "#8c564b")
EMPTY_COLOR = "#f2f2f2"


def pgm_bytes(grid) -> bytes:
    """16-bit binary PGM; the first image row is the top (largest y) grid row."""
    g = np.clip(np.asarray(grid, dtype=float), 0.0, 1.0)
    pix = np.rint(g[::-1] * 65535).astype(">u2")
    header = f"P5\n{g.shape[1]} {g.shape[0]}\n65535\n".encode("ascii")
    return header + pix.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height = map(int, parts[1].split())
    if int(parts[2]) != 65535:
        raise ValueError("expected maxval 65535")
    pix = np.frombuffer(parts[3], dtype=">u2").reshape(height, width)
    return pix[::-1].astype(float) / 65535.0


def _ramp(v: float) -> str:
    # light yellow -> orange -> dark red
    stops = np.array([[255, 255, 204], [253, 141, 60], [128, 0, 38]], dtype=float)
    v = min(max(v, 0.0), 1.0) * 2
    k = min(int(v), 1)
    c = stops[k] + (stops[k + 1] - stops[k]) * (v - k)
    return "#%02x%02x%02x" % tuple(int(round(x)) for x in c)


def _svg(width: int, height: int, body: list) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n' + "\n".join(body) + "\n</svg>\n"
    )


def surface_svg(surface, title: str = "", marks=None, cell: int = 5) -> str:
    """Heatmap of the valid region; ``marks`` is a list of ``(label, x, y)``."""
    n = surface.geometry.size
    pad = 30
    size = n * cell
    body = [f'<rect x="0" y="0" width="{size + 2 * pad}" height="{size + 2 * pad}" fill="white"/>']
    if title:
        body.append(f'<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{title}</text>')
    body.append(f'<g id="surface" transform="translate({pad},{pad})">')
    for r in range(n):
        y = (n - 1 - r) * cell
        for c in range(n):
            color = _ramp(surface.grid[r, c]) if surface.valid[r, c] else EMPTY_COLOR
            body.append(f'<rect x="{c * cell}" y="{y}" width="{cell}" height="{cell}" fill="{color}"/>')
    body.append("</g>")
    if marks:
        g = surface.geometry
        body.append(f'<g id="marks" transform="translate({pad},{pad})">')
        for k, (label, px, py) in enumerate(marks):
            sx = (px - g.x_min) / (g.x_max - g.x_min) * size
            sy = (g.y_max - py) / (g.y_max - g.y_min) * size
            color = MARKER_COLORS[k % len(MARKER_COLORS)]
            body.append(
                f'<circle class="mark" data-id="{label}" cx="{sx:.2f}" cy="{sy:.2f}" r="6" '
                f'fill="{color}" stroke="black" stroke-width="1.5"/>'
            )
            body.append(
                f'<text x="{sx + 8:.2f}" y="{sy - 8:.2f}" font-family="sans-serif" '
                f'font-size="12">{label}</text>'
            )
        body.append("</g>")
    return _svg(size + 2 * pad, size + 2 * pad, body)


def scatter_svg(points, claims, title: str = "", size: int = 600) -> str:
    """Embedding scatter; claims are drawn last so they stay visible."""
    p = np.asarray(points, dtype=float)
    claims = np.asarray(claims).astype(int)
    pad = 30
    lo = p.min(axis=0)
    span = np.where(p.max(axis=0) > lo, p.max(axis=0) - lo, 1.0)
    sx = (p[:, 0] - lo[0]) / span[0] * size + pad
    sy = (1.0 - (p[:, 1] - lo[1]) / span[1]) * size + pad
    body = [f'<rect x="0" y="0" width="{size + 2 * pad}" height="{size + 2 * pad}" fill="white"/>']
    if title:
        body.append(f'<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{title}</text>')
    for cls, color in ((0, NO_CLAIM_COLOR), (1, CLAIM_COLOR)):
        body.append(f'<g class="{"claim" if cls else "no-claim"}" fill="{color}">')
        for i in np.flatnonzero(claims == cls):
            body.append(f'<circle cx="{sx[i]:.2f}" cy="{sy[i]:.2f}" r="1.5"/>')
        body.append("</g>")
    return _svg(size + 2 * pad, size + 2 * pad, body)
