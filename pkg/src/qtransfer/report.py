"""Dependency-free renderings: SVG heatmaps of matrices, PGM/PPM image grids."""
from __future__ import annotations

from html import escape
from pathlib import Path

import numpy as np

from .data import atomic_write

LIGHT = np.array([247, 251, 255], dtype=np.float64)
DARK = np.array([8, 48, 107], dtype=np.float64)
CELL = 56
LABEL = 64


def cell_colour(value: float) -> str:
    """Blue ramp on [0, 1]; higher values are darker."""
    v = float(np.clip(value, 0.0, 1.0))
    rgb = np.rint(LIGHT + (DARK - LIGHT) * v).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def luminance(colour: str) -> float:
    r, g, b = (int(colour[i:i + 2], 16) / 255 for i in (1, 3, 5))
    return 0.2126 * r + 0.7152 * g + 0.0722 * b


def heatmap_svg(rows, cols, values, title: str = "") -> str:
    """One ``<rect class="cell">`` per matrix entry, labelled with its value."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(rows), len(cols)):
        raise ValueError(f"values shape {values.shape} does not match {len(rows)}x{len(cols)} labels")
    top = LABEL + (24 if title else 0)
    width = LABEL + CELL * len(cols) + 8
    height = top + CELL * len(rows) + 8
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">']
    if title:
        out.append(f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for j, c in enumerate(cols):
        x = LABEL + CELL * j + CELL / 2
        out.append(f'<text class="col" x="{x}" y="{top - 8}" text-anchor="middle">{escape(str(c))}</text>')
    for i, r in enumerate(rows):
        y = top + CELL * i
        out.append(f'<text class="row" x="{LABEL - 6}" y="{y + CELL / 2 + 4}" text-anchor="end">{escape(str(r))}</text>')
        for j, v in enumerate(values[i]):
            x = LABEL + CELL * j
            fill = cell_colour(v)
            ink = "#ffffff" if luminance(fill) < 0.5 else "#000000"
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="{fill}" data-value="{v:.3f}"/>')
            out.append(f'<text x="{x + CELL / 2}" y="{y + CELL / 2 + 4}" text-anchor="middle" '
                       f'fill="{ink}">{v:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_heatmap(path, rows, cols, values, title: str = ""):
    atomic_write(path, heatmap_svg(rows, cols, values, title).encode("utf-8"))


def image_grid(images: np.ndarray, ncols: int, pad: int = 2) -> np.ndarray:
    """Tile (N, H, W, C) images in [0, 1] into one uint8 (H', W', C) canvas."""
    n, h, w, c = images.shape
    nrows = max(1, -(-n // ncols))
    canvas = np.zeros((nrows * (h + pad) + pad, ncols * (w + pad) + pad, c), dtype=np.uint8)
    for k in range(n):
        r, q = divmod(k, ncols)
        y, x = pad + r * (h + pad), pad + q * (w + pad)
        canvas[y:y + h, x:x + w] = np.rint(np.clip(images[k], 0, 1) * 255).astype(np.uint8)
    return canvas


def write_pnm(path, canvas: np.ndarray):
    """Binary PGM for one channel, PPM for three."""
    h, w, c = canvas.shape
    magic = {1: b"P5", 3: b"P6"}[c]
    atomic_write(path, magic + f"\n{w} {h}\n255\n".encode("ascii") + canvas.tobytes())


def dump_pairs(directory, clean: np.ndarray, adv: np.ndarray, limit: int = 5, name: str = "pairs"):
    """Clean images on the top row, adversarial counterparts below."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    k = min(limit, len(clean))
    if k == 0:
        return None
    canvas = image_grid(np.concatenate([clean[:k], adv[:k]]), ncols=k)
    path = directory / (f"{name}.pgm" if canvas.shape[2] == 1 else f"{name}.ppm")
    write_pnm(path, canvas)
    return path
