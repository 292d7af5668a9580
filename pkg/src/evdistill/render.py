"""Polarity-map rendering of event grids to portable pixmaps (P6 PPM).

Color key per pixel and time bin: ON-only red, OFF-only blue, both
polarities black, neither white.  In int mode the saturation scales
linearly with count / (n_levels - 1) using integer arithmetic, so output
bytes are identical across platforms.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ContractError
from .events import EventGrid


def _fade(counts: np.ndarray, n_levels: int) -> np.ndarray:
    """255 (no events) down to 0 (saturated), linear in clamped count."""
    span = max(n_levels - 1, 1)
    clamped = np.minimum(counts, span).astype(np.int64)
    return (255 - (255 * clamped) // span).astype(np.uint8)


def render_frame(on: np.ndarray, off: np.ndarray, n_levels: int) -> bytes:
    """RGB bytes (H*W*3) for one time bin from ON/OFF count maps."""
    if on.shape != off.shape:
        raise ContractError("polarity maps must share a shape")
    h, w = on.shape
    rgb = np.full((h, w, 3), 255, dtype=np.uint8)
    on_only = (on > 0) & (off == 0)
    off_only = (off > 0) & (on == 0)
    both = (on > 0) & (off > 0)
    fade_on = _fade(on, n_levels)
    fade_off = _fade(off, n_levels)
    rgb[on_only, 1] = fade_on[on_only]
    rgb[on_only, 2] = fade_on[on_only]
    rgb[off_only, 0] = fade_off[off_only]
    rgb[off_only, 1] = fade_off[off_only]
    rgb[both] = 0
    return rgb.tobytes()


def write_ppm(path, height: int, width: int, rgb: bytes) -> None:
    if len(rgb) != height * width * 3:
        raise ContractError("pixel buffer size does not match dimensions")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(rgb)


def render_grid(grid: EventGrid, out_dir, stem: str, n_levels: int | None = None) -> list[str]:
    """One PPM per time bin; returns the written paths."""
    t_bins, channels, h, w = grid.shape
    if channels != 2:
        raise ContractError(f"rendering requires two polarity channels, got {channels}")
    if n_levels is None:
        n_levels = max(int(grid.values.max(initial=0)) + 1, 2)
    paths = []
    for t in range(t_bins):
        rgb = render_frame(grid.values[t, 1], grid.values[t, 0], n_levels)
        path = os.path.join(out_dir, f"{stem}_t{t}.ppm")
        write_ppm(path, h, w, rgb)
        paths.append(path)
    return paths
