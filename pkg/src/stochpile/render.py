"""Colour rendering of stable configurations and binary PPM output.

Grain counts map onto a blue -> green -> red ramp anchored at 1, 2M and 4M-1
grains; empty sites are white.
"""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import Configuration, UnstableSiteError

BACKGROUND = (255, 255, 255)
BLUE = (0, 0, 255)
GREEN = (0, 255, 0)
RED = (255, 0, 0)


class RGB(NamedTuple):
    r: int
    g: int
    b: int


def _lerp_round(a: int, b: int, n: int, d: int) -> int:
    # a + (b - a) * n / d, rounded to nearest with ties away from zero (value >= 0)
    num = a * d + (b - a) * n
    return (2 * num + d) // (2 * d)


def colour_of(grains: int, M: int) -> RGB:
    if M < 1:
        raise ValueError("M must be positive")
    if grains < 0:
        raise ValueError("grain count must be non-negative")
    if grains >= 4 * M:
        raise UnstableSiteError(f"{grains} grains is unstable for M={M} (threshold {4 * M})")
    if grains == 0:
        return RGB(*BACKGROUND)
    d = 2 * M - 1
    if grains <= 2 * M:
        lo, hi, n = BLUE, GREEN, grains - 1
    else:
        lo, hi, n = GREEN, RED, grains - 2 * M
    return RGB(*(_lerp_round(a, b, n, d) for a, b in zip(lo, hi)))


def palette(M: int) -> np.ndarray:
    """Colour lookup table indexed by grain count 0..4M-1."""
    return np.array([colour_of(g, M) for g in range(4 * M)], dtype=np.uint8)


def render_shape(final: Configuration, crop: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """Render to an (height, width, 3) uint8 array; rows follow increasing y.

    ``crop`` is (xmin, ymin, xmax, ymax), inclusive.  By default the tight box of
    positive sites is used with a one-pixel margin.
    """
    if crop is None:
        box = final.bbox()
        if box is None:
            crop = (-1, -1, 1, 1)
        else:
            xmin, ymin, xmax, ymax = box
            crop = (xmin - 1, ymin - 1, xmax + 1, ymax + 1)
    xmin, ymin, xmax, ymax = crop
    if xmax < xmin or ymax < ymin:
        raise ValueError(f"empty crop {crop}")
    field = final.window(xmin, ymin, xmax, ymax).grains
    if (final.grains >= final.threshold).any():
        raise UnstableSiteError("configuration is not stable; cannot render")
    return palette(final.M)[field]


def ppm_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must have shape (height, width, 3)")
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image).tobytes()


def write_ppm(image: np.ndarray, path) -> None:
    data = ppm_bytes(image)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write PPM to {path}: {exc.strerror or exc}") from exc
