"""Heatmap overlay rendering.

The colormap is a fixed 256-entry table built from the anchor ramp
black -> blue -> cyan -> green -> yellow -> red with linear interpolation,
so renders are bit-reproducible without any plotting dependency. Index 0 is
black, which makes a zero map render as the plainly dimmed source image.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .annotations import Polygon
from .errors import DimMismatchError
from .pipeline import ProbabilityMap

_ANCHORS = (
    (0, (0, 0, 0)),
    (51, (0, 0, 255)),
    (102, (0, 255, 255)),
    (153, (0, 255, 0)),
    (204, (255, 255, 0)),
    (255, (255, 0, 0)),
)

OUTLINE_COLOR = (255, 255, 255)
OUTLINE_WIDTH = 2


def _build_colormap() -> np.ndarray:
    table = np.zeros((256, 3), np.uint8)
    for (i0, c0), (i1, c1) in zip(_ANCHORS, _ANCHORS[1:]):
        span = i1 - i0
        for ch in range(3):
            table[i0 : i1 + 1, ch] = np.rint(
                c0[ch] + (c1[ch] - c0[ch]) * np.arange(span + 1) / span
            ).astype(np.uint8)
    return table


COLORMAP = _build_colormap()
COLORMAP.flags.writeable = False


def blend_heatmap(
    image: np.ndarray, pmap: ProbabilityMap, blend: float = 0.5
) -> np.ndarray:
    """Alpha-blend the colormapped map over an RGB uint8 image."""
    if image.shape[:2] != pmap.values.shape:
        raise DimMismatchError(
            f"image {image.shape[:2]} vs map {pmap.values.shape}"
        )
    idx = np.rint(np.clip(pmap.values, 0.0, 1.0) * 255).astype(np.uint8)
    heat = COLORMAP[idx]
    out = np.rint((1.0 - blend) * image.astype(np.float64) + blend * heat)
    return out.astype(np.uint8)


def render_overlay(
    image_path: str | Path,
    pmap: ProbabilityMap,
    regions: tuple[Polygon, ...] | list[Polygon] = (),
    out_path: str | Path | None = None,
    blend: float = 0.5,
) -> np.ndarray:
    """Blend the map over the source image and outline the GT polygons.

    Returns the rendered RGB array; also writes a PNG when out_path is given.
    """
    with Image.open(image_path) as im:
        src = np.asarray(im.convert("RGB"))
    blended = blend_heatmap(src, pmap, blend)
    canvas = Image.fromarray(blended)
    draw = ImageDraw.Draw(canvas)
    for poly in regions:
        ring = list(poly.vertices) + [poly.vertices[0]]
        draw.line(ring, fill=OUTLINE_COLOR, width=OUTLINE_WIDTH)
    result = np.asarray(canvas)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        canvas.save(out_path, format="PNG")
    return result
