"""Persistence for SeLo maps and stage timings.

A map is stored twice: as a single-precision ``.npy`` array (the exact
values) and as a lossless 16-bit grayscale PNG with
``pixel = round(p * 65535)`` for viewing in image tools. Both forms load
back through this module.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .pipeline import ProbabilityMap, StageTimings

PNG_SCALE = 65535


def save_map(pmap: ProbabilityMap, base: str | Path) -> tuple[Path, Path]:
    """Write ``<base>.npy`` and ``<base>.png``; returns both paths."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    npy_path = base.with_suffix(".npy")
    png_path = base.with_suffix(".png")
    v = pmap.values
    if float(v.max(initial=0.0)) > 1.0:
        raise ValueError("PNG map encoding is defined for values in [0, 1]")
    np.save(npy_path, v)
    encoded = np.round(v.astype(np.float64) * PNG_SCALE).astype(np.uint16)
    Image.fromarray(encoded).save(png_path, format="PNG")
    return npy_path, png_path


def load_map_array(path: str | Path) -> ProbabilityMap:
    """Load the exact float32 map from a ``.npy`` file."""
    values = np.load(path)
    return ProbabilityMap.from_array(values)


def load_map_png(path: str | Path) -> ProbabilityMap:
    """Load the 16-bit PNG form, rescaled back to [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype != np.uint16:
        raise ValueError(f"{path}: expected a 16-bit grayscale PNG, got {arr.dtype}")
    return ProbabilityMap.from_array(arr.astype(np.float32) / PNG_SCALE)


def save_timings(timings: StageTimings, path: str | Path):
    Path(path).write_text(json.dumps(timings.to_dict(), indent=2), encoding="utf-8")


def load_timings(path: str | Path) -> StageTimings:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return StageTimings(**data)
