"""SeLo map generation: tile planning, score stacking, smoothing, normalize.

The pipeline turns one (image, query) pair into a pixel-level probability
map in four timed stages: Cut (tile planning), Sim (per-tile similarity via
a scorer), Gnt (pixel-level stacking of tile scores), Flt (median filtering
plus normalization).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import NoApplicableScaleError, UncoveredPixelError

log = logging.getLogger(__name__)

DEFAULT_SCALES = (256, 512, 768)
DEFAULT_OFFSETS = (0.0, 0.5)


@dataclass(frozen=True)
class Tile:
    """One sliding-window slice; (x0, y0) is the top-left pixel."""

    x0: int
    y0: int
    side: int
    scale_index: int
    offset_index: int


@dataclass(frozen=True)
class RasterRef:
    """Reference to an input raster: a path plus its pixel dimensions."""

    path: str | None
    height: int
    width: int

    @classmethod
    def from_file(cls, path: str | Path) -> "RasterRef":
        from PIL import Image

        with Image.open(path) as im:
            width, height = im.size
        return cls(path=str(path), height=height, width=width)


@dataclass(eq=False)
class ProbabilityMap:
    """H x W grid of finite nonnegative reals (float32)."""

    values: np.ndarray
    degenerate: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values: np.ndarray, degenerate: bool = False,
                   validate: bool = True) -> "ProbabilityMap":
        arr = np.ascontiguousarray(values, dtype=np.float32)
        if arr is values:
            arr = arr.copy()  # own the buffer before freezing it
        if arr.ndim != 2:
            raise ValueError(f"map must be 2-D, got shape {arr.shape}")
        if validate:
            if not np.isfinite(arr).all():
                raise ValueError("map contains non-finite values")
            if (arr < 0).any():
                raise ValueError("map contains negative values")
        arr.flags.writeable = False
        return cls(values=arr, degenerate=degenerate)


@dataclass(frozen=True)
class PipelineConfig:
    scales: tuple[int, ...] = DEFAULT_SCALES
    offsets: tuple[float, ...] = DEFAULT_OFFSETS
    median_kernel: int | str = "auto"

    def __post_init__(self):
        if not self.scales:
            raise ValueError("scales must be nonempty")
        if any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if not self.offsets:
            raise ValueError("offsets must be nonempty")
        if any(not (0.0 <= f < 1.0) for f in self.offsets):
            raise ValueError(f"offsets must lie in [0, 1), got {self.offsets}")
        if 0.0 not in self.offsets:
            raise ValueError("offsets must contain 0 to guarantee coverage")
        if self.median_kernel != "auto":
            k = self.median_kernel
            if not isinstance(k, int) or k < 1 or k % 2 == 0:
                raise ValueError(
                    f"median_kernel must be an odd int >= 1 or 'auto', got {k!r}"
                )


@dataclass
class StageTimings:
    """Wall-clock seconds per stage; total is measured independently."""

    cut_s: float = 0.0
    sim_s: float = 0.0
    gnt_s: float = 0.0
    flt_s: float = 0.0
    total_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "cut_s": self.cut_s,
            "sim_s": self.sim_s,
            "gnt_s": self.gnt_s,
            "flt_s": self.flt_s,
            "total_s": self.total_s,
        }


def auto_median_kernel(height: int, width: int) -> int:
    """Size-relative smoothing kernel: 2% of the short side, odd, >= 3."""
    target = 0.02 * min(height, width)
    k = 2 * round((target - 1) / 2) + 1
    k = max(3, k)
    largest_odd = min(height, width) if min(height, width) % 2 == 1 else min(height, width) - 1
    return max(1, min(k, largest_odd))


def plan_tiles(height: int, width: int, config: PipelineConfig) -> list[Tile]:
    """Enumerate the multi-scale, multi-offset tile grid.

    At offset 0 the last row/column is clamped so tiles touch the image
    edge (full coverage); at fractional offsets only fully contained tiles
    are kept. Scales larger than the short image side are skipped with a
    warning; duplicate rectangles are dropped.
    """
    applicable = [s for s in config.scales if s <= min(height, width)]
    skipped = [s for s in config.scales if s > min(height, width)]
    if not applicable:
        raise NoApplicableScaleError(
            f"image {height}x{width} is smaller than every scale "
            f"{config.scales}"
        )
    for s in skipped:
        log.warning(
            "scale %d exceeds image short side (%dx%d); skipping",
            s, height, width,
        )

    tiles: list[Tile] = []
    seen: set[tuple[int, int, int]] = set()
    for si, side in enumerate(config.scales):
        if side not in applicable:
            continue
        for oi, frac in enumerate(config.offsets):
            base = round(frac * side)
            xs = _axis_origins(base, side, width, clamp=frac == 0.0)
            ys = _axis_origins(base, side, height, clamp=frac == 0.0)
            for y0 in ys:
                for x0 in xs:
                    key = (x0, y0, side)
                    if key in seen:
                        continue
                    seen.add(key)
                    tiles.append(Tile(x0=x0, y0=y0, side=side,
                                      scale_index=si, offset_index=oi))
    return tiles


def _axis_origins(base: int, side: int, extent: int, clamp: bool) -> list[int]:
    origins = list(range(base, extent - side + 1, side))
    if clamp:
        last = extent - side
        if not origins or origins[-1] != last:
            origins.append(last)
    return origins


def stack_similarities(
    tiles: list[Tile], scores, height: int, width: int
) -> ProbabilityMap:
    """Per-pixel mean of the scores of all covering tiles.

    Negative scores are clamped to 0 before stacking so the raw map is a
    nonnegative mass. Raises if any pixel has no covering tile.
    """
    scores = np.asarray(scores, dtype=np.float32)
    if scores.ndim != 1 or scores.shape[0] != len(tiles):
        raise ValueError(
            f"need one score per tile: {len(tiles)} tiles, "
            f"{scores.shape} scores"
        )
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    scores = np.maximum(scores, np.float32(0.0))

    x0 = np.array([t.x0 for t in tiles], np.int64)
    y0 = np.array([t.y0 for t in tiles], np.int64)
    side = np.array([t.side for t in tiles], np.int64)
    if len(tiles):
        if (x0 < 0).any() or (y0 < 0).any() or (x0 + side > width).any() \
           or (y0 + side > height).any():
            raise ValueError("tile outside image bounds")
    acc, cnt = kernels.accumulate_tiles(height, width, x0, y0, side, scores)
    if (cnt == 0).any():
        n = int((cnt == 0).sum())
        raise UncoveredPixelError(f"{n} pixels are covered by no tile")
    values = acc / cnt
    return ProbabilityMap.from_array(values, validate=False)


def median_filter(pmap: ProbabilityMap, kernel: int) -> ProbabilityMap:
    """Median smoothing with reflect padding; kernel 1 is the identity."""
    if not isinstance(kernel, int) or kernel % 2 == 0 or kernel < 1:
        raise ValueError(f"median kernel must be an odd int >= 1, got {kernel}")
    if kernel > min(pmap.height, pmap.width):
        raise ValueError(
            f"median kernel {kernel} exceeds map short side "
            f"{min(pmap.height, pmap.width)}"
        )
    out = kernels.median_filter_2d(pmap.values, kernel)
    return ProbabilityMap.from_array(out, validate=False)


def normalize(pmap: ProbabilityMap) -> tuple[ProbabilityMap, bool]:
    """Min-max normalize to [0, 1]; a constant map becomes zeros + flag."""
    v = pmap.values
    lo = float(v.min())
    hi = float(v.max())
    if hi == lo:
        out = np.zeros_like(v)
        return ProbabilityMap.from_array(out, degenerate=True, validate=False), True
    out = (v - np.float32(lo)) / (np.float32(hi) - np.float32(lo))
    return ProbabilityMap.from_array(out, validate=False), False


def generate_selo_map(
    image, query: str, scorer, config: PipelineConfig | None = None
) -> tuple[ProbabilityMap, StageTimings]:
    """Run the full pipeline for one query against one raster.

    ``image`` may be a RasterRef or a path; ``scorer`` is any object with a
    ``score_tiles(query, tiles, image)`` method returning one finite float
    per tile.
    """
    if config is None:
        config = PipelineConfig()
    if not isinstance(image, RasterRef):
        image = RasterRef.from_file(image)

    t_start = time.perf_counter()

    t0 = time.perf_counter()
    tiles = plan_tiles(image.height, image.width, config)
    cut_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    scores = scorer.score_tiles(query, tiles, image)
    sim_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    raw = stack_similarities(tiles, scores, image.height, image.width)
    gnt_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    kernel = config.median_kernel
    if kernel == "auto":
        kernel = auto_median_kernel(image.height, image.width)
    smoothed = median_filter(raw, kernel)
    result, _ = normalize(smoothed)
    flt_s = time.perf_counter() - t0

    timings = StageTimings(
        cut_s=cut_s,
        sim_s=sim_s,
        gnt_s=gnt_s,
        flt_s=flt_s,
        total_s=time.perf_counter() - t_start,
    )
    return result, timings
