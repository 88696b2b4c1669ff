"""Test manifests and ground-truth region geometry.

A manifest is a UTF-8 JSON document:

.. code-block:: json

    {"version": 1,
     "images": [{"file": "scene.png", "height": 2048, "width": 2048,
                 "cases": [{"id": "c1", "query": "text ...",
                            "regions": [[[x, y], [x, y], [x, y]]]}]}]}

Coordinates are zero-based pixel reals, x along columns and y along rows.
Regions are open vertex rings in drawing order (do not repeat the first
vertex); vertices may lie anywhere in ``0 <= x <= width``,
``0 <= y <= height``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    DegeneratePolygonError,
    EmptyMaskError,
    ManifestError,
    SchemaError,
    VertexOutOfBoundsError,
)

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given as an open ring of (x, y) pixel coordinates."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        m = len(self.vertices)
        if m < 3:
            raise DegeneratePolygonError(f"polygon needs >= 3 vertices, got {m}")
        for i in range(m):
            if self.vertices[i] == self.vertices[(i + 1) % m]:
                raise DegeneratePolygonError(
                    f"consecutive duplicate vertex at index {i} "
                    "(rings are open; do not repeat the first vertex)"
                )
        if self.area() <= 0.0:
            raise DegeneratePolygonError("polygon encloses zero area")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    def area(self) -> float:
        """Enclosed area by the shoelace formula (orientation-independent)."""
        acc = 0.0
        m = len(self.vertices)
        for i in range(m):
            x0, y0 = self.vertices[i]
            x1, y1 = self.vertices[(i + 1) % m]
            acc += x0 * y1 - x1 * y0
        return abs(acc) / 2.0

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(tuple((x + dx, y + dy) for x, y in self.vertices))


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # despite the name, not a pytest class

    case_id: str
    query: str
    regions: tuple[Polygon, ...]

    def __post_init__(self):
        if not self.regions:
            raise ManifestError(f"case {self.case_id!r} has no regions")
        if not self.query.split():
            raise ManifestError(f"case {self.case_id!r} has an empty query")


@dataclass(frozen=True)
class ImageEntry:
    file: str
    height: int
    width: int
    cases: tuple[TestCase, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ManifestError(
                f"image {self.file!r} has non-positive dimensions "
                f"{self.height}x{self.width}"
            )


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ImageEntry, ...]

    def case_count(self) -> int:
        return sum(len(e.cases) for e in self.entries)

    def iter_cases(self):
        """Yield (ImageEntry, TestCase) pairs in manifest order."""
        for entry in self.entries:
            for case in entry.cases:
                yield entry, case


@dataclass(frozen=True, eq=False)
class GtRegionContext:
    """One ground-truth region prepared for metric evaluation."""

    mask: np.ndarray  # bool, same dims as the map
    center: tuple[float, float]
    candidate_radius: float
    polygon: Polygon


def region_center(polygon: Polygon) -> tuple[float, float]:
    """Arithmetic mean of the vertices (vertex centroid, not area centroid)."""
    m = polygon.vertex_count
    cx = sum(x for x, _ in polygon.vertices) / m
    cy = sum(y for _, y in polygon.vertices) / m
    return cx, cy


def candidate_radius(polygon: Polygon, expansion: float = 1.5) -> float:
    """Mean vertex-to-center distance scaled by the expansion factor."""
    if expansion <= 0:
        raise ValueError(f"expansion must be > 0, got {expansion}")
    cx, cy = region_center(polygon)
    total = sum(math.hypot(x - cx, y - cy) for x, y in polygon.vertices)
    return expansion * total / polygon.vertex_count


def rasterize_region(polygon: Polygon, height: int, width: int) -> np.ndarray:
    """Binary mask of pixels whose center falls inside the polygon.

    Even-odd fill sampled at pixel centers (c + 0.5, r + 0.5); centers on the
    boundary are included. Raises EmptyMaskError if no pixel center is
    covered, which marks the region as unusable ground truth.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"mask dims must be positive, got {height}x{width}")
    xs = np.array([x for x, _ in polygon.vertices], np.float64)
    ys = np.array([y for _, y in polygon.vertices], np.float64)
    mask = kernels.polygon_cover_mask(xs, ys, height, width)
    if not mask.any():
        raise EmptyMaskError(
            "polygon covers no pixel center (thinner than one pixel)"
        )
    return mask


def build_region_context(
    polygon: Polygon, height: int, width: int, expansion: float = 1.5
) -> GtRegionContext:
    """Rasterize a region and precompute its center and candidate radius."""
    return GtRegionContext(
        mask=rasterize_region(polygon, height, width),
        center=region_center(polygon),
        candidate_radius=candidate_radius(polygon, expansion),
        polygon=polygon,
    )


def _require(cond: bool, location: str, message: str):
    if not cond:
        raise SchemaError(f"{location}: {message}")


def _parse_polygon(raw, location: str, width: int, height: int) -> Polygon:
    _require(isinstance(raw, list), location, "region must be a vertex list")
    if len(raw) < 3:
        raise DegeneratePolygonError(
            f"{location}: polygon needs >= 3 vertices, got {len(raw)}"
        )
    verts = []
    for j, pt in enumerate(raw):
        loc = f"{location}[{j}]"
        _require(
            isinstance(pt, list) and len(pt) == 2, loc, "vertex must be [x, y]"
        )
        x, y = pt
        _require(
            isinstance(x, (int, float)) and isinstance(y, (int, float)),
            loc,
            "vertex coordinates must be numbers",
        )
        x, y = float(x), float(y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise SchemaError(f"{loc}: vertex coordinates must be finite")
        if not (0.0 <= x <= width and 0.0 <= y <= height):
            raise VertexOutOfBoundsError(
                f"{loc}: vertex ({x}, {y}) outside image bounds "
                f"{width}x{height}"
            )
        verts.append((x, y))
    try:
        return Polygon(tuple(verts))
    except DegeneratePolygonError as exc:
        raise DegeneratePolygonError(f"{location}: {exc}") from exc


def _parse_case(raw, location: str, width: int, height: int) -> TestCase:
    _require(isinstance(raw, dict), location, "case must be an object")
    for key in ("id", "query", "regions"):
        _require(key in raw, location, f"missing field {key!r}")
    _require(isinstance(raw["id"], str) and raw["id"], location, "'id' must be a nonempty string")
    _require(isinstance(raw["query"], str), location, "'query' must be a string")
    _require(
        isinstance(raw["regions"], list) and raw["regions"],
        location,
        "'regions' must be a nonempty list",
    )
    regions = tuple(
        _parse_polygon(r, f"{location}.regions[{k}]", width, height)
        for k, r in enumerate(raw["regions"])
    )
    if not raw["query"].split():
        raise SchemaError(f"{location}.query: query must contain a word")
    return TestCase(case_id=raw["id"], query=raw["query"], regions=regions)


def _parse_entry(raw, location: str) -> ImageEntry:
    _require(isinstance(raw, dict), location, "image entry must be an object")
    for key in ("file", "height", "width", "cases"):
        _require(key in raw, location, f"missing field {key!r}")
    _require(isinstance(raw["file"], str) and raw["file"], location, "'file' must be a nonempty string")
    for key in ("height", "width"):
        _require(
            isinstance(raw[key], int) and not isinstance(raw[key], bool),
            location,
            f"'{key}' must be an integer",
        )
        _require(raw[key] > 0, location, f"'{key}' must be positive")
    _require(isinstance(raw["cases"], list), location, "'cases' must be a list")
    cases = tuple(
        _parse_case(c, f"{location}.cases[{k}]", raw["width"], raw["height"])
        for k, c in enumerate(raw["cases"])
    )
    return ImageEntry(
        file=raw["file"], height=raw["height"], width=raw["width"], cases=cases
    )


def load_manifest(path: str | Path) -> Manifest:
    """Load and fully validate a manifest file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return parse_manifest(doc)


def parse_manifest(doc) -> Manifest:
    """Validate an already-decoded manifest document."""
    _require(isinstance(doc, dict), "$", "top level must be an object")
    _require("version" in doc, "$", "missing field 'version'")
    _require(
        doc["version"] == MANIFEST_VERSION,
        "$.version",
        f"unsupported version {doc['version']!r} (expected {MANIFEST_VERSION})",
    )
    _require("images" in doc, "$", "missing field 'images'")
    _require(isinstance(doc["images"], list), "$.images", "must be a list")
    entries = tuple(
        _parse_entry(e, f"$.images[{i}]") for i, e in enumerate(doc["images"])
    )
    seen: dict[str, str] = {}
    for i, entry in enumerate(entries):
        for k, case in enumerate(entry.cases):
            loc = f"$.images[{i}].cases[{k}].id"
            if case.case_id in seen:
                raise SchemaError(
                    f"{loc}: duplicate case id {case.case_id!r} "
                    f"(first used at {seen[case.case_id]}); map files are "
                    "keyed by case id"
                )
            seen[case.case_id] = loc
    return Manifest(entries=entries)


def manifest_to_dict(manifest: Manifest) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "images": [
            {
                "file": e.file,
                "height": e.height,
                "width": e.width,
                "cases": [
                    {
                        "id": c.case_id,
                        "query": c.query,
                        "regions": [
                            [[x, y] for x, y in p.vertices] for p in c.regions
                        ],
                    }
                    for c in e.cases
                ],
            }
            for e in manifest.entries
        ],
    }


def save_manifest(manifest: Manifest, path: str | Path):
    Path(path).write_text(
        json.dumps(manifest_to_dict(manifest), indent=2), encoding="utf-8"
    )


@dataclass(frozen=True)
class ManifestStats:
    sample_count: int
    image_count: int
    word_count: int
    mean_query_length: float
    mean_regions_per_case: float
    mean_attention_ratio: float

    def to_dict(self) -> dict:
        return {
            "sample_number": self.sample_count,
            "image_number": self.image_count,
            "word_number": self.word_count,
            "caption_ave_length": self.mean_query_length,
            "ave_region_number": self.mean_regions_per_case,
            "ave_attention_ratio": self.mean_attention_ratio,
        }


def manifest_stats(manifest: Manifest) -> ManifestStats:
    """Dataset statistics: counts, query lengths, region density, GT cover.

    The attention ratio of a case is the summed pixel area of its regions
    over the image area; regions too thin to cover a pixel center count 0.
    """
    cases = list(manifest.iter_cases())
    if not cases:
        raise ManifestError("manifest has no cases")
    vocab: set[str] = set()
    query_len_total = 0
    regions_total = 0
    ratio_total = 0.0
    for entry, case in cases:
        words = case.query.split()
        vocab.update(w.lower() for w in words)
        query_len_total += len(words)
        regions_total += len(case.regions)
        covered = 0
        for poly in case.regions:
            try:
                covered += int(rasterize_region(poly, entry.height, entry.width).sum())
            except EmptyMaskError:
                pass
        ratio_total += covered / (entry.height * entry.width)
    n = len(cases)
    return ManifestStats(
        sample_count=n,
        image_count=len(manifest.entries),
        word_count=len(vocab),
        mean_query_length=query_len_total / n,
        mean_regions_per_case=regions_total / n,
        mean_attention_ratio=ratio_total / n,
    )
