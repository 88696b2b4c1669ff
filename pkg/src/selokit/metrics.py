"""Indicators for scoring a SeLo map against ground-truth regions.

Four numbers summarize a map: the significant area proportion (probability
mass inside vs. outside the GT regions, size-normalized), the attention
shift distance (how far thresholded local maxima sit from each region
center, in candidate-radius units; lower is better), the discrete attention
distance (attention compactness from point count and spread; higher is
better), and their weighted mean indicator.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .annotations import GtRegionContext, TestCase, build_region_context
from .errors import DimMismatchError, EmptyGtError
from .pipeline import ProbabilityMap, StageTimings

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricParams:
    """Indicator hyperparameters; defaults are the published operating point."""

    alpha: float = 0.694
    eps: float = 1e-7
    expansion: float = 1.5
    beta: float = 3.0
    eta: float = 0.5
    rho: float = 0.5
    nms_window: int = 5
    w_su: float = 0.4
    w_as: float = 0.35
    w_da: float = 0.25

    def __post_init__(self):
        for name in ("alpha", "expansion", "beta", "eta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError(
                f"nms_window must be an odd int >= 3, got {self.nms_window}"
            )
        weights = (self.w_su, self.w_as, self.w_da)
        if any(w < 0 for w in weights):
            raise ValueError("weights must be nonnegative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {weights}")

    @classmethod
    def from_dict(cls, data: dict) -> "MetricParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown metric parameters: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class AttentionPoint:
    """A thresholded local maximum of the map, in pixel-center coordinates."""

    x: float
    y: float
    prob: float


@dataclass(frozen=True)
class RegionDiagnostics:
    point_count: int
    offset: float          # mean normalized shift from the GT center
    divergence: float | None  # normalized spread around the cluster center


@dataclass
class SeLoScores:
    case_id: str
    r_su: float
    r_as: float
    r_da: float
    r_mi: float
    regions: list[RegionDiagnostics] = field(default_factory=list)
    degenerate: bool = False
    timings: StageTimings | None = None

    def to_dict(self) -> dict:
        out = {
            "case_id": self.case_id,
            "r_su": self.r_su,
            "r_as": self.r_as,
            "r_da": self.r_da,
            "r_mi": self.r_mi,
            "degenerate": self.degenerate,
            "regions": [
                {
                    "point_count": r.point_count,
                    "offset": r.offset,
                    "divergence": r.divergence,
                }
                for r in self.regions
            ],
        }
        if self.timings is not None:
            out["timings"] = self.timings.to_dict()
        return out


def _values(pmap) -> np.ndarray:
    return pmap.values if isinstance(pmap, ProbabilityMap) else np.asarray(pmap)


def compute_rsu(pmap, masks, params: MetricParams | None = None) -> float:
    """Significant area proportion.

    Mass ratio between the GT union and the rest of the map, multiplied by
    the non-GT/GT pixel-area ratio so the indicator is image-size free, then
    squashed by 1 - exp(-alpha * ratio). Overlapping masks are unioned so
    each pixel is counted once.
    """
    params = params or MetricParams()
    v = _values(pmap)
    union = np.zeros(v.shape, bool)
    for mask in masks:
        if mask.shape != v.shape:
            raise DimMismatchError(
                f"mask shape {mask.shape} != map shape {v.shape}"
            )
        union |= mask.astype(bool)
    gt_area = int(union.sum())
    if gt_area == 0:
        raise EmptyGtError("GT union covers no pixel")
    total_area = v.shape[0] * v.shape[1]
    gt_mass = float(v.sum(dtype=np.float64, where=union))
    all_mass = float(v.sum(dtype=np.float64))
    t_l = gt_mass / (all_mass - gt_mass + params.eps)
    t_r = (total_area - gt_area) / gt_area
    if t_r == 0.0:
        log.warning("GT union covers the whole image; significance ratio is 0")
    return min(1.0, 1.0 - math.exp(-params.alpha * t_l * t_r))


def find_local_maxima(
    values: np.ndarray, window: int, min_value: float | None = None
) -> list[AttentionPoint]:
    """Local maxima with plateau collapse.

    A pixel is a candidate when it equals the maximum of its window x window
    neighborhood (clipped at borders). Connected equal-valued candidates
    (8-connectivity) collapse to a single point at their centroid. Points
    are reported in row-major order of each plateau's first pixel, with x, y
    in pixel-center coordinates (column + 0.5, row + 0.5).
    """
    mask = kernels.window_max_mask(values, window)
    if min_value is not None:
        mask &= values > min_value
    if not mask.any():
        return []
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), bool))
    keyed = []
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = np.nonzero(labels[sl] == sl_idx)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        x = float(cols.sum()) / cols.size + 0.5
        y = float(rows.sum()) / rows.size + 0.5
        prob = float(values[rows[0], cols[0]])
        keyed.append(((int(rows[0]), int(cols[0])),
                      AttentionPoint(x=x, y=y, prob=prob)))
    keyed.sort(key=lambda item: item[0])
    return [p for _, p in keyed]


def detect_attention(
    pmap, context: GtRegionContext, params: MetricParams | None = None
) -> list[AttentionPoint]:
    """Attention points of one region: thresholded local maxima inside the
    candidate disk around the region center."""
    params = params or MetricParams()
    v = _values(pmap)
    cx, cy = context.center
    r = context.candidate_radius
    out = []
    for p in find_local_maxima(v, params.nms_window, min_value=params.rho):
        if math.hypot(p.x - cx, p.y - cy) <= r:
            out.append(p)
    return out


def _region_offset(points, context) -> float:
    if not points:
        return 1.0
    cx, cy = context.center
    total = sum(math.hypot(p.x - cx, p.y - cy) for p in points)
    off = total / (len(points) * context.candidate_radius)
    return min(off, 1.0)


def compute_ras(per_region_attention, contexts, params: MetricParams | None = None) -> float:
    """Attention shift distance over all regions (0 best, 1 worst).

    Each region contributes the mean distance of its attention points from
    the region center in candidate-radius units (1.0 when it attracted no
    attention), passed through the exponential sharpening
    (e^(off*beta) - 1) / (e^beta - 1) and averaged.
    """
    params = params or MetricParams()
    if not contexts:
        raise ValueError("need >= 1 region")
    denom = math.exp(params.beta) - 1.0
    acc = 0.0
    for points, ctx in zip(per_region_attention, contexts, strict=True):
        off = _region_offset(points, ctx)
        acc += (math.exp(off * params.beta) - 1.0) / denom
    return acc / len(contexts)


def _region_divergence(points, context) -> float:
    cx = sum(p.x for p in points) / len(points)
    cy = sum(p.y for p in points) / len(points)
    total = sum(math.hypot(p.x - cx, p.y - cy) for p in points)
    return total / (len(points) * context.candidate_radius)


def compute_rda(per_region_attention, contexts, params: MetricParams | None = None) -> float:
    """Discrete attention distance over all regions (1 best, 0 worst).

    Per region: no attention scores 0; exactly one point scores 1; with
    ell >= 2 points the score is ((1 - spread) + exp(-eta*(ell + 2))) / 2,
    where spread is the mean distance to the points' own centroid in
    candidate-radius units. Region scores are averaged.
    """
    params = params or MetricParams()
    if not contexts:
        raise ValueError("need >= 1 region")
    acc = 0.0
    for points, ctx in zip(per_region_attention, contexts, strict=True):
        ell = len(points)
        if ell == 0:
            r = 0.0
        elif ell == 1:
            r = 1.0
        else:
            d_pd = _region_divergence(points, ctx)
            r = ((1.0 - d_pd) + math.exp(-params.eta * (ell + 2))) / 2.0
            r = min(1.0, max(0.0, r))
        acc += r
    return acc / len(contexts)


def compute_rmi(r_su: float, r_as: float, r_da: float,
                params: MetricParams | None = None) -> float:
    """Weighted mean indicator: w_su*R_su + w_as*(1 - R_as) + w_da*R_da."""
    params = params or MetricParams()
    return params.w_su * r_su + params.w_as * (1.0 - r_as) + params.w_da * r_da


def evaluate_case(pmap, case: TestCase, params: MetricParams | None = None,
                  contexts: list[GtRegionContext] | None = None) -> SeLoScores:
    """All four indicators for one map against one test case.

    Contexts are built from the case's polygons at the map's dimensions
    unless supplied precomputed.
    """
    params = params or MetricParams()
    pm = pmap if isinstance(pmap, ProbabilityMap) else ProbabilityMap.from_array(pmap)
    if contexts is None:
        contexts = [
            build_region_context(poly, pm.height, pm.width, params.expansion)
            for poly in case.regions
        ]
    attention = [detect_attention(pm, ctx, params) for ctx in contexts]
    r_su = compute_rsu(pm, [c.mask for c in contexts], params)
    r_as = compute_ras(attention, contexts, params)
    r_da = compute_rda(attention, contexts, params)
    r_mi = compute_rmi(r_su, r_as, r_da, params)
    diagnostics = []
    for points, ctx in zip(attention, contexts):
        diagnostics.append(
            RegionDiagnostics(
                point_count=len(points),
                offset=_region_offset(points, ctx),
                divergence=_region_divergence(points, ctx)
                if len(points) >= 2
                else None,
            )
        )
    return SeLoScores(
        case_id=case.case_id,
        r_su=r_su,
        r_as=r_as,
        r_da=r_da,
        r_mi=r_mi,
        regions=diagnostics,
        degenerate=pm.degenerate,
    )


@dataclass
class AggregateScores:
    case_count: int
    r_su: float
    r_as: float
    r_da: float
    r_mi: float

    def to_dict(self) -> dict:
        return {
            "case_count": self.case_count,
            "r_su": self.r_su,
            "r_as": self.r_as,
            "r_da": self.r_da,
            "r_mi": self.r_mi,
        }


def aggregate(scores: list[SeLoScores]) -> AggregateScores:
    """Unweighted arithmetic mean of each indicator across cases."""
    if not scores:
        raise ValueError("cannot aggregate zero cases")
    n = len(scores)
    return AggregateScores(
        case_count=n,
        r_su=sum(s.r_su for s in scores) / n,
        r_as=sum(s.r_as for s in scores) / n,
        r_da=sum(s.r_da for s in scores) / n,
        r_mi=sum(s.r_mi for s in scores) / n,
    )
