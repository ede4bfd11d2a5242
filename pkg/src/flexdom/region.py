"""Polygons built from sweep boundaries, and metrics comparing two of them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import shapely

from .sweep import BoundaryPoint, Side

# consecutive vertices closer than this are merged
DUPLICATE_TOL = 1e-12


class RegionError(ValueError):
    pass


@dataclass(frozen=True)
class RegionPolygon:
    """Vertices ``(p_se, q_se)`` in counter-clockwise order, closed implicitly.

    A region without reactive flexibility collapses to a two-vertex segment
    of zero area.
    """

    vertices: np.ndarray  # shape (n, 2)

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def is_segment(self) -> bool:
        return len(self.vertices) < 3

    @property
    def p(self) -> np.ndarray:
        return self.vertices[:, 0]

    @property
    def q(self) -> np.ndarray:
        return self.vertices[:, 1]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of every edge (a segment has one edge)."""
        a = self.vertices
        if self.is_segment:
            return a[:1], a[1:2] if len(a) > 1 else a[:1]
        return a, np.roll(a, -1, axis=0)

    def to_shapely(self):
        if self.is_segment:
            return shapely.LineString(self.vertices) if len(self.vertices) > 1 \
                else shapely.Point(self.vertices[0])
        return shapely.Polygon(self.vertices)


@dataclass(frozen=True)
class RegionMetrics:
    area: float
    hausdorff_vs_ref: float
    sym_diff_area_vs_ref: float
    max_import_p: float
    max_export_p: float


def signed_area(vertices: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    # centring first keeps the shoelace sum well conditioned
    v = v - v.mean(axis=0)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly: RegionPolygon) -> float:
    return abs(signed_area(poly.vertices))


def _orientation(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - \
        (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _on_segment(a, b, c):
    """For collinear a, b, c: does c lie within the bounding box of ab."""
    return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))


def find_crossing(vertices: np.ndarray) -> tuple[int, int] | None:
    """First pair of non-adjacent edges that touch or cross, or None.

    Edge ``i`` joins vertex ``i`` to vertex ``i + 1`` (mod n).
    """
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    if n < 4:
        return None
    a, b = v, np.roll(v, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))  # first and last edge share vertex 0
    i, j = i[keep], j[keep]
    p1, p2, p3, p4 = a[i], b[i], a[j], b[j]
    d1 = _orientation(p3, p4, p1)
    d2 = _orientation(p3, p4, p2)
    d3 = _orientation(p1, p2, p3)
    d4 = _orientation(p1, p2, p4)
    proper = (((d1 > 0) & (d2 < 0)) | ((d1 < 0) & (d2 > 0))) & \
             (((d3 > 0) & (d4 < 0)) | ((d3 < 0) & (d4 > 0)))
    touch = ((d1 == 0) & _on_segment(p3, p4, p1)) | ((d2 == 0) & _on_segment(p3, p4, p2)) | \
            ((d3 == 0) & _on_segment(p1, p2, p3)) | ((d4 == 0) & _on_segment(p1, p2, p4))
    hit = np.flatnonzero(proper | touch)
    if hit.size == 0:
        return None
    return int(i[hit[0]]), int(j[hit[0]])


def _dedupe(v: np.ndarray) -> np.ndarray:
    out = [v[0]]
    for row in v[1:]:
        if np.hypot(*(row - out[-1])) > DUPLICATE_TOL:
            out.append(row)
    if len(out) > 2 and np.hypot(*(out[0] - out[-1])) <= DUPLICATE_TOL:
        out.pop()
    return np.array(out)


def polygon_from_vertices(vertices: Sequence[Sequence[float]]) -> RegionPolygon:
    """Validate a vertex ring and return it counter-clockwise."""
    v = _dedupe(np.asarray(vertices, dtype=float).reshape(-1, 2))
    if len(v) < 3:
        if len(v) == 2:
            return RegionPolygon(v)
        raise RegionError(f"need at least 2 distinct vertices, got {len(v)}")
    crossing = find_crossing(v)
    if crossing is not None:
        i, j = crossing
        n = len(v)
        def edge(k):
            (x0, y0), (x1, y1) = v[k], v[(k + 1) % n]
            return f"edge {k} ({x0:.9g}, {y0:.9g})->({x1:.9g}, {y1:.9g})"
        raise RegionError(f"polygon is not simple: {edge(i)} meets {edge(j)}")
    area = signed_area(v)
    if area == 0.0:
        raise RegionError("polygon has zero area")
    return RegionPolygon(v if area > 0 else v[::-1].copy())


def assemble_polygon(points: Iterable[BoundaryPoint]) -> RegionPolygon:
    """Upper side by ascending q, then lower side by descending q.

    Failed band solves are skipped. A sweep over a single band yields a
    segment.
    """
    points = [pt for pt in points if pt.optimal]
    upper = sorted((pt for pt in points if pt.side == Side.UPPER), key=lambda pt: (pt.q_se, pt.band_index))
    lower = sorted((pt for pt in points if pt.side == Side.LOWER), key=lambda pt: (-pt.q_se, -pt.band_index))
    single_band = {pt.band_index for pt in points} == {1} and len(upper) == len(lower) == 1
    if not single_band and (len(upper) < 2 or len(lower) < 2):
        raise RegionError(
            f"need at least 2 optimal points per side, got {len(upper)} upper and {len(lower)} lower")
    vertices = [(pt.p_se, pt.q_se) for pt in upper + lower]
    return polygon_from_vertices(vertices)


def _point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from every point to the nearest of the segments ``a[k] b[k]``."""
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    denom = np.einsum("kd,kd->k", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, np.einsum("pkd,kd->pk", ap, ab) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.sqrt(((pts[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)


def boundary_distance(poly: RegionPolygon, pts: np.ndarray) -> np.ndarray:
    a, b = poly.edges()
    return _point_segment_distance(np.atleast_2d(np.asarray(pts, dtype=float)), a, b)


def _inside(poly: RegionPolygon, pt: np.ndarray) -> bool:
    """Even-odd ray casting towards +p."""
    if poly.is_segment:
        return False
    a, b = poly.edges()
    x, y = pt
    straddle = (a[:, 1] > y) != (b[:, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    return bool(np.count_nonzero(straddle & (x < x_cross)) % 2)


def contains(poly: RegionPolygon, point: Sequence[float], dilation: float = 0.0) -> bool:
    """Is ``point`` inside the polygon grown outward by ``dilation``."""
    pt = np.asarray(point, dtype=float)
    if _inside(poly, pt):
        return True
    return bool(boundary_distance(poly, pt)[0] <= dilation)


def sample_boundary(poly: RegionPolygon, fraction: float = 0.1) -> np.ndarray:
    """Vertices plus points along every edge at ``fraction`` of the mean edge length."""
    a, b = poly.edges()
    lengths = np.hypot(*(b - a).T)
    step = fraction * lengths.mean() if lengths.size and lengths.mean() > 0 else 0.0
    out = [poly.vertices]
    if step > 0:
        for start, end, length in zip(a, b, lengths):
            k = int(np.ceil(length / step))
            if k > 1:
                t = np.arange(1, k)[:, None] / k
                out.append(start + t * (end - start))
    return np.vstack(out)


def hausdorff(a: RegionPolygon, b: RegionPolygon, fraction: float = 0.1) -> float:
    """Sampled boundary Hausdorff distance; samples are measured against the
    other polygon's exact edges."""
    d_ab = boundary_distance(b, sample_boundary(a, fraction)).max()
    d_ba = boundary_distance(a, sample_boundary(b, fraction)).max()
    return float(max(d_ab, d_ba))


def symmetric_difference_area(a: RegionPolygon, b: RegionPolygon) -> float:
    return float(a.to_shapely().symmetric_difference(b.to_shapely()).area)


def compare(poly: RegionPolygon, reference: RegionPolygon, fraction: float = 0.1) -> RegionMetrics:
    return RegionMetrics(
        area=polygon_area(poly),
        hausdorff_vs_ref=hausdorff(poly, reference, fraction),
        sym_diff_area_vs_ref=symmetric_difference_area(poly, reference),
        max_import_p=float(poly.p.max()),
        max_export_p=float(poly.p.min()),
    )
