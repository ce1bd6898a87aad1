"""Pairwise sector-overlap features: interference area, distance, and centric.

Sectors are circular wedges of fixed 10 km radius anchored at the cell
position and carrying the antenna's horizontal beamwidth. Overlaps are
integrated on a deterministic, origin-anchored square lattice so that every
caller (per-pair or batched) sees the identical point set.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import Cell

COVERAGE_RADIUS_M = 10_000.0
DEFAULT_GRID_STEP_M = 50.0


@dataclass(frozen=True)
class Sector:
    apex_x: float
    apex_y: float
    azimuth_deg: float
    half_angle_deg: float
    radius_m: float = COVERAGE_RADIUS_M

    def __post_init__(self) -> None:
        if not 0.0 < self.half_angle_deg < 90.0:
            raise ValueError(f"half_angle_deg {self.half_angle_deg} not in (0, 90)")


@dataclass(frozen=True)
class GeomFeatures:
    """Edge-level geometric summary plus its normalized pretext targets.

    ia is the Jaccard fraction of the two sectors' footprints, id_m the mean
    distance from either apex to the overlap region, ic its centroid (None for
    empty overlaps). Targets are oriented so that stronger interference maps
    to larger values.
    """

    ia: float
    id_m: float
    ic: tuple[float, float] | None
    target_ia: float
    target_id: float


def sector_from_cell(cell: Cell) -> Sector:
    return Sector(cell.x, cell.y, cell.azimuth_deg, cell.h_beamwidth_deg / 2.0)


def sector_area(s: Sector) -> float:
    """Closed-form wedge area."""
    return (2.0 * s.half_angle_deg / 360.0) * math.pi * s.radius_m**2


def _wrap_deg(a):
    return (a + 180.0) % 360.0 - 180.0


def in_sector(s: Sector, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    dx = px - s.apex_x
    dy = py - s.apex_y
    within_radius = dx * dx + dy * dy <= s.radius_m**2
    bearing = np.degrees(np.arctan2(dx, dy))
    return within_radius & (np.abs(_wrap_deg(bearing - s.azimuth_deg)) <= s.half_angle_deg)


def sector_bbox(s: Sector) -> tuple[float, float, float, float]:
    """Tight axis-aligned bbox: apex, arc endpoints, and axis-crossing arc points."""
    angles = [s.azimuth_deg - s.half_angle_deg, s.azimuth_deg + s.half_angle_deg]
    for axis in (0.0, 90.0, 180.0, 270.0):
        if abs(_wrap_deg(axis - s.azimuth_deg)) <= s.half_angle_deg:
            angles.append(axis)
    xs = [s.apex_x] + [s.apex_x + s.radius_m * math.sin(math.radians(a)) for a in angles]
    ys = [s.apex_y] + [s.apex_y + s.radius_m * math.cos(math.radians(a)) for a in angles]
    return min(xs), min(ys), max(xs), max(ys)


def _lattice_axis(lo: float, hi: float, step: float) -> np.ndarray:
    """Origin-anchored half-step lattice coordinates covering [lo, hi]."""
    k_min = math.ceil(lo / step - 0.5)
    k_max = math.floor(hi / step - 0.5)
    if k_max < k_min:
        return np.empty(0, dtype=np.float64)
    return (np.arange(k_min, k_max + 1, dtype=np.float64) + 0.5) * step


def _lattice_points(bbox: tuple[float, float, float, float], step: float) -> tuple[np.ndarray, np.ndarray]:
    xs = _lattice_axis(bbox[0], bbox[2], step)
    ys = _lattice_axis(bbox[1], bbox[3], step)
    if xs.size == 0 or ys.size == 0:
        return np.empty(0), np.empty(0)
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


def sector_sample_count(s: Sector, grid_step_m: float = DEFAULT_GRID_STEP_M) -> int:
    px, py = _lattice_points(sector_bbox(s), grid_step_m)
    if px.size == 0:
        return 0
    return int(np.count_nonzero(in_sector(s, px, py)))


def _bbox_intersection(a, b):
    lo_x, lo_y = max(a[0], b[0]), max(a[1], b[1])
    hi_x, hi_y = min(a[2], b[2]), min(a[3], b[3])
    if lo_x > hi_x or lo_y > hi_y:
        return None
    return lo_x, lo_y, hi_x, hi_y


def _overlap_stats(si: Sector, sj: Sector, grid_step_m: float):
    """(count, mean dist from i, mean dist from j, centroid) over the overlap lattice."""
    bbox = _bbox_intersection(sector_bbox(si), sector_bbox(sj))
    if bbox is None:
        return 0, 0.0, 0.0, None
    px, py = _lattice_points(bbox, grid_step_m)
    if px.size == 0:
        return 0, 0.0, 0.0, None
    inside = in_sector(si, px, py) & in_sector(sj, px, py)
    count = int(np.count_nonzero(inside))
    if count == 0:
        return 0, 0.0, 0.0, None
    ox, oy = px[inside], py[inside]
    mean_i = float(np.mean(np.hypot(ox - si.apex_x, oy - si.apex_y)))
    mean_j = float(np.mean(np.hypot(ox - sj.apex_x, oy - sj.apex_y)))
    return count, mean_i, mean_j, (float(np.mean(ox)), float(np.mean(oy)))


def sector_overlap(si: Sector, sj: Sector, grid_step_m: float = DEFAULT_GRID_STEP_M):
    """Overlap area (m^2), mean distance from si's apex, and overlap centroid.

    Returns (0.0, 0.0, None) when no lattice point lies inside both sectors.
    """
    if grid_step_m <= 0:
        raise ValueError("grid_step_m must be positive")
    count, mean_i, _, centroid = _overlap_stats(si, sj, grid_step_m)
    return count * grid_step_m**2, mean_i, centroid


def edge_geometry(ci: Cell, cj: Cell, grid_step_m: float = DEFAULT_GRID_STEP_M) -> GeomFeatures:
    """Symmetric geometric features for the cell pair (ci, cj).

    The Jaccard fraction uses per-sector sample counts from the same lattice,
    so identical sectors give exactly 1 and the ratio always lands in [0, 1].
    """
    if ci.cell_id == cj.cell_id:
        raise ValueError("edge geometry requires two distinct cells")
    si, sj = sector_from_cell(ci), sector_from_cell(cj)
    count, mean_i, mean_j, centroid = _overlap_stats(si, sj, grid_step_m)
    ni = sector_sample_count(si, grid_step_m)
    nj = sector_sample_count(sj, grid_step_m)
    return _features_from_counts(count, ni, nj, mean_i, mean_j, centroid,
                                 max(si.radius_m, sj.radius_m))


def _features_from_counts(count, ni, nj, mean_i, mean_j, centroid, radius) -> GeomFeatures:
    if count == 0:
        return GeomFeatures(ia=0.0, id_m=0.0, ic=None, target_ia=0.0, target_id=0.0)
    ia = count / (ni + nj - count)
    id_m = 0.5 * (mean_i + mean_j)
    return GeomFeatures(
        ia=min(max(ia, 0.0), 1.0),
        id_m=id_m,
        ic=centroid,
        target_ia=min(max(ia, 0.0), 1.0),
        target_id=min(max(1.0 - id_m / radius, 0.0), 1.0),
    )


def batch_edge_geometry(
    cells: list[Cell], grid_step_m: float = DEFAULT_GRID_STEP_M,
    max_membership_bytes: int = 400_000_000,
) -> dict[tuple[int, int], GeomFeatures]:
    """GeomFeatures for every unordered cell pair with a nonzero overlap.

    Evaluates sector membership once per cell on a shared lattice covering all
    sector bboxes, then intersects membership rows pairwise. Point-for-point
    identical to edge_geometry because both walk the same origin-anchored
    lattice; pairs without overlap are simply absent from the result.
    """
    n = len(cells)
    sectors = [sector_from_cell(c) for c in cells]
    bboxes = [sector_bbox(s) for s in sectors]
    if n < 2:
        return {}
    hull = (min(b[0] for b in bboxes), min(b[1] for b in bboxes),
            max(b[2] for b in bboxes), max(b[3] for b in bboxes))
    xs = _lattice_axis(hull[0], hull[2], grid_step_m)
    ys = _lattice_axis(hull[1], hull[3], grid_step_m)
    n_points = xs.size * ys.size
    if n_points * n > max_membership_bytes:
        return _pairwise_edge_geometry(cells, sectors, grid_step_m)

    gx, gy = np.meshgrid(xs, ys)
    px, py = gx.ravel(), gy.ravel()
    membership = np.zeros((n, n_points), dtype=bool)
    for i, s in enumerate(sectors):
        membership[i] = in_sector(s, px, py)
    counts_own = membership.sum(axis=1).astype(np.int64)

    # Pair counts via one BLAS product; 0/1 sums are exact in float32.
    mf = membership.astype(np.float32)
    pair_counts = (mf @ mf.T).astype(np.int64)

    out: dict[tuple[int, int], GeomFeatures] = {}
    for i in range(n):
        row = pair_counts[i]
        for j in range(i + 1, n):
            count = int(row[j])
            if count == 0:
                continue
            inside = membership[i] & membership[j]
            ox, oy = px[inside], py[inside]
            mean_i = float(np.mean(np.hypot(ox - sectors[i].apex_x, oy - sectors[i].apex_y)))
            mean_j = float(np.mean(np.hypot(ox - sectors[j].apex_x, oy - sectors[j].apex_y)))
            centroid = (float(np.mean(ox)), float(np.mean(oy)))
            out[(i, j)] = _features_from_counts(
                count, int(counts_own[i]), int(counts_own[j]), mean_i, mean_j,
                centroid, max(sectors[i].radius_m, sectors[j].radius_m))
    return out


def _pairwise_edge_geometry(cells, sectors, grid_step_m):
    counts_own = [sector_sample_count(s, grid_step_m) for s in sectors]
    out: dict[tuple[int, int], GeomFeatures] = {}
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            count, mean_i, mean_j, centroid = _overlap_stats(sectors[i], sectors[j], grid_step_m)
            if count == 0:
                continue
            out[(i, j)] = _features_from_counts(
                count, counts_own[i], counts_own[j], mean_i, mean_j,
                centroid, max(sectors[i].radius_m, sectors[j].radius_m))
    return out


def write_geometry_csv(cells: list[Cell], feats: dict[tuple[int, int], GeomFeatures],
                       path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "ia", "id_m", "ic_x", "ic_y", "target_ia", "target_id"])
        for (i, j), g in sorted(feats.items()):
            ic_x, ic_y = ("", "") if g.ic is None else (repr(g.ic[0]), repr(g.ic[1]))
            for a, b in ((i, j), (j, i)):
                writer.writerow([cells[a].cell_id, cells[b].cell_id,
                                 repr(g.ia), repr(g.id_m), ic_x, ic_y,
                                 repr(g.target_ia), repr(g.target_id)])
