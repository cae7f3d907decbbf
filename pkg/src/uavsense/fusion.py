"""Multi-station grid fusion: calibration, log-odds accumulation, DBSCAN, MMSE."""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .constants import SPEED_OF_LIGHT
from .estimation import Detection
from .scene import BsPose
from .waveform import WaveformConfig

MIN_TRANSMISSION_ANGLE = math.radians(15.0)
P_CLIP = (1e-6, 1.0 - 1e-6)


class EmptyFieldError(ValueError):
    """The fused map holds no positive evidence anywhere."""


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float]
    cell_size: float
    width_cells: int
    height_cells: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.width_cells < 1 or self.height_cells < 1:
            raise ValueError("grid must have at least one cell per axis")

    @classmethod
    def covering(cls, bounds: Sequence[float], cell_size: float) -> "GridSpec":
        """Smallest grid of ``cell_size`` cells covering (x0, y0, x1, y1)."""
        x0, y0, x1, y1 = bounds
        w = max(1, int(math.ceil((x1 - x0) / cell_size - 1e-9)))
        h = max(1, int(math.ceil((y1 - y0) / cell_size - 1e-9)))
        return cls((float(x0), float(y0)), float(cell_size), w, h)

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (rows = y, columns = x)."""
        return self.height_cells, self.width_cells

    def x_centers(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.width_cells) + 0.5) * self.cell_size

    def y_centers(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.height_cells) + 0.5) * self.cell_size

    def cell_centers(self, flat_index: np.ndarray) -> np.ndarray:
        """(n, 2) world coordinates of row-major flat cell indices."""
        row, col = np.divmod(np.asarray(flat_index), self.width_cells)
        return np.column_stack([self.origin[0] + (col + 0.5) * self.cell_size,
                                self.origin[1] + (row + 0.5) * self.cell_size])

    def contains(self, point: Sequence[float]) -> bool:
        x, y = point
        return (self.origin[0] <= x < self.origin[0] + self.width_cells * self.cell_size
                and self.origin[1] <= y < self.origin[1] + self.height_cells * self.cell_size)


@dataclass
class GridMap:
    spec: GridSpec
    log_odds: np.ndarray
    iteration: int = 0
    skipped: list = field(default_factory=list)  # detections whose region missed the grid

    @classmethod
    def empty(cls, spec: GridSpec) -> "GridMap":
        return cls(spec, np.zeros(spec.shape))


@dataclass(frozen=True)
class DbscanConfig:
    eps: float = 1.0
    min_pts: int = 3

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


@dataclass(frozen=True)
class LocalizedTarget:
    position: tuple[float, float]
    cluster_id: int
    mass: float
    member_cells: int


# -- detection geometry ------------------------------------------------------------

def transmission_angle(detection: Detection) -> float:
    """Angle between boresight and the detection bearing, floored at 15 degrees."""
    return min(max(abs(detection.angle_rad), MIN_TRANSMISSION_ANGLE), math.pi / 2)


def detection_region_size(bs: BsPose, detection: Detection, wf: WaveformConfig,
                          angle: Optional[float] = None) -> float:
    """Diameter h_n = min(h_range, h_beam) of the possible detection region.

    ``angle`` overrides the transmission angle derived from the detection.
    """
    if not detection.range_m > 0:
        raise ValueError("detection range must be positive")
    s = transmission_angle(detection) if angle is None else angle
    if not 0.0 < s <= math.pi / 2:
        raise ValueError("transmission angle must lie in (0, pi/2]")
    h_beam = detection.range_m * bs.beamwidth_3db / math.sin(s)
    if math.isclose(s, math.pi / 2):
        return h_beam
    h_range = SPEED_OF_LIGHT / (2.0 * wf.bandwidth_hz) / math.cos(s)
    return min(h_range, h_beam)


def calibrate(bs: BsPose, detection: Detection) -> tuple[float, float]:
    """Map a local (range, angle) detection into world coordinates."""
    a = bs.rotation + detection.angle_rad
    return (bs.position[0] + detection.range_m * math.cos(a),
            bs.position[1] + detection.range_m * math.sin(a))


def max_cell_size(stations: Iterable[BsPose], wf: WaveformConfig, min_range: float = 1.0) -> float:
    """Largest cell size no bigger than any station's smallest region.

    The smallest h_n over all geometries is min(h_range at the 15 degree
    floor, h_beam at ``min_range`` on broadside).
    """
    h_range = SPEED_OF_LIGHT / (2.0 * wf.bandwidth_hz) / math.cos(MIN_TRANSMISSION_ANGLE)
    return min([h_range] + [min_range * bs.beamwidth_3db for bs in stations])


# -- fusion --------------------------------------------------------------------

def occupancy_increment(p_occupied: float, p_fa: float) -> float:
    """ln(p(O|y) / P_FA) with p(O|y) clipped into [1e-6, 1 - 1e-6]."""
    p = min(max(p_occupied, P_CLIP[0]), P_CLIP[1])
    return math.log(p / p_fa)


def fuse_station(grid: GridMap, detections: Iterable[Detection], bs: BsPose, wf: WaveformConfig,
                 p_fa: float, prior: Optional[float] = None, n_stations: Optional[int] = None) -> GridMap:
    """One log-odds update from one station.

    A detection covers the cells whose centers lie within h_n/2 of its
    calibrated point (the cell containing the point always counts) and
    carries ln(p(O|y)/P_FA) with p(O|y) = p(O) * P_r. ``prior`` fixes p(O);
    when None the detection's own P_d is used. The station observes each
    cell at most once, so a cell covered by several of its detections takes
    the largest increment. Detections calibrated off the grid are recorded in
    ``skipped``, as are zero-range detections, which have no region. Returns a new map.
    """
    if n_stations is not None and grid.iteration >= n_stations:
        raise ValueError("map already holds every station")
    spec = grid.spec
    layer = np.full(spec.shape, -np.inf)
    skipped = list(grid.skipped)
    xs, ys = spec.x_centers(), spec.y_centers()
    for det in detections:
        px, py = calibrate(bs, det)
        if det.range_m <= 0 or not spec.contains((px, py)):
            skipped.append(det)
            continue
        radius = detection_region_size(bs, det, wf) / 2.0
        p0 = det.pd if prior is None else prior
        inc = occupancy_increment(p0 * det.pr, p_fa)
        c0 = int((px - spec.origin[0]) // spec.cell_size)
        r0 = int((py - spec.origin[1]) // spec.cell_size)
        span = int(math.ceil(radius / spec.cell_size)) + 1
        cols = slice(max(c0 - span, 0), min(c0 + span + 1, spec.width_cells))
        rows = slice(max(r0 - span, 0), min(r0 + span + 1, spec.height_cells))
        dx = xs[cols][None, :] - px
        dy = ys[rows][:, None] - py
        mask = dx * dx + dy * dy <= radius * radius
        mask[r0 - rows.start, c0 - cols.start] = True
        block = layer[rows, cols]  # view
        block[mask] = np.maximum(block[mask], inc)
    covered = np.isfinite(layer)
    out = grid.log_odds.copy()
    out[covered] += layer[covered]
    return GridMap(spec, out, grid.iteration + 1, skipped)


def normalize_and_threshold(grid: GridMap | np.ndarray, threshold_fraction: float = 0.5) -> np.ndarray:
    """Probability field from the log-odds map.

    Cells with positive log-odds get weight exp(l); cells with none carry no
    occupancy evidence and get zero. The field is normalized to unit sum, then
    cells below ``threshold_fraction`` of the peak are zeroed.
    """
    lo = grid.log_odds if isinstance(grid, GridMap) else np.asarray(grid, dtype=float)
    if not np.all(np.isfinite(lo)):
        raise ValueError("log-odds must be finite")
    peak = float(lo.max()) if lo.size else 0.0
    if peak <= 0.0:
        raise EmptyFieldError("no cell has positive log-odds")
    if not 0.0 <= threshold_fraction <= 1.0:
        raise ValueError("threshold_fraction must lie in [0, 1]")
    w = np.where(lo > 0.0, np.exp(lo - peak), 0.0)
    w /= w.sum()
    w[w < threshold_fraction * w.max()] = 0.0
    return w


# -- clustering and MMSE ---------------------------------------------------------

def dbscan_points(points: np.ndarray, cfg: DbscanConfig) -> np.ndarray:
    """Labels for ``points`` (n, 2); -1 marks noise, clusters numbered in scan order.

    A point is core when its eps-neighbourhood, itself included, holds at
    least ``min_pts`` points.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    neighbours = tree.query_ball_point(pts, cfg.eps)
    core = np.array([len(nb) >= cfg.min_pts for nb in neighbours])
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in sorted(neighbours[j]):
                if labels[k] == -1:
                    labels[k] = cluster
                if not visited[k] and core[k]:
                    visited[k] = True
                    queue.append(k)
        cluster += 1
    return labels


def dbscan(prob_field: np.ndarray, spec: GridSpec, cfg: DbscanConfig) -> list[np.ndarray]:
    """Clusters of nonzero cells as arrays of row-major flat indices."""
    flat = np.flatnonzero(np.asarray(prob_field).ravel() > 0)
    labels = dbscan_points(spec.cell_centers(flat), cfg)
    return [flat[labels == c] for c in range(labels.max() + 1)] if len(labels) else []


def mmse_position(prob_field: np.ndarray, spec: GridSpec, cells: np.ndarray,
                  cluster_id: int = 0) -> LocalizedTarget:
    """Probability-weighted centroid of one cluster's cells."""
    cells = np.asarray(cells)
    if cells.size == 0:
        raise ValueError("cluster is empty")
    w = np.asarray(prob_field).ravel()[cells]
    mass = float(w.sum())
    if not mass > 0:
        raise ValueError("cluster has zero probability mass")
    centers = spec.cell_centers(cells)
    p = (w[:, None] * centers).sum(axis=0) / mass
    return LocalizedTarget((float(p[0]), float(p[1])), cluster_id, mass, int(cells.size))


def localize(grid: GridMap, cfg: DbscanConfig, threshold_fraction: float = 0.5) -> list[LocalizedTarget]:
    """Threshold, cluster and return one MMSE estimate per cluster."""
    pf = normalize_and_threshold(grid, threshold_fraction)
    return [mmse_position(pf, grid.spec, cells, i) for i, cells in enumerate(dbscan(pf, grid.spec, cfg))]


# -- file outputs ------------------------------------------------------------------

def write_grid_pgm(prob_field: np.ndarray, spec: GridSpec, path: Path) -> None:
    """16-bit plain PGM scaled so the peak maps to 65535, plus JSON sidecar.

    The first image row is the top (largest y) row of the grid.
    """
    path = Path(path)
    pf = np.asarray(prob_field, dtype=float)
    peak = float(pf.max()) if pf.size else 0.0
    img = np.zeros(pf.shape, dtype=np.int64) if peak <= 0 else np.rint(pf / peak * 65535).astype(np.int64)
    lines = ["P2", f"{spec.width_cells} {spec.height_cells}", "65535"]
    lines += [" ".join(map(str, row)) for row in img[::-1]]
    path.write_text("\n".join(lines) + "\n")
    sidecar = {"origin": list(spec.origin), "cell_size": spec.cell_size, "width": spec.width_cells,
               "height": spec.height_cells, "peak_value": peak, "row_order": "top_is_max_y"}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_grid_pgm(path: Path) -> tuple[np.ndarray, GridSpec]:
    """Inverse of write_grid_pgm up to 16-bit quantization."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    tokens = path.read_text().split()
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    img = np.array(tokens[4:], dtype=float).reshape(h, w)[::-1]
    spec = GridSpec(tuple(meta["origin"]), meta["cell_size"], meta["width"], meta["height"])
    return img / maxval * meta["peak_value"], spec


CLUSTER_COLUMNS = ["cluster_id", "x_m", "y_m", "mass", "member_cells"]


def write_clusters_csv(targets: Iterable[LocalizedTarget], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLUSTER_COLUMNS)
        for t in targets:
            w.writerow([t.cluster_id, f"{t.position[0]:.9g}", f"{t.position[1]:.9g}",
                        f"{t.mass:.9g}", t.member_cells])
