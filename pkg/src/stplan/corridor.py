"""Temporal safe corridors: a chain of free polyhedra around a path, each
valid over its own time interval, carved from a map snapshot that has the
moving obstacles stamped in at the interval midpoint."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .types import Limits, PredictedTrack, PlanningError
from .worldmodel import OCCUPIED, VoxelGrid


def estimate_segment_times(points: np.ndarray, limits: Limits) -> np.ndarray:
    """Rest-to-rest time estimate per segment, as contiguous intervals.

    Each axis runs a symmetric accelerate/brake profile capped at v_max;
    the segment takes its slowest axis. Returns an (N, 2) array of
    [start, end) times beginning at zero.
    """
    points = np.asarray(points, dtype=float)
    deltas = np.abs(np.diff(points, axis=0))
    a, vm = limits.a_max, limits.v_max
    peak = np.sqrt(a * deltas)
    t_axis = np.where(peak <= vm,
                      2.0 * np.sqrt(deltas / a),
                      deltas / vm + vm / a)
    t_axis[deltas == 0.0] = 0.0
    durations = t_axis.max(axis=1)
    ends = np.cumsum(durations)
    starts = np.concatenate([[0.0], ends[:-1]])
    return np.column_stack([starts, ends])


def snapshot_map(grid: VoxelGrid, tracks: Sequence[PredictedTrack],
                 t: float) -> VoxelGrid:
    """Copy of the static map with every predicted obstacle box at time t
    stamped occupied."""
    snap = grid.copy()
    res = grid.resolution
    for track in tracks:
        center = track.position_at(t)
        lo = grid.index_of(center - track.extent)
        hi = grid.index_of(center + track.extent)
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    snap.set_cell((i, j, k), OCCUPIED, t)
    return snap


@dataclass
class Polyhedron:
    """Ax <= b with unit-norm rows; lo/hi is the generating local box."""

    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    flags: list = field(default_factory=list)

    def margin_of(self, point) -> float:
        """Smallest slack over the faces; positive strictly inside."""
        return float(np.min(self.b - self.A @ np.asarray(point, dtype=float)))

    def contains(self, point, tol: float = 0.0) -> bool:
        return self.margin_of(point) >= -tol


def _closest_on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return a.copy()
    s = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return a + s * ab


def decompose_segment(p_a: np.ndarray, p_b: np.ndarray, snapshot: VoxelGrid,
                      agent_radius: float = 0.0, bbox_half: float = 4.0,
                      max_faces: int = 30,
                      margin: float | None = None) -> Polyhedron:
    """Free polyhedron around one path segment.

    The candidate region is the segment's bounding box grown by bbox_half;
    occupied voxel centers inside it are cut away nearest-first by planes
    normal to the segment-to-center direction, pulled back from the center
    by `margin` (default: half the voxel diagonal plus the agent radius).
    Endpoint containment is hard: a plane that would cut off an endpoint
    has its margin reduced; if no positive margin separates, the point is
    skipped and the polyhedron flagged.
    """
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    if snapshot.state_at(p_a) == OCCUPIED or snapshot.state_at(p_b) == OCCUPIED:
        raise PlanningError("seed-occupied", "segment endpoint inside obstacle")
    if margin is None:
        margin = 0.5 * math.sqrt(3.0) * snapshot.resolution + agent_radius

    lo = np.minimum(p_a, p_b) - bbox_half
    hi = np.maximum(p_a, p_b) + bbox_half
    rows_a = [np.eye(3)[i] for i in range(3)] + [-np.eye(3)[i] for i in range(3)]
    rows_b = [hi[i] for i in range(3)] + [-lo[i] for i in range(3)]
    flags: list = []

    points = snapshot.occupied_centers_in_box(lo, hi)
    remaining = list(range(len(points)))
    faces = 0
    while remaining and faces < max_faces:
        dists = [np.linalg.norm(
            points[i] - _closest_on_segment(points[i], p_a, p_b))
            for i in remaining]
        pick = remaining[int(np.argmin(dists))]
        p = points[pick]
        anchor = _closest_on_segment(p, p_a, p_b)
        normal = p - anchor
        norm = float(np.linalg.norm(normal))
        if norm < 1e-12:
            # Obstacle center exactly on the segment; the seed check above
            # passed, so this is a voxel-center coincidence. Unseparable.
            flags.append("unseparated-obstacle")
            remaining.remove(pick)
            continue
        n_hat = normal / norm
        offset = float(n_hat @ p)
        b_val = offset - margin
        worst = max(float(n_hat @ p_a), float(n_hat @ p_b))
        if b_val < worst + 1e-9:
            b_val = worst + 1e-9
        if b_val >= offset - 1e-12:
            flags.append("unseparated-obstacle")
            remaining.remove(pick)
            continue
        rows_a.append(n_hat)
        rows_b.append(b_val)
        faces += 1
        remaining = [i for i in remaining
                     if float(n_hat @ points[i]) < b_val - 1e-12]
    if remaining:
        flags.append("face-cap")

    return Polyhedron(A=np.array(rows_a), b=np.array(rows_b, dtype=float),
                      lo=lo, hi=hi, flags=flags)


@dataclass
class Corridor:
    """Polyhedron chain with relative validity intervals and the seed path."""

    polys: list[Polyhedron]
    intervals: np.ndarray          # (P, 2), relative, starts at 0
    points: np.ndarray             # (P+1, 3) conditioned path points
    t0: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def n_segments(self) -> int:
        return len(self.polys)

    @property
    def total_time(self) -> float:
        return float(self.intervals[-1, 1]) if len(self.intervals) else 0.0


def condition_path(points: np.ndarray, max_segments: int = 4) -> np.ndarray:
    """Drop interior points of nearly collinear runs (bends under roughly
    six degrees), then truncate the result to at most max_segments segments.
    The tolerance keeps micro-bends from the dynamic path adjustment from
    fragmenting the corridor and eating the planning horizon."""
    points = np.asarray(points, dtype=float)
    if len(points) <= 2:
        out = points
    else:
        keep = [points[0]]
        for i in range(1, len(points) - 1):
            d0 = points[i] - keep[-1]
            d1 = points[i + 1] - points[i]
            nn = np.linalg.norm(d0) * np.linalg.norm(d1)
            if nn < 1e-12:
                continue
            if (np.linalg.norm(np.cross(d0, d1)) > 0.1 * nn
                    or float(d0 @ d1) < 0.0):
                keep.append(points[i])
        keep.append(points[-1])
        out = np.array(keep)
    if len(out) - 1 > max_segments:
        out = out[:max_segments + 1]
    return out


def build_corridor(points: np.ndarray, grid: VoxelGrid,
                   tracks: Sequence[PredictedTrack], limits: Limits,
                   agent_radius: float = 0.0, t0: float = 0.0,
                   max_segments: int = 4, bbox_half: float = 4.0,
                   max_faces: int = 30) -> Corridor:
    """Corridor around a path: condition the points, estimate per-segment
    intervals, and decompose each segment against a snapshot taken at the
    interval midpoint. Consecutive polyhedra overlap by construction since
    both contain the shared path point."""
    pts = condition_path(points, max_segments=max_segments)
    if len(pts) < 2:
        raise PlanningError("seed-occupied", "degenerate corridor seed")
    intervals = estimate_segment_times(pts, limits)
    polys = []
    flags: list = []
    for i in range(len(pts) - 1):
        t_mid = t0 + 0.5 * (intervals[i, 0] + intervals[i, 1])
        snap = snapshot_map(grid, tracks, t_mid)
        poly = decompose_segment(pts[i], pts[i + 1], snap,
                                 agent_radius=agent_radius,
                                 bbox_half=bbox_half, max_faces=max_faces)
        polys.append(poly)
        flags.extend(poly.flags)
    return Corridor(polys=polys, intervals=intervals, points=pts, t0=t0,
                    flags=flags)
