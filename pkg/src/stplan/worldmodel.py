"""Tri-state voxel world model.

A sparse hash-indexed global map holds (state, last_observed) per voxel;
planning consumes a dense axis-aligned window view extracted from it. Unknown
space is reported for anything never observed, including points outside any
configured bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

STATE_NAMES = {UNKNOWN: "unknown", FREE: "free", OCCUPIED: "occupied"}

Index = tuple[int, int, int]


def ray_voxels(start: np.ndarray, end: np.ndarray, resolution: float):
    """Yield voxel indices crossed by the segment start->end, inclusive.

    Amanatides-Woo traversal. When the ray crosses a corner exactly, the
    lower-numbered axis advances first, so the visited sequence is stable.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    cur = np.floor(start / resolution).astype(int)
    last = np.floor(end / resolution).astype(int)
    yield tuple(cur)
    if np.all(cur == last):
        return
    delta = end - start
    step = np.where(delta > 0, 1, np.where(delta < 0, -1, 0)).astype(int)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for a in range(3):
        if step[a] != 0:
            boundary = (cur[a] + (step[a] > 0)) * resolution
            t_max[a] = (boundary - start[a]) / delta[a]
            t_delta[a] = resolution / abs(delta[a])
    guard = int(np.sum(np.abs(last - cur))) + 3
    for _ in range(guard):
        a = int(np.argmin(t_max))
        cur[a] += step[a]
        t_max[a] += t_delta[a]
        yield tuple(cur)
        if np.all(cur == last):
            return


class VoxelGrid:
    """Sparse tri-state occupancy grid.

    Parameters
    ----------
    resolution : float
        Voxel edge length in meters, must be positive.
    bounds : (lo, hi) pair of world points, optional
        Queries outside the bounds report unknown and writes there are
        dropped. Without bounds the grid is unbounded.
    """

    def __init__(self, resolution: float, bounds=None):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.bounds = None
        if bounds is not None:
            lo, hi = bounds
            self.bounds = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        self._cells: dict[Index, tuple[int, float]] = {}
        self._occupied: dict[Index, float] = {}

    def index_of(self, point) -> Index:
        p = np.asarray(point, dtype=float)
        return tuple(np.floor(p / self.resolution).astype(int))

    def center_of(self, index: Index) -> np.ndarray:
        return (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def _in_bounds_index(self, index: Index) -> bool:
        if self.bounds is None:
            return True
        c = self.center_of(index)
        return bool(np.all(c >= self.bounds[0]) and np.all(c <= self.bounds[1]))

    def state_at(self, point) -> int:
        return self.state_of(self.index_of(point))

    def state_of(self, index: Index) -> int:
        if not self._in_bounds_index(index):
            return UNKNOWN
        cell = self._cells.get(index)
        return UNKNOWN if cell is None else cell[0]

    def last_observed(self, index: Index) -> float | None:
        cell = self._cells.get(index)
        return None if cell is None else cell[1]

    def set_cell(self, index: Index, state: int, stamp: float) -> None:
        if not self._in_bounds_index(index):
            return
        self._cells[index] = (state, stamp)
        if state == OCCUPIED:
            self._occupied[index] = stamp
        else:
            self._occupied.pop(index, None)

    def integrate_scan(self, origin, hits, max_range: float, stamp: float) -> None:
        """Carve free space along hit-terminated rays and mark hit voxels.

        Rays that did not hit anything are not carved; the caller simply
        omits them. A voxel both carved and hit within one scan ends up
        occupied.
        """
        origin = np.asarray(origin, dtype=float)
        hit_idx = []
        for hit in hits:
            hit = np.asarray(hit, dtype=float)
            if np.linalg.norm(hit - origin) > max_range + 1e-6:
                raise ValueError("hit beyond max_range")
            target = self.index_of(hit)
            hit_idx.append(target)
            for idx in ray_voxels(origin, hit, self.resolution):
                if idx == target:
                    break
                self.set_cell(idx, FREE, stamp)
        for idx in hit_idx:
            self.set_cell(idx, OCCUPIED, stamp)

    def remove_smears(self, now: float, timeout: float) -> int:
        """Free every occupied voxel not re-observed within `timeout`.

        Returns the number of voxels cleared. Disabled by passing
        timeout=inf.
        """
        if not math.isfinite(timeout):
            return 0
        stale = [idx for idx, t in self._occupied.items() if now - t > timeout]
        for idx in stale:
            self.set_cell(idx, FREE, self._cells[idx][1])
        return len(stale)

    def known_cells(self):
        return self._cells.items()

    def copy(self) -> "VoxelGrid":
        out = VoxelGrid(self.resolution, bounds=self.bounds)
        out._cells = dict(self._cells)
        out._occupied = dict(self._occupied)
        return out

    def occupied_centers_in_box(self, lo, hi) -> np.ndarray:
        """World centers of occupied voxels whose centers lie in [lo, hi].

        Sorted by index so the result is stable across runs.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = []
        for idx in sorted(self._occupied):
            c = self.center_of(idx)
            if np.all(c >= lo) and np.all(c <= hi):
                out.append(c)
        return np.array(out) if out else np.zeros((0, 3))

    def dump_text(self, stream, stamp: float | None = None) -> None:
        """Write known voxels as `i j k state last_observed` lines.

        Ordering is x-major (x index outermost, then y, then z), stable
        across runs for identical maps.
        """
        header = f"# stplan-grid v1 resolution={self.resolution}"
        if stamp is not None:
            header += f" stamp={stamp}"
        stream.write(header + "\n")
        for idx in sorted(self._cells):
            state, t = self._cells[idx]
            stream.write(f"{idx[0]} {idx[1]} {idx[2]} {state} {t:.6f}\n")


@dataclass
class SlidingWindow:
    """Axis-aligned planning window in world coordinates."""

    lo: np.ndarray
    hi: np.ndarray

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    @property
    def half_extents(self) -> np.ndarray:
        return (self.hi - self.lo) / 2.0

    @property
    def radius(self) -> float:
        return float(np.max(self.half_extents))


def project_goal(agent, terminal, horizon: float) -> np.ndarray:
    """Clamp the terminal goal onto a sphere of `horizon` around the agent."""
    agent = np.asarray(agent, dtype=float)
    terminal = np.asarray(terminal, dtype=float)
    offset = terminal - agent
    dist = float(np.linalg.norm(offset))
    if dist <= horizon or dist == 0.0:
        return terminal.copy()
    return agent + offset * (horizon / dist)


def update_window(agent, projected_goal, near_margin: float = 5.0,
                  far_margin: float = 15.0, include=None) -> SlidingWindow:
    """Size the sliding window around the agent, biased toward the goal.

    Axes where the goal lies ahead get the far margin on that side and the
    near margin behind; axes with no goal offset stay symmetric. Extra
    points (e.g. the committed trajectory) expand the window as needed.
    """
    agent = np.asarray(agent, dtype=float)
    goal = np.asarray(projected_goal, dtype=float)
    lo = np.empty(3)
    hi = np.empty(3)
    for a in range(3):
        d = goal[a] - agent[a]
        if d > 1e-9:
            lo[a], hi[a] = agent[a] - near_margin, agent[a] + far_margin
        elif d < -1e-9:
            lo[a], hi[a] = agent[a] - far_margin, agent[a] + near_margin
        else:
            lo[a], hi[a] = agent[a] - near_margin, agent[a] + near_margin
    lo = np.minimum(lo, goal)
    hi = np.maximum(hi, goal)
    if include is not None:
        for p in include:
            p = np.asarray(p, dtype=float)
            lo = np.minimum(lo, p)
            hi = np.maximum(hi, p)
    return SlidingWindow(lo, hi)


class WindowGrid:
    """Dense snapshot of the sparse map over a sliding window.

    Everything the search and corridor stages touch lives here: tri-state
    array, occupancy inflated by the agent radius, and a summed-area table
    for constant-time box emptiness queries.
    """

    def __init__(self, grid: VoxelGrid, window: SlidingWindow,
                 agent_radius: float = 0.0, world_bounds=None):
        res = grid.resolution
        lo = window.lo.copy()
        hi = window.hi.copy()
        if world_bounds is None and grid.bounds is not None:
            world_bounds = grid.bounds
        if world_bounds is not None:
            lo = np.maximum(lo, np.asarray(world_bounds[0], dtype=float))
            hi = np.minimum(hi, np.asarray(world_bounds[1], dtype=float))
        self.origin_index = np.floor(lo / res).astype(int)
        # Top voxel is the one containing hi minus a hair, so a window edge
        # sitting exactly on a voxel boundary does not add a phantom layer.
        top = np.ceil(hi / res - 1e-9).astype(int) - 1
        top = np.maximum(top, self.origin_index)
        self.shape = tuple((top - self.origin_index + 1).astype(int))
        self.resolution = res
        self.agent_radius = agent_radius
        self.grid = grid
        self.window = window
        self.states = np.full(self.shape, UNKNOWN, dtype=np.uint8)
        self.stamps = np.full(self.shape, -np.inf, dtype=float)
        o = self.origin_index
        sh = self.shape
        for idx, (state, t) in grid.known_cells():
            i, j, k = idx[0] - o[0], idx[1] - o[1], idx[2] - o[2]
            if 0 <= i < sh[0] and 0 <= j < sh[1] and 0 <= k < sh[2]:
                self.states[i, j, k] = state
                self.stamps[i, j, k] = t
        self.occupied = self.states == OCCUPIED
        r_vox = int(math.ceil(agent_radius / res - 1e-9))
        if r_vox > 0 and self.occupied.any():
            structure = np.ones((2 * r_vox + 1,) * 3, dtype=bool)
            self.blocked = ndimage.binary_dilation(self.occupied, structure=structure)
        else:
            self.blocked = self.occupied.copy()
        self._sat = None

    # index mapping -------------------------------------------------------

    def local_index(self, point) -> Index | None:
        p = np.asarray(point, dtype=float)
        idx = np.floor(p / self.resolution).astype(int) - self.origin_index
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            return None
        return tuple(idx)

    def world_center(self, local_index) -> np.ndarray:
        gi = np.asarray(local_index) + self.origin_index
        return (gi + 0.5) * self.resolution

    def in_shape(self, idx) -> bool:
        return (0 <= idx[0] < self.shape[0] and 0 <= idx[1] < self.shape[1]
                and 0 <= idx[2] < self.shape[2])

    # queries -------------------------------------------------------------

    def traversable(self, unknown_ok: bool = True) -> np.ndarray:
        if unknown_ok:
            return ~self.blocked
        return (~self.blocked) & (self.states == FREE)

    def occupied_centers(self, inflated: bool = True) -> np.ndarray:
        """World centers of (optionally inflated) occupied voxels, sorted."""
        mask = self.blocked if inflated else self.occupied
        idx = np.argwhere(mask)
        if len(idx) == 0:
            return np.zeros((0, 3))
        return (idx + self.origin_index + 0.5) * self.resolution

    def box_occupancy_count(self, lo_idx, hi_idx) -> int:
        """Occupied-or-blocked cell count in the inclusive local index box."""
        if self._sat is None:
            self._sat = np.pad(np.cumsum(np.cumsum(np.cumsum(
                self.blocked.astype(np.int32), 0), 1), 2), ((1, 0), (1, 0), (1, 0)))
        s = self._sat
        x0, y0, z0 = (max(v, 0) for v in lo_idx)
        x1 = min(hi_idx[0], self.shape[0] - 1) + 1
        y1 = min(hi_idx[1], self.shape[1] - 1) + 1
        z1 = min(hi_idx[2], self.shape[2] - 1) + 1
        if x1 <= x0 or y1 <= y0 or z1 <= z0:
            return 0
        return int(s[x1, y1, z1] - s[x0, y1, z1] - s[x1, y0, z1] - s[x1, y1, z0]
                   + s[x0, y0, z1] + s[x0, y1, z0] + s[x1, y0, z0] - s[x0, y0, z0])
