"""Grid-level global search: jump point search on the static map, a
time-cost A* that plans around moving obstacle predictions, and the hybrid
planner that repairs a static path only where predictions actually hit it.

All searches run on a WindowGrid and use no-corner-cutting 26-connectivity:
a diagonal move is legal only when every axis and planar sub-step of it is
traversable. Jump point pruning rules are not hardcoded; they are derived on
demand by a local Dijkstra over the 3x3x3 neighbourhood and cached by
(direction, blocked-cell mask), so the same corner-cutting semantics govern
both the pruning and the actual moves.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conflict import CONFLICT_STEP, first_conflict_index, point_conflicts
from .types import Limits, PredictedTrack, PlanningError
from .worldmodel import FREE, WindowGrid

Index = tuple[int, int, int]

# All 26 unit moves, lexicographic; order fixes every tie-break in this module.
DIRECTIONS: tuple[Index, ...] = tuple(
    d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)
)
_DIR_COST = {d: math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) for d in DIRECTIONS}

# Sub-steps that must be traversable for a diagonal move (corner rule).
_INTERMEDIATES: dict[Index, tuple[Index, ...]] = {}
for _d in DIRECTIONS:
    subs = []
    for _s in itertools.product(*[(0, c) for c in _d]):
        if _s != (0, 0, 0) and _s != _d:
            subs.append(_s)
    _INTERMEDIATES[_d] = tuple(subs)

_OFFSETS: tuple[Index, ...] = tuple(itertools.product((-1, 0, 1), repeat=3))
_OFFSET_INDEX = {o: i for i, o in enumerate(_OFFSETS)}
_CENTER_BIT = _OFFSET_INDEX[(0, 0, 0)]


@dataclass
class SearchNode:
    """One node of a timed grid path."""

    position: np.ndarray
    index: Index | None = None
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0
    f: float = 0.0

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)


@dataclass
class TimedPath:
    """Dense voxel chain; consecutive nodes are grid-adjacent until a path
    adjuster moves them off-grid."""

    nodes: list[SearchNode]
    flags: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.nodes)

    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes])

    def times(self) -> np.ndarray:
        return np.array([n.t for n in self.nodes])

    def velocities(self) -> np.ndarray:
        return np.array([n.velocity for n in self.nodes])


@dataclass
class PlannerStats:
    expansions: int = 0
    jumps: int = 0
    repairs: int = 0
    patch_expansions: int = 0
    elapsed: float = 0.0


# ---------------------------------------------------------------------------
# Per-axis kinematic time model


def _axis_times(deltas: np.ndarray, vels: np.ndarray, a_max: float,
                v_max: float, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-axis travel time and exit velocity.

    deltas, vels: (..., ) same shape, one axis at a time. An axis moving away
    from its target first brakes to rest, then the covered wrong-way distance
    is added to the forward leg.
    """
    d = np.asarray(deltas, dtype=float)
    v = np.asarray(vels, dtype=float)
    s = np.sign(d)
    dist = np.abs(d)
    vd = v * s  # velocity toward the target

    wrong = vd < 0.0
    t_brake = np.where(wrong, -vd / a_max, 0.0)
    forward_dist = np.where(wrong, dist + vd * vd / (2.0 * a_max), dist)
    u0 = np.where(wrong, 0.0, np.minimum(vd, v_max))

    cruise = u0 >= v_max - eps
    v_cand = np.sqrt(u0 * u0 + 2.0 * a_max * forward_dist)
    reach = v_cand <= v_max
    d_accel = (v_max * v_max - u0 * u0) / (2.0 * a_max)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_fwd = np.where(
            cruise,
            forward_dist / v_max,
            np.where(
                reach,
                (v_cand - u0) / a_max,
                (v_max - u0) / a_max + (forward_dist - d_accel) / v_max,
            ),
        )
    v_end = np.where(cruise | ~reach, v_max, v_cand)

    dt = np.where(dist > 0.0, t_brake + t_fwd, 0.0)
    v_next = np.where(dist > 0.0, s * v_end, v)
    return dt, v_next


def travel_time_batch(deltas: np.ndarray, vels: np.ndarray, a_max: float,
                      v_max: float, eps: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Travel times for K displacement vectors: (K,3),(K,3) -> (K,),(K,3)."""
    deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
    vels = np.broadcast_to(np.asarray(vels, dtype=float), deltas.shape)
    dts = np.empty_like(deltas)
    v_next = np.empty_like(deltas)
    for axis in range(3):
        dts[:, axis], v_next[:, axis] = _axis_times(
            deltas[:, axis], vels[:, axis], a_max, v_max, eps)
    return dts.max(axis=1), v_next


def estimate_travel_time(p_i: np.ndarray, p_next: np.ndarray, v_i: np.ndarray,
                         a_max: float, v_max: float,
                         eps: float = 1e-6) -> tuple[float, np.ndarray]:
    """Conservative per-axis travel time between two points.

    Each axis independently accelerates at a_max toward its target (braking
    first if it is moving the wrong way), capped at v_max; the move takes the
    slowest axis's time. Returns (dt, exit velocity). Axes with zero
    displacement keep their incoming velocity component.
    """
    delta = np.asarray(p_next, dtype=float) - np.asarray(p_i, dtype=float)
    dt, v_next = travel_time_batch(delta[None, :], np.asarray(v_i, float)[None, :],
                                   a_max, v_max, eps)
    return float(dt[0]), v_next[0]


# ---------------------------------------------------------------------------
# Jump point search

# (direction, blocked-mask) -> (successor directions, forced?). Shared across
# searches; the semantics depend only on the corner rule, not on the map.
_SUCCESSOR_CACHE: dict[tuple[Index, int], tuple[tuple[Index, ...], bool]] = {}


def _box_free(mask: int, offset: Index) -> bool:
    return not (mask >> _OFFSET_INDEX[offset]) & 1


def _box_move_legal(mask: int, cell: Index, step: Index) -> bool:
    tgt = (cell[0] + step[0], cell[1] + step[1], cell[2] + step[2])
    if any(c < -1 or c > 1 for c in tgt):
        return False
    if not _box_free(mask, tgt):
        return False
    for sub in _INTERMEDIATES[step]:
        mid = (cell[0] + sub[0], cell[1] + sub[1], cell[2] + sub[2])
        if not _box_free(mask, mid):
            return False
    return True


def _derive_successors(direction: Index, mask: int) -> tuple[tuple[Index, ...], bool]:
    """Successor set of a cell reached along `direction` with the given
    3x3x3 blocked pattern, by local Dijkstra from the parent cell.

    A neighbour n is pruned when a detour from the parent that avoids the
    center reaches it at no greater cost than the route through the center
    (strictly lower cost for diagonal incoming moves).
    """
    key = (direction, mask)
    cached = _SUCCESSOR_CACHE.get(key)
    if cached is not None:
        return cached

    parent = (-direction[0], -direction[1], -direction[2])
    base_cost = _DIR_COST[direction]

    # Dijkstra over free box cells, excluding the center as a node. The
    # center stays available as clearance for the corner rule (it is free).
    dist: dict[Index, float] = {parent: 0.0}
    heap: list[tuple[float, Index]] = [(0.0, parent)]
    while heap:
        d0, cell = heapq.heappop(heap)
        if d0 > dist.get(cell, math.inf):
            continue
        for step in DIRECTIONS:
            tgt = (cell[0] + step[0], cell[1] + step[1], cell[2] + step[2])
            if tgt == (0, 0, 0):
                continue
            if not _box_move_legal(mask, cell, step):
                continue
            nd = d0 + _DIR_COST[step]
            if nd < dist.get(tgt, math.inf) - 1e-12:
                dist[tgt] = nd
                heapq.heappush(heap, (nd, tgt))

    diagonal = sum(abs(c) for c in direction) > 1
    succ = []
    for n in DIRECTIONS:
        if not _box_move_legal(mask, (0, 0, 0), n):
            continue
        via = base_cost + _DIR_COST[n]
        detour = dist.get(n, math.inf)
        if diagonal:
            pruned = detour < via - 1e-9
        else:
            pruned = detour <= via + 1e-9
        if not pruned:
            succ.append(n)
    succ_t = tuple(succ)

    if mask == 0:
        forced = False
    else:
        natural, _ = _derive_successors(direction, 0)
        forced = any(n not in natural for n in succ_t)
    result = (succ_t, forced)
    _SUCCESSOR_CACHE[key] = result
    return result


class _JpsGrid:
    """One jump point search over a boolean traversability grid."""

    def __init__(self, trav: np.ndarray, goal: Index, stats: PlannerStats):
        self.trav = trav
        self.shape = trav.shape
        self.goal = goal
        self.stats = stats
        # Padded copy: out-of-bounds reads come back blocked.
        padded = np.zeros((trav.shape[0] + 2, trav.shape[1] + 2, trav.shape[2] + 2),
                          dtype=bool)
        padded[1:-1, 1:-1, 1:-1] = trav
        self.padded = padded
        self.boxfree = self._compute_boxfree(padded)
        self.run = {d: self._run_lengths(d) for d in DIRECTIONS
                    if sum(abs(c) for c in d) == 1}
        self.memo: dict[tuple[Index, Index], Index | None] = {}

    @staticmethod
    def _compute_boxfree(padded: np.ndarray) -> np.ndarray:
        blocked = (~padded).astype(np.int32)
        total = np.zeros(padded.shape, dtype=np.int32)
        for off in _OFFSETS:
            total += np.roll(blocked, shift=(-off[0], -off[1], -off[2]),
                             axis=(0, 1, 2))
        # np.roll wraps; the one-cell pad keeps wrapped values out of the
        # interior sums only for |shift| <= 1, which is all we use.
        return total[1:-1, 1:-1, 1:-1] == 0

    def _run_lengths(self, d: Index) -> np.ndarray:
        """run[c] = steps along d from c to the first not-box-free cell (or
        just past the boundary); cells strictly before that are box-free."""
        axis = next(i for i, c in enumerate(d) if c != 0)
        sign = d[axis]
        stop = ~self.boxfree
        n = self.shape[axis]
        out = np.ones(self.shape, dtype=np.int32)
        idx = [slice(None)] * 3

        def lane(i):
            idx[axis] = i
            return tuple(idx)

        order = range(n - 2, -1, -1) if sign > 0 else range(1, n)
        for i in order:
            nxt = i + sign
            out[lane(i)] = np.where(stop[lane(nxt)], 1, out[lane(nxt)] + 1)
        return out

    # -- cell helpers ------------------------------------------------------

    def in_bounds(self, c: Index) -> bool:
        return (0 <= c[0] < self.shape[0] and 0 <= c[1] < self.shape[1]
                and 0 <= c[2] < self.shape[2])

    def free(self, c: Index) -> bool:
        return self.in_bounds(c) and bool(self.trav[c])

    def mask_at(self, c: Index, incoming: Index) -> int:
        mask = 0
        p = self.padded
        x, y, z = c[0] + 1, c[1] + 1, c[2] + 1
        for i, off in enumerate(_OFFSETS):
            if not p[x + off[0], y + off[1], z + off[2]]:
                mask |= 1 << i
        mask &= ~(1 << _CENTER_BIT)
        mask &= ~(1 << _OFFSET_INDEX[(-incoming[0], -incoming[1], -incoming[2])])
        return mask

    def move_legal(self, c: Index, d: Index) -> bool:
        tgt = (c[0] + d[0], c[1] + d[1], c[2] + d[2])
        if not self.free(tgt):
            return False
        for sub in _INTERMEDIATES[d]:
            if not self.free((c[0] + sub[0], c[1] + sub[1], c[2] + sub[2])):
                return False
        return True

    # -- jumping -----------------------------------------------------------

    def jump(self, start: Index, d: Index) -> Index | None:
        key = (start, d)
        if key in self.memo:
            return self.memo[key]
        if sum(abs(c) for c in d) == 1:
            self.stats.jumps += 1
            result = self._jump_straight(start, d)
            self.memo[key] = result
            return result
        # Diagonal jumps probe other diagonal jumps at every step, so the
        # natural recursion nests as deep as the open volume is wide and the
        # probe dependencies can even cycle. Run the same evaluation on an
        # explicit frame stack; a probe that re-enters a walk still being
        # evaluated counts as a jump point, which merely stops the walk
        # early and hands the cell to the surrounding search.
        stack = [_DiagFrame(start, d)]
        self.memo[key] = _PENDING
        self.stats.jumps += 1
        while stack:
            need = self._advance(stack[-1])
            if need is None:
                stack.pop()
                continue
            if need in self.memo:
                continue
            self.stats.jumps += 1
            if sum(abs(c) for c in need[1]) == 1:
                self.memo[need] = self._jump_straight(need[0], need[1])
            else:
                self.memo[need] = _PENDING
                stack.append(_DiagFrame(need[0], need[1]))
        return self.memo[key]

    def _advance(self, fr: "_DiagFrame") -> tuple[Index, Index] | None:
        """Resume one diagonal walk until it finishes or needs a probe.

        Returns the (cell, direction) key of an unevaluated probe jump, or
        None once the frame's own memo entry has been written.
        """
        d = fr.d
        while True:
            if fr.probes is None:
                if not (self.boxfree[fr.x] or self.move_legal(fr.x, d)):
                    self.memo[(fr.start, d)] = None
                    return None
                y = (fr.x[0] + d[0], fr.x[1] + d[1], fr.x[2] + d[2])
                if y == self.goal:
                    self.memo[(fr.start, d)] = y
                    return None
                if self.boxfree[y]:
                    succ, forced = _derive_successors(d, 0)
                else:
                    succ, forced = _derive_successors(d, self.mask_at(y, d))
                if forced:
                    self.memo[(fr.start, d)] = y
                    return None
                fr.y = y
                fr.probes = [e for e in succ if e != d]
                fr.pi = 0
            while fr.pi < len(fr.probes):
                probe = (fr.y, fr.probes[fr.pi])
                val = self.memo.get(probe, _ABSENT)
                if val is _ABSENT:
                    return probe
                if val is not None:
                    self.memo[(fr.start, d)] = fr.y
                    return None
                fr.pi += 1
            fr.x = fr.y
            fr.probes = None

    def _jump_straight(self, start: Index, d: Index) -> Index | None:
        axis = next(i for i, c in enumerate(d) if c != 0)
        sign = d[axis]
        goal = self.goal
        goal_on_lane = all(goal[i] == start[i] for i in range(3) if i != axis)
        x = start
        while True:
            k = int(self.run[d][x])
            if goal_on_lane:
                delta = (goal[axis] - x[axis]) * sign
                if 1 <= delta <= k - 1:
                    return goal
            y = list(x)
            y[axis] += k * sign
            y_t = (y[0], y[1], y[2])
            if not self.free(y_t):
                return None
            if y_t == goal:
                return y_t
            _, forced = _derive_successors(d, self.mask_at(y_t, d))
            if forced:
                return y_t
            x = y_t

_PENDING = object()
_ABSENT = object()


class _DiagFrame:
    """Suspended diagonal walk: position plus pending probe cursor."""

    __slots__ = ("start", "d", "x", "y", "probes", "pi")

    def __init__(self, start: Index, d: Index):
        self.start = start
        self.d = d
        self.x = start
        self.y = start
        self.probes: list[Index] | None = None
        self.pi = 0


def _densify(chain: list[Index]) -> list[Index]:
    """Expand a jump point chain into unit steps."""
    out = [chain[0]]
    for a, b in zip(chain, chain[1:]):
        steps = max(abs(b[i] - a[i]) for i in range(3))
        d = tuple((b[i] - a[i]) // steps for i in range(3))
        c = a
        for _ in range(steps):
            c = (c[0] + d[0], c[1] + d[1], c[2] + d[2])
            out.append(c)
    return out


def jps(view: WindowGrid, start: np.ndarray, goal: np.ndarray,
        unknown_ok: bool = True,
        stats: PlannerStats | None = None) -> TimedPath:
    """Shortest grid path on the static map via jump point search.

    start/goal are world points; the result is a dense voxel chain whose
    node costs (f) are cumulative Euclidean lengths. Times and velocities
    are left at zero for the caller to stamp. Raises PlanningError
    ("no-path") when disconnected or an endpoint voxel is untraversable.
    """
    stats = stats if stats is not None else PlannerStats()
    t_begin = time.perf_counter()
    s_idx = view.local_index(np.asarray(start, dtype=float))
    g_idx = view.local_index(np.asarray(goal, dtype=float))
    if s_idx is None or g_idx is None:
        raise PlanningError("no-path", "endpoint outside the planning window")
    trav = view.traversable(unknown_ok=unknown_ok)
    if not trav[s_idx] or not trav[g_idx]:
        raise PlanningError("no-path", "endpoint voxel untraversable")

    if s_idx == g_idx:
        node = SearchNode(position=view.world_center(s_idx), index=s_idx)
        stats.elapsed += time.perf_counter() - t_begin
        return TimedPath(nodes=[node])

    grid = _JpsGrid(trav, g_idx, stats)
    g_cost: dict[Index, float] = {s_idx: 0.0}
    parent: dict[Index, Index] = {}
    came_dir: dict[Index, Index | None] = {s_idx: None}
    closed: set[Index] = set()

    def h(c: Index) -> float:
        return math.dist(c, g_idx)

    heap: list[tuple[float, float, Index]] = [(h(s_idx), 0.0, s_idx)]
    found = False
    while heap:
        f0, g0, cur = heapq.heappop(heap)
        if cur in closed or g0 > g_cost.get(cur, math.inf) + 1e-12:
            continue
        closed.add(cur)
        stats.expansions += 1
        if cur == g_idx:
            found = True
            break
        incoming = came_dir[cur]
        if incoming is None:
            dirs = [d for d in DIRECTIONS if grid.move_legal(cur, d)]
        else:
            if grid.boxfree[cur]:
                succ, _ = _derive_successors(incoming, 0)
            else:
                succ, _ = _derive_successors(
                    incoming, grid.mask_at(cur, incoming))
            dirs = list(succ)
        for d in dirs:
            jp = grid.jump(cur, d)
            if jp is None or jp in closed:
                continue
            ng = g0 + math.dist(cur, jp)
            if ng < g_cost.get(jp, math.inf) - 1e-12:
                g_cost[jp] = ng
                parent[jp] = cur
                came_dir[jp] = d
                heapq.heappush(heap, (ng + h(jp), ng, jp))
    if not found:
        raise PlanningError("no-path", "static grid disconnected")

    chain = [g_idx]
    while chain[-1] != s_idx:
        chain.append(parent[chain[-1]])
    chain.reverse()
    dense = _densify(chain)

    nodes = []
    cost = 0.0
    prev: Index | None = None
    for c in dense:
        if prev is not None:
            cost += math.dist(prev, c) * view.resolution
        nodes.append(SearchNode(position=view.world_center(c), index=c, f=cost))
        prev = c
    stats.elapsed += time.perf_counter() - t_begin
    return TimedPath(nodes=nodes)


# ---------------------------------------------------------------------------
# Time-cost A* against moving-obstacle predictions

_DIR_ARRAY = np.array(DIRECTIONS, dtype=float)


def _segment_blocked_batch(p0: np.ndarray, t0: float, deltas: np.ndarray,
                           dts: np.ndarray, tracks: Sequence[PredictedTrack],
                           inflate: float) -> np.ndarray:
    """Sampled conflict test for K candidate edges leaving one node.

    Sampling matches the committed-trajectory checker: times t0 + j*step
    clamped to each edge's own duration, so the exact endpoint is included.
    """
    k = deltas.shape[0]
    if not tracks:
        return np.zeros(k, dtype=bool)
    max_dt = float(dts.max())
    n = int(np.floor(max_dt / CONFLICT_STEP + 1e-12)) + 2
    offs = np.minimum(CONFLICT_STEP * np.arange(n)[None, :], dts[:, None])
    ts = t0 + offs                                    # (K, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(dts[:, None] > 0.0, offs / dts[:, None], 0.0)
    pts = p0[None, None, :] + alpha[:, :, None] * deltas[:, None, :]
    blocked = np.zeros(k, dtype=bool)
    for track in tracks:
        tau = np.clip(ts - track.t0, 0.0, track.horizon)
        centers = np.empty(pts.shape)
        for axis in range(3):
            centers[..., axis] = np.polyval(track.coeffs[axis], tau)
        half = track.extent + inflate
        hit = np.all(np.abs(pts - centers) <= half, axis=2)
        blocked |= hit.any(axis=1)
    return blocked


def dynamic_astar(view: WindowGrid, start: np.ndarray, start_vel: np.ndarray,
                  t0: float, goal: np.ndarray,
                  tracks: Sequence[PredictedTrack], limits: Limits,
                  unknown_ok: bool = True,
                  stats: PlannerStats | None = None) -> TimedPath:
    """A* over voxels with arrival time as cost, avoiding predicted boxes.

    Edges use the per-axis travel time model; a child is discarded when the
    sampled edge toward it intersects any predicted obstacle box (inflated
    by the agent radius). Ties break on (f, t, voxel index). With no tracks
    this degenerates to a time-metric A* on the static map.
    """
    stats = stats if stats is not None else PlannerStats()
    t_begin = time.perf_counter()
    s_idx = view.local_index(np.asarray(start, dtype=float))
    g_idx = view.local_index(np.asarray(goal, dtype=float))
    if s_idx is None or g_idx is None:
        raise PlanningError("no-path", "endpoint outside the planning window")
    trav = view.traversable(unknown_ok=unknown_ok)
    if not trav[s_idx] or not trav[g_idx]:
        raise PlanningError("no-path", "endpoint voxel untraversable")

    res = view.resolution
    goal_center = view.world_center(g_idx)
    v_max, a_max = limits.v_max, limits.a_max
    inflate = view.agent_radius

    def h(pos: np.ndarray, vel: np.ndarray) -> float:
        dt, _ = travel_time_batch((goal_center - pos)[None, :], vel[None, :],
                                  a_max, v_max)
        return float(dt[0])

    start_pos = np.asarray(start, dtype=float)
    v0 = np.asarray(start_vel, dtype=float)
    g_cost: dict[Index, float] = {s_idx: t0}
    state: dict[Index, tuple[np.ndarray, np.ndarray]] = {s_idx: (start_pos, v0)}
    parent: dict[Index, Index] = {}
    closed: set[Index] = set()
    heap: list[tuple[float, float, Index]] = [(t0 + h(start_pos, v0), t0, s_idx)]

    # Legality of all 26 moves from a cell, vectorized over the move set.
    inter_cache = [np.array([s for s in _INTERMEDIATES[d]], dtype=int).reshape(-1, 3)
                   for d in DIRECTIONS]

    found = False
    while heap:
        f0, t_cur, cur = heapq.heappop(heap)
        if cur in closed or t_cur > g_cost.get(cur, math.inf) + 1e-12:
            continue
        closed.add(cur)
        stats.expansions += 1
        if cur == g_idx:
            found = True
            break
        pos, vel = state[cur]

        legal = np.zeros(len(DIRECTIONS), dtype=bool)
        children: list[Index | None] = [None] * len(DIRECTIONS)
        for i, d in enumerate(DIRECTIONS):
            c = (cur[0] + d[0], cur[1] + d[1], cur[2] + d[2])
            if not (0 <= c[0] < trav.shape[0] and 0 <= c[1] < trav.shape[1]
                    and 0 <= c[2] < trav.shape[2]):
                continue
            if not trav[c] or c in closed:
                continue
            ok = True
            for sub in inter_cache[i]:
                m = (cur[0] + sub[0], cur[1] + sub[1], cur[2] + sub[2])
                if not trav[m]:
                    ok = False
                    break
            if ok:
                legal[i] = True
                children[i] = c

        if not legal.any():
            continue
        act = np.flatnonzero(legal)
        deltas = np.array([view.world_center(children[i]) for i in act]) - pos
        dts, v_next = travel_time_batch(deltas, vel, a_max, v_max)
        blocked = _segment_blocked_batch(pos, t_cur, deltas, dts, tracks, inflate)
        for j, i in enumerate(act):
            if blocked[j]:
                continue
            c = children[i]
            t_child = t_cur + float(dts[j])
            if t_child < g_cost.get(c, math.inf) - 1e-12:
                g_cost[c] = t_child
                child_pos = pos + deltas[j]
                state[c] = (child_pos, v_next[j])
                parent[c] = cur
                heapq.heappush(
                    heap, (t_child + h(child_pos, v_next[j]), t_child, c))

    stats.elapsed += time.perf_counter() - t_begin
    if not found:
        raise PlanningError("no-path", "no conflict-free route in window")

    chain = [g_idx]
    while chain[-1] != s_idx:
        chain.append(parent[chain[-1]])
    chain.reverse()
    nodes = []
    for c in chain:
        pos, vel = state[c]
        t_c = g_cost[c]
        nodes.append(SearchNode(position=pos, index=c, velocity=vel,
                                t=t_c, f=t_c))
    return TimedPath(nodes=nodes)


# ---------------------------------------------------------------------------
# Hybrid planner: static path + local repairs


def stamp_times(path: TimedPath, start_vel: np.ndarray, t0: float,
                limits: Limits, from_node: int = 0) -> None:
    """Assign arrival times/velocities along the chain in place, starting
    from the state stored at from_node (or the given t0/velocity at 0)."""
    if not path.nodes:
        return
    if from_node == 0:
        path.nodes[0].t = t0
        path.nodes[0].velocity = np.asarray(start_vel, dtype=float)
    for i in range(from_node + 1, len(path.nodes)):
        prev = path.nodes[i - 1]
        dt, v = estimate_travel_time(prev.position, path.nodes[i].position,
                                     prev.velocity, limits.a_max, limits.v_max)
        path.nodes[i].t = prev.t + dt
        path.nodes[i].velocity = v


def dgp(view: WindowGrid, start: np.ndarray, start_vel: np.ndarray, t0: float,
        goal: np.ndarray, tracks: Sequence[PredictedTrack], limits: Limits,
        max_repairs: int = 5,
        unknown_ok: bool = True) -> tuple[TimedPath, PlannerStats]:
    """Static jump point path, repaired locally where predictions hit it.

    The static path is stamped with travel times, checked against the
    predicted boxes, and each conflicting stretch is replaced by a
    dynamic_astar patch between the last clear node before the conflict and
    the first clear node after it; downstream times are re-stamped and the
    whole path re-checked, up to max_repairs times. A conflict-free static
    path therefore costs zero patch expansions.
    """
    stats = PlannerStats()
    t_begin = time.perf_counter()
    path = jps(view, start, goal, unknown_ok=unknown_ok, stats=stats)
    path.nodes[0].position = np.asarray(start, dtype=float)
    if len(path.nodes) > 1:
        path.nodes[-1].position = np.asarray(goal, dtype=float)
    stamp_times(path, start_vel, t0, limits)

    inflate = view.agent_radius
    for _ in range(max_repairs):
        pts = path.positions()
        ts = path.times()
        ci = first_conflict_index(list(pts), list(ts), tracks, inflate)
        if ci is None:
            stats.elapsed = time.perf_counter() - t_begin
            return path, stats

        a = ci
        b = None
        for j in range(ci + 1, len(path.nodes)):
            if not point_conflicts(pts[j], ts[j], tracks, inflate):
                b = j
                break
        if b is None:
            b = len(path.nodes) - 1
        if b <= a:
            break

        node_a = path.nodes[a]
        patch_stats = PlannerStats()
        patch = dynamic_astar(view, node_a.position, node_a.velocity,
                              node_a.t, path.nodes[b].position, tracks,
                              limits, unknown_ok=unknown_ok, stats=patch_stats)
        stats.patch_expansions += patch_stats.expansions
        stats.repairs += 1
        was_last = b == len(path.nodes) - 1
        path = TimedPath(nodes=path.nodes[:a] + patch.nodes
                         + path.nodes[b + 1:], flags=path.flags)
        if was_last and len(path.nodes) > 1:
            path.nodes[-1].position = np.asarray(goal, dtype=float)
        # Re-stamping from A reproduces the patch's own chain times and
        # carries the shift into the untouched tail.
        stamp_times(path, start_vel, t0, limits, from_node=a)

    stats.elapsed = time.perf_counter() - t_begin
    raise PlanningError("repair-limit",
                        f"conflicts remain after {max_repairs} repairs")


# ---------------------------------------------------------------------------
# Path adjustment


def adjust_path_dynamic(path: TimedPath, tracks: Sequence[PredictedTrack],
                        k: float = 0.2, alpha_p: float = 0.05,
                        cutoff: float = 2.0) -> TimedPath:
    """Push path nodes away from nearby predicted obstacle centers.

    Each node after the first is shifted by the sum of per-obstacle
    repulsions k + alpha_p * ||P||_F, scaled down linearly to zero at the
    cutoff distance, along the center-to-node direction evaluated at the
    node's own arrival time. A node exactly on a center contributes nothing
    and is recorded in flags["degenerate_repulsion"].
    """
    if not path.nodes:
        return path
    out = [SearchNode(position=path.nodes[0].position.copy(),
                      index=path.nodes[0].index,
                      velocity=path.nodes[0].velocity.copy(),
                      t=path.nodes[0].t, f=path.nodes[0].f)]
    degenerate: list[int] = []
    for i, node in enumerate(path.nodes[1:], start=1):
        shift = np.zeros(3)
        moved = False
        for track in tracks:
            center = track.position_at(node.t)
            diff = node.position - center
            r = float(np.linalg.norm(diff))
            if r >= cutoff:
                continue
            if r <= 1e-12:
                degenerate.append(i)
                continue
            cov = track.covariance_at(node.t, track.horizon)
            push = k + alpha_p * float(np.linalg.norm(cov))
            shift += push * (1.0 - r / cutoff) * (diff / r)
            moved = True
        out.append(SearchNode(position=node.position + shift,
                              index=None if moved else node.index,
                              velocity=node.velocity.copy(),
                              t=node.t, f=node.f))
    flags = dict(path.flags)
    if degenerate:
        flags["degenerate_repulsion"] = degenerate
    return TimedPath(nodes=out, flags=flags)


@dataclass
class StaticAdjustState:
    """Carries the obstacle-sample mean between successive calls."""

    mean: np.ndarray | None = None


def adjust_path_static(path: TimedPath, view: WindowGrid,
                       lookahead: int = 4, d_disc: float | None = None,
                       alpha_push: float = 0.5,
                       memory: StaticAdjustState | None = None) -> TimedPath:
    """Bend the first path nodes away from static obstacles on the chord.

    The chord from node 0 to the lookahead node is sampled every d_disc
    meters; occupied samples (inflated map) plus the mean remembered from
    the previous call are averaged, and nodes up to the lookahead are pushed
    away from that mean by alpha_push times their offset, halving the push
    up to three times until the moved node lands in known-free space (else
    the node stays put). An all-clear chord leaves the path unchanged.
    """
    if len(path.nodes) < 2:
        return path
    if d_disc is None:
        d_disc = view.resolution
    last = min(lookahead, len(path.nodes) - 1)
    a = path.nodes[0].position
    b = path.nodes[last].position
    length = float(np.linalg.norm(b - a))
    n_samples = max(2, int(math.ceil(length / d_disc)) + 1)
    alphas = np.linspace(0.0, 1.0, n_samples)
    samples = a[None, :] + alphas[:, None] * (b - a)[None, :]

    occupied = []
    for p in samples:
        idx = view.local_index(p)
        if idx is not None and view.blocked[idx]:
            occupied.append(p)
    if not occupied:
        if memory is not None:
            memory.mean = None
        return path

    pts = list(occupied)
    if memory is not None and memory.mean is not None:
        pts.append(memory.mean)
    mean = np.mean(np.array(pts), axis=0)
    if memory is not None:
        memory.mean = mean

    def known_free(p: np.ndarray) -> bool:
        idx = view.local_index(p)
        if idx is None:
            return False
        return bool(view.states[idx] == FREE and not view.blocked[idx])

    out = []
    for i, node in enumerate(path.nodes):
        if i > last:
            out.append(node)
            continue
        offset = alpha_push * (node.position - mean)
        chosen = node.position
        moved = False
        for _ in range(4):
            cand = node.position + offset
            if known_free(cand):
                chosen = cand
                moved = True
                break
            offset = 0.5 * offset
        out.append(SearchNode(position=chosen,
                              index=None if moved else node.index,
                              velocity=node.velocity.copy(),
                              t=node.t, f=node.f))
    return TimedPath(nodes=out, flags=dict(path.flags))
