"""Corridor-constrained cubic spline optimization.

Trajectories are composite cubics with a fixed per-interval duration and
piecewise-constant jerk. Boundary and junction equalities are eliminated up
front: the free parameters are the position offsets of the later segments,
so each candidate interval-to-polyhedron assignment reduces to a small dense
QP over those offsets with pure inequality rows. Assignments are enumerated
in monotone non-decreasing order, which keeps the count tiny for the interval
budgets used here and makes the search exactly optimal.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection

from .conflict import point_conflicts, sample_times
from .corridor import Corridor, Polyhedron
from .smallqp import solve_qp
from .types import BoundaryState, Limits, PlanningError

N_MIN = 4
N_STEP = 2
N_CAP = 10
FACTOR_SET_SIZE = 4
FACTOR_RATIO = 1.15
W_CTRL = 1.0
W_REF = 0.1
QP_TOL = 1e-9


@dataclass
class PiecewiseCubicTrajectory:
    """Composite cubic with uniform interval duration.

    coeffs has shape (N, 3, 4): segment, axis, then (a, b, c, d) so the
    position on segment n is a*tau^3 + b*tau^2 + c*tau + d for tau in [0, dt].
    """

    coeffs: np.ndarray
    dt: float
    t0: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def n_segments(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def duration(self) -> float:
        return self.n_segments * self.dt

    @property
    def end_time(self) -> float:
        return self.t0 + self.duration

    def _locate(self, t: float) -> tuple[int, float]:
        rel = t - self.t0
        if rel < -1e-9 or rel > self.duration + 1e-9:
            raise ValueError("time %.6f outside trajectory domain" % t)
        rel = min(max(rel, 0.0), self.duration)
        n = min(int(rel / self.dt), self.n_segments - 1)
        return n, rel - n * self.dt

    def position(self, t: float) -> np.ndarray:
        n, tau = self._locate(t)
        a, b, c, d = self.coeffs[n].T
        return ((a * tau + b) * tau + c) * tau + d

    def velocity(self, t: float) -> np.ndarray:
        n, tau = self._locate(t)
        a, b, c, _ = self.coeffs[n].T
        return (3.0 * a * tau + 2.0 * b) * tau + c

    def acceleration(self, t: float) -> np.ndarray:
        n, tau = self._locate(t)
        a, b, _, _ = self.coeffs[n].T
        return 6.0 * a * tau + 2.0 * b

    def jerk(self, t: float) -> np.ndarray:
        n, _ = self._locate(t)
        return 6.0 * self.coeffs[n, :, 0]

    def state_at(self, t: float) -> BoundaryState:
        return BoundaryState(self.position(t), self.velocity(t),
                             self.acceleration(t))

    def sample(self, times) -> np.ndarray:
        return np.array([self.position(t) for t in np.atleast_1d(times)])

    def coefficient_table(self) -> list:
        rows = []
        for n in range(self.n_segments):
            for axis in range(3):
                a, b, c, d = self.coeffs[n, axis]
                rows.append({"segment": n, "axis": axis, "a": float(a),
                             "b": float(b), "c": float(c), "d": float(d),
                             "dt": self.dt, "t0": self.t0})
        return rows


@dataclass
class MiqpSpec:
    """One spline solve: corridor, boundary pair, discretization, weights."""

    corridor: Corridor
    x_init: BoundaryState
    x_final: BoundaryState
    n_intervals: int
    dt: float
    limits: Limits
    w_ctrl: float = W_CTRL
    w_ref: float = W_REF


@dataclass
class SolveInfo:
    assignments_tried: int = 0
    qp_iterations: int = 0
    elapsed: float = 0.0


# ---------------------------------------------------------------------------
# Control points


@dataclass
class ControlPoints:
    position: np.ndarray        # (4, 3)
    velocity: np.ndarray        # (3, 3)
    acceleration: np.ndarray    # (2, 3)
    jerk: np.ndarray            # (3,)


def bezier_control_points(seg_coeffs: np.ndarray, dt: float) -> ControlPoints:
    """Control points of one segment; seg_coeffs is (3, 4) axis-major."""
    a, b, c, d = np.asarray(seg_coeffs, dtype=float).T
    p0 = d
    p1 = (c * dt + 3.0 * d) / 3.0
    p2 = (b * dt * dt + 2.0 * c * dt + 3.0 * d) / 3.0
    p3 = a * dt ** 3 + b * dt * dt + c * dt + d
    pos = np.stack([p0, p1, p2, p3])
    vel = 3.0 * np.diff(pos, axis=0) / dt
    acc = 2.0 * np.diff(vel, axis=0) / dt
    return ControlPoints(pos, vel, acc, 6.0 * a)


# Coefficient-space selector rows (weights over a, b, c, d of one segment).

def _position_selectors(dt: float) -> np.ndarray:
    return np.array([
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, dt / 3.0, 1.0],
        [0.0, dt * dt / 3.0, 2.0 * dt / 3.0, 1.0],
        [dt ** 3, dt * dt, dt, 1.0],
    ])


def _velocity_selectors(dt: float) -> np.ndarray:
    return np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, dt, 1.0, 0.0],
        [3.0 * dt * dt, 2.0 * dt, 1.0, 0.0],
    ])


def _acceleration_selectors(dt: float) -> np.ndarray:
    return np.array([
        [0.0, 2.0, 0.0, 0.0],
        [6.0 * dt, 2.0, 0.0, 0.0],
    ])


_JERK_SELECTOR = np.array([6.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Equality elimination


def _equality_system(n_intervals: int, dt: float) -> np.ndarray:
    """Rows: start state, junction continuity, end state. Columns are the
    per-segment (a, b, c, d) blocks. One axis; the matrix is axis-independent.
    """
    n = n_intervals
    E = np.zeros((3 * n + 3, 4 * n))
    E[0, 3] = 1.0
    E[1, 2] = 1.0
    E[2, 1] = 2.0
    row = 3
    for k in range(n - 1):
        c0, c1 = 4 * k, 4 * (k + 1)
        E[row, c0:c0 + 4] = (dt ** 3, dt * dt, dt, 1.0)
        E[row, c1 + 3] = -1.0
        E[row + 1, c0:c0 + 3] = (3.0 * dt * dt, 2.0 * dt, 1.0)
        E[row + 1, c1 + 2] = -1.0
        E[row + 2, c0:c0 + 2] = (6.0 * dt, 2.0)
        E[row + 2, c1 + 1] = -2.0
        row += 3
    cl = 4 * (n - 1)
    E[row, cl:cl + 4] = (dt ** 3, dt * dt, dt, 1.0)
    E[row + 1, cl:cl + 3] = (3.0 * dt * dt, 2.0 * dt, 1.0)
    E[row + 2, cl:cl + 2] = (6.0 * dt, 2.0)
    return E


def _boundary_rhs(x_init: BoundaryState, x_final: BoundaryState,
                  n_intervals: int) -> np.ndarray:
    """(rows, 3) right-hand sides, one column per axis."""
    rhs = np.zeros((3 * n_intervals + 3, 3))
    rhs[0] = x_init.position
    rhs[1] = x_init.velocity
    rhs[2] = x_init.acceleration
    rhs[-3] = x_final.position
    rhs[-2] = x_final.velocity
    rhs[-1] = x_final.acceleration
    return rhs


def _coefficient_map(x_init: BoundaryState, x_final: BoundaryState,
                     n_intervals: int, dt: float):
    """Affine map from the free position offsets to all coefficients.

    Returns (M, m0) with M of shape (4N, K) shared by the three axes and m0
    of shape (3, 4N). K = max(N - 3, 0); the free columns are the d offsets
    of segments 3..N-1. If the pivot block turns out near singular, the map
    is rebuilt from a least-squares particular solution plus an orthonormal
    nullspace basis instead.
    """
    n = n_intervals
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    E = _equality_system(n, dt)
    rhs = _boundary_rhs(x_init, x_final, n)
    free = [4 * k + 3 for k in range(3, n)]
    dep = [c for c in range(4 * n) if c not in free]
    k_free = len(free)

    M = np.zeros((4 * n, k_free))
    m0 = np.zeros((3, 4 * n))
    ok = True
    try:
        lu = lu_factor(E[:, dep])
        base_dep = lu_solve(lu, rhs)                       # (ndep, 3)
        m0[:, dep] = base_dep.T
        if k_free:
            cols = lu_solve(lu, -E[:, free])               # (ndep, K)
            M[dep, :] = cols
            M[free, :] = np.eye(k_free)
        scale = max(1.0, float(np.max(np.abs(rhs))))
        probe = m0[0] + (M @ np.ones(k_free) if k_free else 0.0)
        if np.max(np.abs(E @ probe - rhs[:, 0])) > 1e-7 * scale:
            ok = False
    except (ValueError, np.linalg.LinAlgError):
        ok = False

    if not ok:
        sol, _, _, sv = np.linalg.lstsq(E, rhs, rcond=None)
        m0 = sol.T
        if k_free:
            _, s, vt = np.linalg.svd(E)
            M = vt[-k_free:].T
    return M, m0


def _assemble(M: np.ndarray, m0: np.ndarray, xi: np.ndarray,
              n_intervals: int) -> np.ndarray:
    """(N, 3, 4) coefficients from stacked free parameters (3K,)."""
    k = M.shape[1]
    coeffs = np.empty((n_intervals, 3, 4))
    for axis in range(3):
        vec = m0[axis] + (M @ xi[axis * k:(axis + 1) * k] if k else 0.0)
        coeffs[:, axis, :] = vec.reshape(n_intervals, 4)
    return coeffs


def solve_closed_form_n3(x_init: BoundaryState, x_final: BoundaryState,
                         dt: float, t0: float = 0.0) -> PiecewiseCubicTrajectory:
    """Three-interval spline through the boundary pair; the equality system
    is square, so the solution is unique. Inequality limits are not enforced
    here; run check_constraints afterwards.
    """
    _, m0 = _coefficient_map(x_init, x_final, 3, dt)
    coeffs = _assemble(np.zeros((12, 0)), m0, np.zeros(0), 3)
    return PiecewiseCubicTrajectory(coeffs, dt, t0)


def eliminate_n4(x_init: BoundaryState, x_final: BoundaryState, dt: float):
    """Affine map d3 -> all coefficients for the four-interval spline.

    Returns (M, m0): M (16, 1) shared across axes, m0 (3, 16). Every control
    point is affine in the single per-axis scalar d3.
    """
    return _coefficient_map(x_init, x_final, 4, dt)


# ---------------------------------------------------------------------------
# Polyhedron geometry


def polyhedron_vertex_mean(poly: Polyhedron) -> np.ndarray:
    """Mean of the vertex set of a bounded polyhedron."""
    A = np.asarray(poly.A, dtype=float)
    b = np.asarray(poly.b, dtype=float)
    # Chebyshev center as the required interior point.
    norms = np.linalg.norm(A, axis=1)
    res = linprog(np.array([0.0, 0.0, 0.0, -1.0]),
                  A_ub=np.hstack([A, norms[:, None]]), b_ub=b,
                  bounds=[(None, None)] * 3 + [(0.0, None)], method="highs")
    if not res.success or res.x[3] <= 1e-12:
        raise PlanningError("degenerate-polyhedron",
                            "no interior point for vertex enumeration")
    center = res.x[:3]
    hs = HalfspaceIntersection(np.hstack([A, -b[:, None]]), center)
    verts = np.unique(np.round(hs.intersections, 9), axis=0)
    return verts.mean(axis=0)


def final_state_for(corridor: Corridor) -> BoundaryState:
    """Rest state at the mean of the last polyhedron's vertices."""
    return BoundaryState(polyhedron_vertex_mean(corridor.polys[-1]))


# ---------------------------------------------------------------------------
# Assignment enumeration and the per-assignment QP


def _monotone_assignments(n_intervals: int, n_polys: int):
    for combo in itertools.combinations_with_replacement(range(n_polys),
                                                         n_intervals):
        yield combo


def _reference_points(spec: MiqpSpec):
    """Mid-polyhedron reference positions and their trajectory times."""
    P = len(spec.corridor.polys)
    if P < 3:
        return np.zeros((0, 3)), np.zeros(0)
    T = spec.n_intervals * spec.dt
    refs = []
    times = []
    for i in range(1, P - 1):
        refs.append(polyhedron_vertex_mean(spec.corridor.polys[i]))
        times.append(i * T / (P - 1))
    return np.array(refs), np.array(times)


def _time_row(t: float, dt: float, n_intervals: int) -> tuple[int, np.ndarray]:
    n = min(int(t / dt + 1e-12), n_intervals - 1)
    tau = t - n * dt
    return n, np.array([tau ** 3, tau * tau, tau, 1.0])


def _cost_terms(spec: MiqpSpec, M: np.ndarray, m0: np.ndarray,
                refs: np.ndarray, ref_times: np.ndarray):
    """Per-axis H (shared), per-axis g, for the stacked-parameter QP."""
    n = spec.n_intervals
    k = M.shape[1]
    sel_jerk = np.zeros((n, 4 * n))
    for seg in range(n):
        sel_jerk[seg, 4 * seg] = 6.0
    JM = sel_jerk @ M                                       # (N, K)
    H = 2.0 * spec.w_ctrl * (JM.T @ JM)
    g = np.empty((3, k))
    for axis in range(3):
        g[axis] = 2.0 * spec.w_ctrl * (JM.T @ (sel_jerk @ m0[axis]))
    for ref, t in zip(refs, ref_times):
        seg, w = _time_row(t, spec.dt, n)
        row = np.zeros(4 * n)
        row[4 * seg:4 * seg + 4] = w
        rM = row @ M
        H += 2.0 * spec.w_ref * np.outer(rM, rM)
        for axis in range(3):
            g[axis] += 2.0 * spec.w_ref * rM * (row @ m0[axis] - ref[axis])
    return H, g


def _constraint_rows(spec: MiqpSpec, assignment, M: np.ndarray,
                     m0: np.ndarray):
    """Stacked inequality system G xi <= h, or None when a fixed control
    point already violates its polyhedron (assignment pruned).
    """
    n = spec.n_intervals
    k = M.shape[1]
    lim = spec.limits
    pos_sel = _position_selectors(spec.dt)
    dyn_sel = [(_velocity_selectors(spec.dt), lim.v_max),
               (_acceleration_selectors(spec.dt), lim.a_max),
               (_JERK_SELECTOR[None, :], lim.j_max)]
    rows = []
    rhs = []
    for seg in range(n):
        poly = spec.corridor.polys[assignment[seg]]
        A_p = np.asarray(poly.A, dtype=float)
        b_p = np.asarray(poly.b, dtype=float)
        blk = slice(4 * seg, 4 * seg + 4)
        for w in pos_sel:
            alpha = w @ M[blk]                              # (K,)
            beta = np.array([w @ m0[axis][blk] for axis in range(3)])
            fixed = b_p - A_p @ beta
            if k == 0 or np.max(np.abs(alpha)) < 1e-14:
                if np.min(fixed) < -QP_TOL:
                    return None
                continue
            for r in range(A_p.shape[0]):
                row = np.zeros(3 * k)
                for axis in range(3):
                    row[axis * k:(axis + 1) * k] = A_p[r, axis] * alpha
                rows.append(row)
                rhs.append(fixed[r])
        for sel, bound in dyn_sel:
            for w in sel:
                alpha = w @ M[blk]
                for axis in range(3):
                    beta = w @ m0[axis][blk]
                    if k == 0 or np.max(np.abs(alpha)) < 1e-14:
                        if abs(beta) > bound + QP_TOL:
                            return None
                        continue
                    base = np.zeros(3 * k)
                    base[axis * k:(axis + 1) * k] = alpha
                    rows.append(base)
                    rhs.append(bound - beta)
                    rows.append(-base)
                    rhs.append(bound + beta)
    if not rows:
        return np.zeros((0, 3 * k)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def _objective_of(spec: MiqpSpec, traj: PiecewiseCubicTrajectory,
                  refs: np.ndarray, ref_times: np.ndarray) -> float:
    jerks = 6.0 * traj.coeffs[:, :, 0]
    j = spec.w_ctrl * float(np.sum(jerks * jerks))
    for ref, t in zip(refs, ref_times):
        diff = traj.position(traj.t0 + t) - ref
        j += spec.w_ref * float(diff @ diff)
    return j


def solve_miqp(spec: MiqpSpec, t0: float = 0.0):
    """Best spline over all monotone interval-to-polyhedron assignments.

    Returns (trajectory, assignment, info). Raises PlanningError("infeasible")
    when no assignment admits a solution.
    """
    P = len(spec.corridor.polys)
    if not (spec.n_intervals >= P >= 1):
        raise ValueError("need n_intervals >= n_polyhedra >= 1")
    if spec.dt <= 0.0:
        raise ValueError("dt must be positive")
    started = time.perf_counter()
    info = SolveInfo()
    n = spec.n_intervals
    M, m0 = _coefficient_map(spec.x_init, spec.x_final, n, spec.dt)
    k = M.shape[1]
    refs, ref_times = _reference_points(spec)
    if k:
        H, g = _cost_terms(spec, M, m0, refs, ref_times)
        H_full = np.kron(np.eye(3), H)
        g_full = g.reshape(-1)

    best = None
    tol = QP_TOL
    init_pos = np.asarray(spec.x_init.position, dtype=float)
    final_pos = np.asarray(spec.x_final.position, dtype=float)
    for assignment in _monotone_assignments(n, P):
        if not spec.corridor.polys[assignment[0]].contains(init_pos, tol):
            continue
        if not spec.corridor.polys[assignment[-1]].contains(final_pos, tol):
            continue
        info.assignments_tried += 1
        built = _constraint_rows(spec, assignment, M, m0)
        if built is None:
            continue
        G, h = built
        if k == 0:
            coeffs = _assemble(M, m0, np.zeros(0), n)
            traj = PiecewiseCubicTrajectory(coeffs, spec.dt, t0)
            value = _objective_of(spec, traj, refs, ref_times)
            if best is None or value < best[0] - 1e-12:
                best = (value, traj, assignment)
            continue
        try:
            res = solve_qp(H_full, g_full, G, h)
        except np.linalg.LinAlgError:
            ridge = 1e-9 * max(float(np.max(np.diag(H_full))), 1.0)
            res = solve_qp(H_full + ridge * np.eye(3 * k), g_full, G, h)
        info.qp_iterations += res.iterations
        if res.x is None:
            continue
        coeffs = _assemble(M, m0, res.x, n)
        traj = PiecewiseCubicTrajectory(coeffs, spec.dt, t0)
        value = _objective_of(spec, traj, refs, ref_times)
        if best is None or value < best[0] - 1e-12:
            best = (value, traj, assignment)
    info.elapsed = time.perf_counter() - started
    if best is None:
        raise PlanningError("infeasible",
                            "%d assignments, none solvable" % info.assignments_tried)
    return best[1], list(best[2]), info


def adapt_intervals(feasible: bool, n_current: int, step: int = N_STEP,
                    n_min: int = N_MIN, n_cap: int = N_CAP) -> int:
    if feasible:
        return max(n_min, n_current)
    return min(n_current + step, n_cap)


# ---------------------------------------------------------------------------
# Time allocation


def allocate_time(template: MiqpSpec, f_set, t0: float = 0.0,
                  ratio: float = FACTOR_RATIO):
    """Try interval durations dt = f * T_total / N over ascending factors.

    The winner is the smallest feasible factor; also returns the factor set
    for the next call, built so the winner sits at the upper-median slot.
    On total failure raises PlanningError("all-infeasible") whose detail
    carries the next set, whose minimum is the current maximum.
    """
    factors = sorted(float(f) for f in f_set)
    if not factors:
        raise ValueError("empty factor set")
    size = len(factors)
    delta = (np.asarray(template.x_final.position, dtype=float)
             - np.asarray(template.x_init.position, dtype=float))
    t_total = float(np.max(np.abs(delta))) / template.limits.v_max
    t_total = max(t_total, 1e-2)

    agg = SolveInfo()
    for f in factors:
        dt = f * t_total / template.n_intervals
        spec = replace(template, dt=dt)
        try:
            traj, assignment, info = solve_miqp(spec, t0)
        except PlanningError:
            continue
        agg.assignments_tried += info.assignments_tried
        agg.qp_iterations += info.qp_iterations
        median_slot = math.ceil((size - 1) / 2)
        next_set = [f * ratio ** (i - median_slot) for i in range(size)]
        return traj, assignment, f, next_set, agg
    next_set = [factors[-1] * ratio ** i for i in range(size)]
    raise PlanningError("all-infeasible", {"next_factors": next_set})


# ---------------------------------------------------------------------------
# Contingency generation


def _lateral_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axes = np.eye(3)
    pick = int(np.argmin(np.abs(direction)))
    e1 = np.cross(direction, axes[pick])
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(direction, e1)


def generate_contingency(state: BoundaryState, collision_pt, t_col: float,
                         d_min: float, d_max: float, limits: Limits,
                         dt: float, view=None, tracks=(), agent_radius: float = 0.0,
                         t0: float = 0.0) -> PiecewiseCubicTrajectory:
    """Short stopping spline away from a predicted collision.

    Builds a forward goal at a velocity-scaled safety distance plus eight
    ring candidates on the plane orthogonal to the motion direction, tries
    them farthest-from-collision first with the three-interval closed form,
    and keeps the first one that passes limit, map, and prediction checks.
    Falls back to a hover at the current position, flagged "stop-command".
    """
    pos = np.asarray(state.position, dtype=float)
    vel = np.asarray(state.velocity, dtype=float)
    collision_pt = np.asarray(collision_pt, dtype=float)
    speed = float(np.linalg.norm(vel))
    d_safe = d_min + (d_max - d_min) * min(speed / limits.v_max, 1.0)
    vhat = vel / speed if speed > 1e-9 else np.array([1.0, 0.0, 0.0])
    center = pos + d_safe * vhat
    e1, e2 = _lateral_basis(vhat)
    goals = [center]
    for kk in range(8):
        ang = math.pi * kk / 4.0
        goals.append(center + d_safe * (math.cos(ang) * e1 + math.sin(ang) * e2))
    order = sorted(range(len(goals)),
                   key=lambda i: (-float(np.linalg.norm(goals[i] - collision_pt)), i))

    for idx in order:
        goal = goals[idx]
        traj = solve_closed_form_n3(state, BoundaryState(goal), dt, t0)
        ok, _ = check_constraints(traj, None, limits)
        if not ok:
            continue
        if not _clear_of_map(traj, view):
            continue
        if not _clear_of_tracks(traj, tracks, agent_radius):
            continue
        return traj

    hover = np.zeros((3, 3, 4))
    hover[:, :, 3] = pos
    return PiecewiseCubicTrajectory(hover, dt, t0, flags=["stop-command"])


def _clear_of_map(traj: PiecewiseCubicTrajectory, view,
                  samples_per_seg: int = 10) -> bool:
    if view is None:
        return True
    times = np.linspace(traj.t0, traj.end_time,
                        samples_per_seg * traj.n_segments + 1)
    for t in times:
        local = view.local_index(traj.position(t))
        if local is not None and view.blocked[local]:
            return False
    return True


def _clear_of_tracks(traj: PiecewiseCubicTrajectory, tracks,
                     agent_radius: float) -> bool:
    if not tracks:
        return True
    for t in sample_times(traj.t0, traj.end_time, 0.05):
        if point_conflicts(traj.position(t), t, tracks, agent_radius):
            return False
    return True


# ---------------------------------------------------------------------------
# Post-hoc verification


def check_constraints(traj: PiecewiseCubicTrajectory,
                      corridor: Corridor | None, limits: Limits,
                      samples_per_seg: int = 50, assignment=None):
    """Control-point limit check plus sampled limit and containment checks.

    Returns (ok, report); report carries the worst violation per quantity,
    positive values meaning a violation of that size.
    """
    worst_v = worst_a = worst_j = -np.inf
    worst_margin = np.inf
    for seg in range(traj.n_segments):
        cp = bezier_control_points(traj.coeffs[seg], traj.dt)
        worst_v = max(worst_v, float(np.max(np.abs(cp.velocity))) - limits.v_max)
        worst_a = max(worst_a,
                      float(np.max(np.abs(cp.acceleration))) - limits.a_max)
        worst_j = max(worst_j, float(np.max(np.abs(cp.jerk))) - limits.j_max)
        taus = np.linspace(0.0, traj.dt, samples_per_seg)
        for tau in taus:
            t = traj.t0 + seg * traj.dt + tau
            worst_v = max(worst_v,
                          float(np.max(np.abs(traj.velocity(t)))) - limits.v_max)
            worst_a = max(worst_a,
                          float(np.max(np.abs(traj.acceleration(t)))) - limits.a_max)
            if corridor is not None:
                p = traj.position(t)
                if assignment is not None:
                    margin = corridor.polys[assignment[seg]].margin_of(p)
                else:
                    margin = max(poly.margin_of(p) for poly in corridor.polys)
                worst_margin = min(worst_margin, margin)
    ok = (worst_v <= 1e-6 and worst_a <= 1e-6 and worst_j <= 1e-9)
    if corridor is not None:
        ok = ok and worst_margin >= -1e-9
    report = {"velocity": worst_v, "acceleration": worst_a, "jerk": worst_j,
              "containment": worst_margin if corridor is not None else None}
    return ok, report
