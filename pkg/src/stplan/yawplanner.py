"""Heading planning decoupled from position.

A layered graph search picks a sequence of discrete yaw angles along the
committed position trajectory, trading off watching uncertain moving
obstacles against looking where the vehicle is going. The discrete sequence
is then smoothed with a clamped uniform cubic B-spline fit under a hard
yaw-rate bound on the spline's rate control points.

Cost convention: each layer charges a penalty for every relevant target the
candidate heading does NOT cover (field-of-view cone test). A target is
either a tracked obstacle inside the cutoff radius or the direction of
motion, the latter probed t_lookup seconds ahead along the trajectory.
Uncovered obstacles charge their collision likelihood, mean speed and
inverse distance; every uncovered target charges the time since it was last
covered. A quadratic step penalty keeps the sequence smooth and an optional
terminal term pulls the final heading toward a reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .smallqp import solve_qp
from .types import PlanningError

SPLINE_DEGREE = 3
RIDGE = 1e-13


def wrap_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


@dataclass
class YawParams:
    s_steps: int = 10
    n_yaw: int = 12
    k_samples: int = 5         # collision-likelihood time samples
    m_samples: int = 5         # obstacle-speed time samples
    cutoff: float = 6.0        # obstacle relevance radius, meters
    t_lookup: float = 1.0      # motion-direction probe, seconds
    fov_half_angle: float = math.pi / 4.0
    omega_max: float = 2.0
    w_collision: float = 1.0
    w_velocity: float = 0.5
    w_observed: float = 1.0
    w_proximity: float = 0.5
    w_yaw: float = 0.3
    w_final: float = 1.0


@dataclass
class YawNode:
    """One explored state in the layered search."""

    yaw: float                 # normalized to (-pi, pi]
    t_index: int
    cost: float
    parent: "YawNode | None" = None


@dataclass
class YawPlan:
    """Discrete headings plus the fitted spline that tracks them."""

    psi_opt: np.ndarray        # (S,) unwrapped discrete sequence
    control_points: np.ndarray
    knots: np.ndarray
    t_total: float
    omega_max: float

    def value_at(self, t: float) -> float:
        tau = float(np.clip(t, 0.0, self.t_total))
        spline = BSpline(self.knots, self.control_points, SPLINE_DEGREE,
                         extrapolate=False)
        return float(spline(tau))

    def rate_points(self) -> np.ndarray:
        q = self.control_points
        out = np.empty(q.size - 1)
        for i in range(out.size):
            span = self.knots[i + SPLINE_DEGREE + 1] - self.knots[i + 1]
            out[i] = SPLINE_DEGREE / span * (q[i + 1] - q[i])
        return out

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_total, self.psi_opt.size)

    def export_rows(self) -> list:
        """(t_i, discrete psi_i, fitted psi(t_i)) triples for metrics."""
        return [(float(t), float(p), self.value_at(float(t)))
                for t, p in zip(self.sample_times(), self.psi_opt)]


def blended_covariance(track, t: float, t_cur: float,
                       t_total: float) -> np.ndarray:
    """Filter covariance near now, regression residuals near the horizon."""
    if t_total <= 0.0:
        return np.array(track.sigma_ekf, dtype=float)
    s = float(np.clip((t - t_cur) / t_total, 0.0, 1.0))
    return (1.0 - s) * track.sigma_ekf + s * track.sigma_poly


def collision_likelihood(traj, track, t_cur: float, t_end: float,
                         k_samples: int = 5, flags: list | None = None) -> float:
    """Mean Gaussian overlap between agent and obstacle over the horizon."""
    if k_samples < 1:
        raise ValueError("need at least one sample")
    t_total = t_end - t_cur
    ts = np.linspace(t_cur, t_end, k_samples)
    acc = 0.0
    for t in ts:
        r = traj.position(float(t)) - track.position_at(float(t))
        sigma = blended_covariance(track, float(t), t_cur, t_total)
        try:
            sol = np.linalg.solve(sigma, r)
            if not np.isfinite(sol).all():
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            sigma = sigma + 1e-9 * np.eye(3)
            sol = np.linalg.solve(sigma, r)
            if flags is not None and "sigma-regularized" not in flags:
                flags.append("sigma-regularized")
        acc += math.exp(-0.5 * float(r @ sol))
    return acc / k_samples


def mean_speed(track, t_cur: float, t_end: float, m_samples: int = 5) -> float:
    ts = np.linspace(t_cur, t_end, m_samples)
    acc = 0.0
    for t in ts:
        tau = float(np.clip(t - track.t0, 0.0, track.horizon))
        v = np.array([np.polyval(np.polyder(track.coeffs[ax]), tau)
                      for ax in range(3)])
        acc += float(np.linalg.norm(v))
    return acc / m_samples


def fov_covers(agent_pos, yaw: float, target_pos,
               half_angle: float) -> bool:
    """Horizontal cone test; a target with no horizontal offset counts as
    covered since yaw cannot change its visibility."""
    d = np.asarray(target_pos, dtype=float)[:2] \
        - np.asarray(agent_pos, dtype=float)[:2]
    norm = float(np.linalg.norm(d))
    if norm < 1e-9:
        return True
    bearing = math.atan2(d[1], d[0])
    return abs(wrap_angle(bearing - yaw)) <= half_angle + 1e-12


@dataclass
class SearchTables:
    """Precomputed geometry shared by the search and its tests."""

    layer_times: np.ndarray        # (S,)
    yaw_values: np.ndarray         # (n_yaw,)
    coverage: np.ndarray           # (S, n_yaw, n_targets) bool
    root_cover: np.ndarray         # (n_targets,) bool, start yaw at layer 0
    static_penalty: np.ndarray     # (n_targets,) per-layer uncovered charge
    init_obs_times: np.ndarray     # (n_targets,) last-observed before start
    rate_budget: float             # max |yaw step| per layer


def build_search_tables(traj, tracks, params: YawParams,
                        psi_start: float) -> SearchTables:
    t_cur = traj.t0
    t_end = traj.end_time
    t_total = t_end - t_cur
    s_steps = params.s_steps
    # Layers span the whole trajectory inclusive of both ends so the fitted
    # yaw is defined up to t_end.
    layer_times = np.linspace(t_cur, t_end, s_steps)
    yaw_values = np.array([wrap_angle(-math.pi + 2.0 * math.pi * k
                                      / params.n_yaw)
                           for k in range(params.n_yaw)])

    target_pos = []                # per target, (S, 3) positions
    static_pen = []
    init_obs = []
    for track in tracks:
        dist = float(np.linalg.norm(traj.position(t_cur)
                                    - track.position_at(t_cur)))
        if dist > params.cutoff:
            continue
        u_col = collision_likelihood(traj, track, t_cur, t_end,
                                     params.k_samples)
        u_vel = mean_speed(track, t_cur, t_end, params.m_samples)
        u_prox = 1.0 / max(dist, 1e-6)
        static_pen.append(params.w_collision * u_col
                          + params.w_velocity * u_vel
                          + params.w_proximity * u_prox)
        init_obs.append(min(track.t0, t_cur))
        target_pos.append(np.array([track.position_at(float(t))
                                    for t in layer_times]))
    # Direction of motion probed ahead along the plan; charged only through
    # the last-covered clock.
    static_pen.append(0.0)
    init_obs.append(t_cur)
    target_pos.append(np.array([
        traj.position(float(min(t + params.t_lookup, t_end)))
        for t in layer_times]))

    n_t = len(target_pos)
    coverage = np.zeros((s_steps, params.n_yaw, n_t), dtype=bool)
    for i, t in enumerate(layer_times):
        apos = traj.position(float(t))
        for j, yaw in enumerate(yaw_values):
            for k in range(n_t):
                coverage[i, j, k] = fov_covers(apos, float(yaw),
                                               target_pos[k][i],
                                               params.fov_half_angle)
    apos0 = traj.position(float(layer_times[0]))
    root_cover = np.array([fov_covers(apos0, psi_start, target_pos[k][0],
                                      params.fov_half_angle)
                           for k in range(n_t)])
    return SearchTables(layer_times=layer_times, yaw_values=yaw_values,
                        coverage=coverage, root_cover=root_cover,
                        static_penalty=np.asarray(static_pen),
                        init_obs_times=np.asarray(init_obs),
                        rate_budget=params.omega_max
                        * (t_total / (s_steps - 1)))


def _dominates(cost_a, obs_a, cost_b, obs_b) -> bool:
    return cost_a <= cost_b and all(x >= y for x, y in zip(obs_a, obs_b))


def yaw_graph_search(traj, tracks, params: YawParams, psi_start: float,
                     psi_terminal: float | None = None,
                     tables: SearchTables | None = None) -> np.ndarray:
    """Minimum-cost discrete yaw sequence, unwrapped, length s_steps.

    Exact dynamic program over (layer, yaw, per-target last-covered layer);
    dominated states (worse cost, staler coverage) are pruned.
    """
    if params.s_steps < 2:
        raise ValueError("need at least two layers")
    if params.n_yaw < 3:
        raise ValueError("need at least three yaw values")
    if tables is None:
        tables = build_search_tables(traj, tracks, params, psi_start)
    step = 2.0 * math.pi / params.n_yaw
    if tables.rate_budget < step - 1e-12:
        raise PlanningError(
            "infeasible-rate",
            "per-layer budget %.4f below discretization %.4f"
            % (tables.rate_budget, step))

    s_steps = params.s_steps
    n_t = tables.static_penalty.size
    times = tables.layer_times
    yaws = tables.yaw_values

    def obs_time(code: int, k: int) -> float:
        return tables.init_obs_times[k] if code < 0 else times[code]

    root_obs = tuple(0 if tables.root_cover[k] else -1 for k in range(n_t))
    root = YawNode(yaw=wrap_angle(psi_start), t_index=0, cost=0.0)
    # frontier: (yaw index, obs codes) -> node; root uses index -1.
    frontier = {(-1, root_obs): root}

    for i in range(s_steps - 1):
        nxt: dict = {}
        for (j_prev, obs), node in sorted(frontier.items(),
                                          key=lambda kv: kv[0]):
            prev_yaw = psi_start if j_prev < 0 else yaws[j_prev]
            for j in range(params.n_yaw):
                d = wrap_angle(float(yaws[j]) - float(prev_yaw))
                if abs(d) > tables.rate_budget + 1e-9:
                    continue
                pen = params.w_yaw * d * d
                new_obs = list(obs)
                for k in range(n_t):
                    if tables.coverage[i + 1, j, k]:
                        new_obs[k] = i + 1
                    else:
                        pen += tables.static_penalty[k] \
                            + params.w_observed \
                            * (times[i + 1] - obs_time(obs[k], k))
                if i + 1 == s_steps - 1 and psi_terminal is not None:
                    dterm = wrap_angle(float(yaws[j]) - psi_terminal)
                    pen += params.w_final * dterm * dterm
                key = (j, tuple(new_obs))
                cost = node.cost + pen
                cur = nxt.get(key)
                if cur is None or cost < cur.cost - 1e-15:
                    nxt[key] = YawNode(yaw=float(yaws[j]), t_index=i + 1,
                                       cost=cost, parent=node)
        # dominance pruning per yaw value
        pruned: dict = {}
        by_yaw: dict = {}
        for (j, obs), node in sorted(nxt.items(), key=lambda kv: kv[0]):
            keep = True
            drop = []
            for obs2, node2 in by_yaw.get(j, []):
                if _dominates(node2.cost, obs2, node.cost, obs):
                    keep = False
                    break
                if _dominates(node.cost, obs, node2.cost, obs2):
                    drop.append(obs2)
            if keep:
                kept = [(o, n) for o, n in by_yaw.get(j, [])
                        if o not in drop]
                kept.append((obs, node))
                by_yaw[j] = kept
        for j, entries in by_yaw.items():
            for obs, node in entries:
                pruned[(j, obs)] = node
        frontier = pruned
        if not frontier:
            raise PlanningError("infeasible-rate", "no reachable yaw layer")

    best_key = None
    best = None
    for key, node in sorted(frontier.items(), key=lambda kv: kv[0]):
        if best is None or node.cost < best.cost - 1e-15:
            best_key = key
            best = node
    assert best is not None

    chain = []
    node = best
    while node is not None:
        chain.append(node.yaw)
        node = node.parent
    chain.reverse()
    seq = np.empty(s_steps)
    seq[0] = psi_start
    for i in range(1, s_steps):
        seq[i] = seq[i - 1] + wrap_angle(chain[i] - wrap_angle(seq[i - 1]))
    return seq


def sequence_cost(tables: SearchTables, params: YawParams, seq,
                  psi_terminal: float | None = None) -> float:
    """Cost of a given discrete yaw sequence under the search's accounting.

    seq[0] is the (given) start yaw and carries no charge.
    """
    seq = np.asarray(seq, dtype=float)
    s_steps = seq.size
    n_t = tables.static_penalty.size
    times = tables.layer_times
    obs = [times[0] if tables.root_cover[k] else tables.init_obs_times[k]
           for k in range(n_t)]
    total = 0.0
    for i in range(1, s_steps):
        yaw = wrap_angle(float(seq[i]))
        j = int(np.argmin(np.abs([wrap_angle(yaw - float(y))
                                  for y in tables.yaw_values])))
        d = wrap_angle(float(seq[i]) - float(seq[i - 1]))
        total += params.w_yaw * d * d
        for k in range(n_t):
            if tables.coverage[i, j, k]:
                obs[k] = times[i]
            else:
                total += tables.static_penalty[k] \
                    + params.w_observed * (times[i] - obs[k])
        if i == s_steps - 1 and psi_terminal is not None:
            dterm = wrap_angle(yaw - psi_terminal)
            total += params.w_final * dterm * dterm
    return total


def spline_knots(s_steps: int, t_total: float) -> np.ndarray:
    """Clamped uniform cubic knot vector for s_steps control points."""
    interior = np.linspace(0.0, t_total, s_steps - 2)[1:-1]
    return np.concatenate([np.zeros(4), interior, np.full(4, t_total)])


def fit_yaw_bspline(psi_opt, t_total: float, omega_max: float) -> YawPlan:
    """Least-squares clamped cubic B-spline under rate control-point bounds.

    The only unavoidable infeasibility is a net rotation larger than the
    rate budget over the whole duration; the telescoping sum of the rate
    control points equals the net rotation, so everything else is fixable.
    """
    psi = np.asarray(psi_opt, dtype=float)
    s_steps = psi.size
    if s_steps < 4:
        raise ValueError("need at least four yaw samples")
    if t_total <= 0.0:
        raise ValueError("duration must be positive")
    if abs(psi[-1] - psi[0]) > omega_max * t_total + 1e-9:
        raise PlanningError(
            "infeasible",
            "net rotation %.3f exceeds budget %.3f"
            % (abs(psi[-1] - psi[0]), omega_max * t_total))

    knots = spline_knots(s_steps, t_total)
    ts = np.linspace(0.0, t_total, s_steps)
    B = BSpline.design_matrix(ts, knots, SPLINE_DEGREE).toarray()

    # Clamp the endpoints and optimize the interior control points.
    free = list(range(1, s_steps - 1))
    B_f = B[:, free]
    fixed = B[:, 0] * psi[0] + B[:, -1] * psi[-1]
    H = 2.0 * (B_f.T @ B_f) + 2.0 * RIDGE * np.eye(len(free))
    g = 2.0 * B_f.T @ (fixed - psi)

    spans = np.array([knots[i + SPLINE_DEGREE + 1] - knots[i + 1]
                      for i in range(s_steps - 1)])
    coef = SPLINE_DEGREE / spans
    rows = []
    rhs = []
    for i in range(s_steps - 1):
        row = np.zeros(len(free))
        offset = 0.0
        for idx, sign in ((i + 1, 1.0), (i, -1.0)):
            if idx == 0:
                offset += sign * coef[i] * psi[0]
            elif idx == s_steps - 1:
                offset += sign * coef[i] * psi[-1]
            else:
                row[idx - 1] = sign * coef[i]
        rows.append(row)
        rhs.append(omega_max - offset)
        rows.append(-row)
        rhs.append(omega_max + offset)
    res = solve_qp(H, g, np.array(rows), np.array(rhs))
    if not res.ok:
        raise PlanningError("infeasible", "rate-bounded fit: %s" % res.status)
    q = np.empty(s_steps)
    q[0] = psi[0]
    q[-1] = psi[-1]
    q[1:-1] = res.x
    return YawPlan(psi_opt=psi.copy(), control_points=q, knots=knots,
                   t_total=t_total, omega_max=omega_max)


def plan_yaw(traj, tracks, params: YawParams, psi_start: float,
             psi_terminal: float | None = None) -> YawPlan:
    seq = yaw_graph_search(traj, tracks, params, psi_start, psi_terminal)
    t_total = traj.end_time - traj.t0
    return fit_yaw_bspline(seq, t_total, params.omega_max)
