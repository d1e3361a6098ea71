"""Commitment state machine around the local planner.

A committed plan is an exploratory spline plus a batch of stopping splines
branching from it. The agent follows the exploratory part only up to the
branch point of the selected stopping spline, so the motion it is actually
committed to always ends at rest in known-free space. Monitoring re-checks
that committed chain against fresh obstacle predictions every step and
switches branches (or generates a contingency) when it stops being clear.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace as dc_replace
from typing import Sequence

import numpy as np

from .conflict import CONFLICT_STEP, first_conflict_index, sample_times
from .corridor import build_corridor
from .frontier import FrontierContext, detect_frontiers, score_frontier, select_best
from .global_planner import (StaticAdjustState, adjust_path_dynamic,
                             adjust_path_static, dgp, dynamic_astar)
from .trajopt import (FACTOR_RATIO, FACTOR_SET_SIZE, N_MIN, MiqpSpec,
                      PiecewiseCubicTrajectory, adapt_intervals, allocate_time,
                      check_constraints, final_state_for, generate_contingency,
                      solve_closed_form_n3)
from .types import BoundaryState, Limits, PlanningError, PredictedTrack
from .worldmodel import (FREE, UNKNOWN, VoxelGrid, WindowGrid, project_goal,
                         update_window)
from .yawplanner import YawParams, fit_yaw_bspline, yaw_graph_search

MAX_SAFE = 15
MIN_SAFE = 3
EMA_ALPHA = 0.9
DT_A_INIT = 0.05
H_STEP = 0.05
STOP_TIME_MIN = 0.6
STOP_TIME_MAX = 3.0
CONTINGENCY_D_MIN = 0.5
CONTINGENCY_D_MAX = 2.0
# How far past the rest point monitoring keeps sampling; matches the
# prediction horizon so a parked agent still sees approaching obstacles.
MONITOR_TAIL = 3.0

TIMING_KEYS = ("global_plan", "corridor", "exploratory_opt", "safe_opt",
               "yaw_search", "yaw_fit")


@dataclass
class ReplanClock:
    """Lead time between "now" and the start of the next plan."""

    dt_a: float = DT_A_INIT
    alpha: float = EMA_ALPHA

    def update(self, sample: float) -> float:
        self.dt_a = self.alpha * self.dt_a + (1.0 - self.alpha) * max(sample, 1e-4)
        return self.dt_a


@dataclass
class SafeBranch:
    t_branch: float
    traj: PiecewiseCubicTrajectory


@dataclass
class CommittedPlan:
    exploratory: PiecewiseCubicTrajectory
    safes: list[SafeBranch]
    active: int | None
    point_a: np.ndarray
    point_h: np.ndarray
    point_e: np.ndarray
    point_s: np.ndarray
    t_h: float
    yaw: object | None = None
    flags: list = field(default_factory=list)

    @property
    def t_start(self) -> float:
        return self.exploratory.t0

    @property
    def end_time(self) -> float:
        if self.active is not None:
            return self.safes[self.active].traj.end_time
        return self.exploratory.end_time

    def state_at(self, t: float) -> BoundaryState:
        """Committed chain state, clamped to the chain's time domain."""
        if self.active is not None:
            branch = self.safes[self.active]
            if t >= branch.t_branch:
                tt = min(max(t, branch.traj.t0), branch.traj.end_time)
                return branch.traj.state_at(tt)
        traj = self.exploratory
        tt = min(max(t, traj.t0), traj.end_time)
        return traj.state_at(tt)

    def position_at(self, t: float) -> np.ndarray:
        return self.state_at(t).position

    def chain_samples(self, t_from: float, step: float = CONFLICT_STEP,
                      tail: float = 0.0):
        """Sampled committed chain from t_from through its rest end.

        A positive tail extends the sampling past the end, where the chain
        holds the rest position; the monitor uses that to notice obstacles
        sweeping through the parking spot.
        """
        t_hi = max(self.end_time, t_from) + tail
        t_from = min(t_from, self.end_time)
        ts = sample_times(t_from, t_hi, step)
        pts = np.array([self.position_at(t) for t in ts])
        return pts, ts


@dataclass
class MonitorResult:
    outcome: str
    plan: CommittedPlan | None
    branch_index: int | None = None
    conflict_time: float | None = None


@dataclass
class ReplanReport:
    outcome: str
    timings: dict
    plan: CommittedPlan | None = None
    reason: str | None = None
    n_safe: int = 0
    n_intervals: int = 0
    elapsed: float = 0.0


def select_start(committed: CommittedPlan, now: float,
                 clock: ReplanClock) -> tuple[BoundaryState, float]:
    """Committed chain state one lead time ahead of now.

    Beyond the chain's end this clamps to the terminal rest state, so a
    hovering plan yields the hover state for any lead time.
    """
    t_a = now + clock.dt_a
    return committed.state_at(t_a), t_a


def _state_lookup(grid, point) -> int:
    if hasattr(grid, "local_index"):
        local = grid.local_index(point)
        if local is None:
            return -1
        return int(grid.states[local])
    return int(grid.state_at(point))


def find_point_h(traj: PiecewiseCubicTrajectory, grid,
                 step: float = H_STEP) -> tuple[np.ndarray, float]:
    """First trajectory sample inside an Unknown voxel; endpoint if none.

    Out-of-window samples count as Unknown: the window is the certified
    region, so leaving it is treated like entering unexplored space.
    """
    for t in sample_times(traj.t0, traj.end_time, step):
        p = traj.position(t)
        state = _state_lookup(grid, p)
        if state == UNKNOWN or state == -1:
            return np.asarray(p, dtype=float), float(t)
    t_end = traj.end_time
    return np.asarray(traj.position(t_end), dtype=float), float(t_end)


def _stopping_spline(state: BoundaryState, limits: Limits,
                     t0: float) -> PiecewiseCubicTrajectory | None:
    """Shortest limit-feasible three-interval stop from the given state.

    Nonzero entry acceleration makes short stops jerk-infeasible, so the
    duration is escalated until the limit check passes; None when even the
    longest attempt fails.
    """
    vel = np.asarray(state.velocity, dtype=float)
    speed = float(np.linalg.norm(vel))
    base = min(max(1.5 * speed / limits.a_max, STOP_TIME_MIN), STOP_TIME_MAX)
    for factor in (1.0, 1.5, 2.25, 3.4):
        t_stop = factor * base
        rest = BoundaryState(np.asarray(state.position, dtype=float)
                             + 0.5 * vel * t_stop)
        spline = solve_closed_form_n3(state, rest, t_stop / 3.0, t0)
        ok, _ = check_constraints(spline, None, limits)
        if ok:
            return spline
    return None


def _in_known_free(traj: PiecewiseCubicTrajectory, view: WindowGrid,
                   step: float = H_STEP) -> bool:
    for t in sample_times(traj.t0, traj.end_time, step):
        local = view.local_index(traj.position(t))
        if local is None:
            return False
        if view.states[local] != FREE or view.blocked[local]:
            return False
    return True


def _clear_of_tracks(traj: PiecewiseCubicTrajectory,
                     tracks: Sequence[PredictedTrack],
                     inflate: float) -> bool:
    if not tracks:
        return True
    ts = sample_times(traj.t0, traj.end_time, CONFLICT_STEP)
    pts = [traj.position(t) for t in ts]
    return first_conflict_index(pts, ts, tracks, inflate) is None


def generate_safe_batch(exploratory: PiecewiseCubicTrajectory, t_a: float,
                        t_h: float, view: WindowGrid,
                        predictions: Sequence[PredictedTrack], limits: Limits,
                        max_count: int = MAX_SAFE, min_safe: int = MIN_SAFE,
                        agent_radius: float = 0.0) -> list[SafeBranch]:
    """Stopping splines branched at evenly spaced times in [A, H].

    A spline is kept only when it passes the limit check, stays in
    known-free voxels, and clears the predictions. Fewer than min_safe
    survivors raise "discard-exploratory".
    """
    if t_h < t_a - 1e-9:
        raise ValueError("branch interval end precedes start")
    if t_h - t_a <= 1e-9:
        times = np.array([t_a])
    else:
        times = np.linspace(t_a, t_h, max_count)
    accepted: list[SafeBranch] = []
    for tb in times:
        state = exploratory.state_at(float(tb))
        spline = _stopping_spline(state, limits, float(tb))
        if spline is None:
            continue
        if not _in_known_free(spline, view):
            continue
        if not _clear_of_tracks(spline, predictions, agent_radius):
            continue
        accepted.append(SafeBranch(float(tb), spline))
    if len(accepted) < min_safe:
        raise PlanningError("discard-exploratory",
                            "%d of %d stopping splines accepted"
                            % (len(accepted), len(times)))
    return accepted


def _candidate_chain_clear(plan: CommittedPlan, branch: SafeBranch,
                           t_from: float, tracks, inflate: float) -> bool:
    ts_pre = sample_times(t_from, branch.t_branch, CONFLICT_STEP)
    pts = [plan.exploratory.state_at(min(max(t, plan.t_start),
                                         plan.exploratory.end_time)).position
           for t in ts_pre]
    t_end = branch.traj.end_time
    ts_safe = sample_times(branch.t_branch, t_end + MONITOR_TAIL, CONFLICT_STEP)
    pts += [branch.traj.position(min(t, t_end)) for t in ts_safe]
    ts = np.concatenate([ts_pre, ts_safe])
    return first_conflict_index(pts, ts, tracks, inflate) is None


def monitor_and_switch(plan: CommittedPlan, predictions, grid, now: float,
                       limits: Limits, agent_radius: float = 0.0,
                       step: float = CONFLICT_STEP) -> MonitorResult:
    """Re-check the committed chain; switch branch or fall back.

    Outcomes: "unchanged" when the chain is clear; "switched" commits the
    earliest conflict-free branch later than now; "contingency" replaces the
    plan with an evasive stopping spline; "stop" when even that fails.
    """
    t_from = max(now, plan.t_start)
    pts, ts = plan.chain_samples(t_from, step, tail=MONITOR_TAIL)
    idx = first_conflict_index(list(pts), list(ts), predictions, agent_radius)
    if idx is None:
        return MonitorResult("unchanged", plan)
    t_conf = float(ts[idx])
    p_conf = np.asarray(pts[idx], dtype=float)

    for j, branch in enumerate(plan.safes):
        if branch.t_branch <= now:
            continue
        if _candidate_chain_clear(plan, branch, t_from, predictions,
                                  agent_radius):
            switched = dc_replace(
                plan, active=j,
                point_s=np.asarray(branch.traj.position(branch.traj.end_time),
                                   dtype=float),
                flags=list(plan.flags) + ["case1"])
            return MonitorResult("switched", switched, branch_index=j,
                                 conflict_time=t_conf)

    state_now = plan.state_at(t_from)
    speed = float(np.linalg.norm(state_now.velocity))
    t_stop = min(max(1.5 * speed / limits.a_max, STOP_TIME_MIN), STOP_TIME_MAX)
    view = _contingency_view(grid, state_now.position, agent_radius)
    cont = None
    for factor in (1.0, 1.5, 2.25, 3.4):
        cont = generate_contingency(state_now, p_conf, t_conf,
                                    CONTINGENCY_D_MIN, CONTINGENCY_D_MAX,
                                    limits, factor * t_stop / 3.0,
                                    view=view, tracks=predictions,
                                    agent_radius=agent_radius, t0=t_from)
        if "stop-command" not in cont.flags:
            break
    stopped = "stop-command" in cont.flags
    end_pos = np.asarray(cont.position(cont.end_time), dtype=float)
    tag = "stop-command" if stopped else "case2"
    new_plan = CommittedPlan(
        exploratory=cont, safes=[], active=None,
        point_a=np.asarray(state_now.position, dtype=float),
        point_h=end_pos, point_e=end_pos, point_s=end_pos,
        t_h=cont.end_time, yaw=None, flags=list(plan.flags) + [tag])
    outcome = "stop" if stopped else "contingency"
    return MonitorResult(outcome, new_plan, conflict_time=t_conf)


def _contingency_view(grid, position, agent_radius: float):
    if grid is None or hasattr(grid, "local_index"):
        return grid
    pos = np.asarray(position, dtype=float)
    window = update_window(pos, pos)
    return WindowGrid(grid, window, agent_radius)


class Replanner:
    """Owns the committed plan and runs the full replanning pipeline.

    A freshly planned exploratory chain starts one lead time in the future;
    it is held pending until the clock reaches its start so the agent keeps
    flying the previous commitment across the seam.
    """

    def __init__(self, grid: VoxelGrid, limits: Limits, terminal_goal,
                 mode: str = "goal", horizon: float = 10.0,
                 agent_radius: float = 0.3,
                 yaw_params: YawParams | None = None,
                 max_safe: int = MAX_SAFE, min_safe: int = MIN_SAFE,
                 planner: str = "dgp"):
        if planner not in ("dgp", "dynamic-astar"):
            raise ValueError("planner must be dgp or dynamic-astar")
        self.grid = grid
        self.limits = limits
        self.terminal = np.asarray(terminal_goal, dtype=float)
        self.mode = mode
        self.horizon = horizon
        self.agent_radius = agent_radius
        self.yaw_params = yaw_params or YawParams()
        self.max_safe = max_safe
        self.min_safe = min_safe
        self.planner = planner
        self.clock = ReplanClock()
        self.committed: CommittedPlan | None = None
        self.pending: CommittedPlan | None = None
        self.n_intervals = N_MIN
        self.factors = [FACTOR_RATIO ** i for i in range(FACTOR_SET_SIZE)]
        self.static_adjust = StaticAdjustState()
        self.f_best = None
        self.last_corridor = None

    # -- plan bookkeeping

    def promote(self, now: float) -> None:
        if self.pending is not None and now + 1e-12 >= self.pending.t_start:
            self.committed = self.pending
            self.pending = None

    def committed_state(self, t: float) -> BoundaryState | None:
        self.promote(t)
        if self.committed is None:
            return None
        return self.committed.state_at(t)

    def _adopt(self, plan: CommittedPlan) -> None:
        if self.committed is None:
            self.committed = plan
            self.pending = None
        else:
            self.pending = plan

    # -- monitoring

    def monitor(self, now: float, tracks) -> MonitorResult:
        self.promote(now)
        if self.committed is None:
            return MonitorResult("unchanged", None)
        res = monitor_and_switch(self.committed, tracks, self.grid, now,
                                 self.limits, self.agent_radius)
        if res.outcome != "unchanged":
            self.committed = res.plan
            self.pending = None
        return res

    # -- replanning pipeline

    def replan_once(self, now: float, agent_state: BoundaryState,
                    agent_yaw: float, tracks) -> ReplanReport:
        timings = dict.fromkeys(TIMING_KEYS, 0.0)
        started = time.perf_counter()

        def fail(stage: str, err: Exception) -> ReplanReport:
            reason = err.reason if isinstance(err, PlanningError) else str(err)
            return ReplanReport(outcome="failed-" + stage, timings=timings,
                                plan=self.committed, reason=reason,
                                elapsed=time.perf_counter() - started)

        self.promote(now)
        if self.committed is None:
            start, t_a = agent_state, now + self.clock.dt_a
        else:
            start, t_a = select_start(self.committed, now, self.clock)
        start_pos = np.asarray(start.position, dtype=float)

        t_stage = time.perf_counter()
        projected = project_goal(start_pos, self.terminal, self.horizon)
        window = update_window(start_pos, projected)
        view = WindowGrid(self.grid, window, self.agent_radius)
        goal = projected
        if self.mode == "explore":
            try:
                goal = self._frontier_goal(view, start_pos, agent_yaw, window)
            except PlanningError as err:
                return fail("sub_goal", err)
        point_e = np.asarray(goal, dtype=float)

        try:
            if self.planner == "dynamic-astar":
                path = dynamic_astar(view, start_pos, start.velocity, t_a,
                                     goal, tracks, self.limits)
            else:
                path, _stats = dgp(view, start_pos, start.velocity, t_a, goal,
                                   tracks, self.limits)
            path = adjust_path_dynamic(path, tracks)
            path = adjust_path_static(path, view, memory=self.static_adjust)
        except PlanningError as err:
            timings["global_plan"] = time.perf_counter() - t_stage
            return fail("global_plan", err)
        timings["global_plan"] = time.perf_counter() - t_stage

        t_stage = time.perf_counter()
        try:
            corridor = build_corridor(path.positions(), self.grid, tracks,
                                      self.limits, self.agent_radius, t0=t_a)
        except PlanningError as err:
            timings["corridor"] = time.perf_counter() - t_stage
            return fail("corridor", err)
        timings["corridor"] = time.perf_counter() - t_stage
        self.last_corridor = corridor

        t_stage = time.perf_counter()
        try:
            traj = self._solve_exploratory(corridor, start, t_a)
        except PlanningError as err:
            timings["exploratory_opt"] = time.perf_counter() - t_stage
            return fail("exploratory_opt", err)
        timings["exploratory_opt"] = time.perf_counter() - t_stage

        t_stage = time.perf_counter()
        h_pt, t_h = find_point_h(traj, view)
        try:
            safes = generate_safe_batch(traj, t_a, t_h, view, tracks,
                                        self.limits, self.max_safe,
                                        self.min_safe, self.agent_radius)
        except PlanningError as err:
            timings["safe_opt"] = time.perf_counter() - t_stage
            return fail("safe_opt", err)
        timings["safe_opt"] = time.perf_counter() - t_stage
        ends = [b.traj.position(b.traj.end_time) for b in safes]
        active = int(np.argmin([np.linalg.norm(e - h_pt) for e in ends]))

        y_params = dc_replace(self.yaw_params, omega_max=self.limits.yaw_rate)
        psi_term = self._terminal_yaw(traj, point_e)
        t_stage = time.perf_counter()
        try:
            seq = yaw_graph_search(traj, tracks, y_params, agent_yaw, psi_term)
        except PlanningError as err:
            timings["yaw_search"] = time.perf_counter() - t_stage
            return fail("yaw_search", err)
        timings["yaw_search"] = time.perf_counter() - t_stage
        t_stage = time.perf_counter()
        try:
            yaw_plan = fit_yaw_bspline(seq, traj.end_time - traj.t0,
                                       y_params.omega_max)
        except PlanningError as err:
            timings["yaw_fit"] = time.perf_counter() - t_stage
            return fail("yaw_fit", err)
        timings["yaw_fit"] = time.perf_counter() - t_stage

        plan = CommittedPlan(
            exploratory=traj, safes=safes, active=active, point_a=start_pos,
            point_h=h_pt, point_e=point_e,
            point_s=np.asarray(ends[active], dtype=float), t_h=t_h,
            yaw=yaw_plan)
        self._adopt(plan)
        return ReplanReport(outcome="ok", timings=timings, plan=plan,
                            n_safe=len(safes), n_intervals=self.n_intervals,
                            elapsed=time.perf_counter() - started)

    def _frontier_goal(self, view, start_pos, agent_yaw, window):
        frontiers = detect_frontiers(view)
        ctx = FrontierContext(agent_pos=start_pos, yaw=agent_yaw,
                              v_max=self.limits.v_max,
                              d_max=window.radius, f_best=self.f_best)
        for f in frontiers:
            score_frontier(f, ctx, frontiers)
        best = select_best(frontiers)
        self.f_best = np.asarray(best.position, dtype=float)
        return best.position

    def _solve_exploratory(self, corridor, start, t_a):
        x_final = final_state_for(corridor)
        # The mixed-integer solve needs at least one interval per polyhedron.
        n = max(self.n_intervals, len(corridor.polys))
        factors = list(self.factors)
        while True:
            template = MiqpSpec(corridor, start, x_final, n, dt=0.1,
                                limits=self.limits)
            try:
                traj, _assign, _f, next_set, _info = allocate_time(
                    template, factors, t0=t_a)
                self.factors = next_set
                self.n_intervals = adapt_intervals(True, n)
                return traj
            except PlanningError as err:
                if isinstance(err.detail, dict) and "next_factors" in err.detail:
                    factors = err.detail["next_factors"]
                grown = adapt_intervals(False, n)
                if grown == n:
                    self.factors = factors
                    raise
                n = grown

    def _terminal_yaw(self, traj, point_e):
        end = traj.position(traj.end_time)
        d = np.asarray(point_e, dtype=float) - end
        if float(np.hypot(d[0], d[1])) < 0.3:
            return None
        return float(np.arctan2(d[1], d[0]))
