"""Tests for the commitment state machine and the replanning pipeline."""

import numpy as np
import pytest

from stplan.framework import (CommittedPlan, MonitorResult, ReplanClock,
                              Replanner, SafeBranch, MONITOR_TAIL, TIMING_KEYS,
                              find_point_h, generate_safe_batch,
                              monitor_and_switch, select_start)
from stplan.trajopt import PiecewiseCubicTrajectory
from stplan.types import BoundaryState, Limits, PlanningError
from stplan.worldmodel import FREE, OCCUPIED, UNKNOWN, VoxelGrid

from gridutil import make_view, make_view_states, make_track
from test_trajopt import box_poly, make_corridor


def straight_traj(p0, v, duration, n_seg=4, t0=0.0):
    dt = duration / n_seg
    coeffs = np.zeros((n_seg, 3, 4))
    for s in range(n_seg):
        for ax in range(3):
            coeffs[s, ax, 2] = v[ax]
            coeffs[s, ax, 3] = p0[ax] + v[ax] * s * dt
    return PiecewiseCubicTrajectory(coeffs, dt, t0=t0)


def box_swept(pts, ts, track, inflate=0.0):
    """Independent axis-aligned box sweep check against one prediction."""
    margin = track.extent + inflate
    for p, t in zip(pts, ts):
        c = track.position_at(float(t))
        if np.all(np.abs(np.asarray(p) - c) <= margin + 1e-12):
            return True
    return False


def chain_points(plan, t_from, t_to, step=0.01):
    ts = np.arange(t_from, t_to + step / 2, step)
    return [plan.position_at(float(t)) for t in ts], ts


def free_plan(speed=1.0, duration=6.0, t0=0.0, tracks=(), view=None):
    """Committed plan over an open view: straight exploratory plus a full
    batch of stopping splines, active branch chosen nearest the endpoint."""
    if view is None:
        view = make_view(np.zeros((40, 12, 8), dtype=bool))
    traj = straight_traj((3.0, 6.0, 4.0), (speed, 0.0, 0.0), duration, t0=t0)
    limits = Limits()
    safes = generate_safe_batch(traj, t0, traj.end_time, view, list(tracks),
                                limits)
    h_pt = traj.position(traj.end_time)
    ends = [b.traj.position(b.traj.end_time) for b in safes]
    active = int(np.argmin([np.linalg.norm(e - h_pt) for e in ends]))
    return CommittedPlan(
        exploratory=traj, safes=safes, active=active,
        point_a=traj.position(t0), point_h=h_pt, point_e=h_pt,
        point_s=np.asarray(ends[active]), t_h=traj.end_time), view, limits


class TestReplanClock:
    def test_exponential_average_step(self):
        clock = ReplanClock(dt_a=0.010)
        out = clock.update(0.020)
        assert out == pytest.approx(0.011, abs=1e-15)
        assert clock.dt_a == pytest.approx(0.011, abs=1e-15)

    def test_lead_time_stays_positive(self):
        clock = ReplanClock(dt_a=0.001)
        for _ in range(200):
            clock.update(0.0)
            assert clock.dt_a > 0.0
        assert clock.dt_a == pytest.approx(1e-4, rel=1e-6)

    def test_negative_sample_clamped(self):
        clock = ReplanClock(dt_a=0.05)
        clock.update(-3.0)
        assert clock.dt_a == pytest.approx(0.9 * 0.05 + 0.1 * 1e-4)


class TestSelectStart:
    def _plan(self, v=(1.0, 0.0, 0.0), duration=4.0):
        traj = straight_traj((1.0, 5.0, 3.0), v, duration)
        end = traj.position(traj.end_time)
        return CommittedPlan(exploratory=traj, safes=[], active=None,
                             point_a=traj.position(0.0), point_h=end,
                             point_e=end, point_s=end, t_h=traj.end_time)

    def test_lead_time_lookup(self):
        plan = self._plan()
        clock = ReplanClock(dt_a=0.05)
        state, t_a = select_start(plan, 1.0, clock)
        assert t_a == pytest.approx(1.05)
        assert np.allclose(state.position, [2.05, 5.0, 3.0])
        assert np.allclose(state.velocity, [1.0, 0.0, 0.0])

    def test_beyond_end_clamps_to_terminal_state(self):
        plan = self._plan()
        clock = ReplanClock(dt_a=0.05)
        state, t_a = select_start(plan, 10.0, clock)
        assert t_a == pytest.approx(10.05)
        assert np.allclose(state.position, plan.exploratory.position(4.0))

    def test_hover_plan_returns_hover_state(self):
        plan = self._plan(v=(0.0, 0.0, 0.0), duration=1.0)
        clock = ReplanClock(dt_a=0.2)
        for now in (0.0, 0.5, 7.0):
            state, _ = select_start(plan, now, clock)
            assert np.allclose(state.position, [1.0, 5.0, 3.0])
            assert np.linalg.norm(state.velocity) == 0.0


class TestFindPointH:
    def test_fully_known_free_returns_endpoint(self):
        view = make_view(np.zeros((12, 6, 6), dtype=bool))
        traj = straight_traj((1.0, 3.0, 3.0), (1.0, 0.0, 0.0), 6.0)
        p, t = find_point_h(traj, view)
        assert t == pytest.approx(traj.end_time)
        assert np.allclose(p, traj.position(traj.end_time))

    def test_unknown_halfspace_boundary(self):
        states = np.full((10, 4, 4), FREE)
        states[5:, :, :] = UNKNOWN
        view = make_view_states(states)
        traj = straight_traj((0.3, 2.0, 2.0), (1.0, 0.0, 0.0), 8.0)
        p, t = find_point_h(traj, view)
        # first sample at or past the known/unknown plane at x = 5
        assert p[0] >= 5.0 - 1e-9
        assert p[0] <= 5.0 + 0.05 * 1.0 + 1e-9
        assert t < traj.end_time
        prev = traj.position(t - 0.05)
        assert prev[0] < 5.0

    def test_start_in_unknown_returns_start(self):
        states = np.full((10, 4, 4), UNKNOWN)
        view = make_view_states(states)
        traj = straight_traj((1.5, 2.0, 2.0), (1.0, 0.0, 0.0), 4.0, t0=2.0)
        p, t = find_point_h(traj, view)
        assert t == pytest.approx(2.0)
        assert np.allclose(p, [1.5, 2.0, 2.0])

    def test_leaving_window_counts_as_unknown(self):
        view = make_view(np.zeros((6, 4, 4), dtype=bool))
        traj = straight_traj((1.0, 2.0, 2.0), (1.0, 0.0, 0.0), 10.0)
        p, t = find_point_h(traj, view)
        assert t < traj.end_time
        assert p[0] >= 6.0 - 1e-9


class TestGenerateSafeBatch:
    def test_open_view_full_batch(self):
        plan, view, limits = free_plan(speed=1.0, duration=6.0)
        assert len(plan.safes) == 15
        expect = np.linspace(0.0, 6.0, 15)
        times = [b.t_branch for b in plan.safes]
        assert np.allclose(times, expect)
        for b in plan.safes:
            assert b.traj.t0 == pytest.approx(b.t_branch)

    def test_every_branch_ends_at_rest(self):
        plan, _, _ = free_plan(speed=2.0, duration=5.0)
        for b in plan.safes:
            end = b.traj.state_at(b.traj.end_time)
            assert np.linalg.norm(end.velocity) <= 1e-9
            assert np.linalg.norm(end.acceleration) <= 1e-9

    def test_branches_stay_in_known_free(self):
        plan, view, _ = free_plan(speed=2.0, duration=5.0)
        for b in plan.safes:
            for t in np.arange(b.traj.t0, b.traj.end_time + 1e-9, 0.05):
                p = b.traj.position(float(t))
                assert view.grid.state_at(p) == FREE

    def test_wall_ahead_discards_exploratory(self):
        occ = np.zeros((10, 8, 8), dtype=bool)
        occ[5:, :, :] = True
        view = make_view(occ)
        traj = straight_traj((4.0, 4.0, 4.0), (2.5, 0.0, 0.0), 2.0)
        with pytest.raises(PlanningError) as err:
            generate_safe_batch(traj, 0.0, 2.0, view, [], Limits())
        assert err.value.reason == "discard-exploratory"

    def test_degenerate_interval_single_candidate(self):
        view = make_view(np.zeros((12, 8, 8), dtype=bool))
        traj = straight_traj((4.0, 4.0, 4.0), (1.0, 0.0, 0.0), 3.0)
        safes = generate_safe_batch(traj, 1.0, 1.0, view, [], Limits(),
                                    min_safe=1)
        assert len(safes) == 1
        assert safes[0].t_branch == pytest.approx(1.0)
        end = safes[0].traj.state_at(safes[0].traj.end_time)
        assert np.linalg.norm(end.velocity) <= 1e-9

    def test_reversed_interval_rejected(self):
        view = make_view(np.zeros((8, 8, 8), dtype=bool))
        traj = straight_traj((2.0, 4.0, 4.0), (1.0, 0.0, 0.0), 2.0)
        with pytest.raises(ValueError):
            generate_safe_batch(traj, 1.0, 0.5, view, [], Limits())

    def test_predicted_box_rejects_branches(self):
        view = make_view(np.zeros((40, 12, 8), dtype=bool))
        traj = straight_traj((3.0, 6.0, 4.0), (1.0, 0.0, 0.0), 6.0)
        track = make_track((8.0, 6.0, 4.0), extent=0.6)
        clear = generate_safe_batch(traj, 0.0, 6.0, view, [], Limits())
        gated = generate_safe_batch(traj, 0.0, 6.0, view, [track], Limits())
        assert len(gated) < len(clear)
        for b in gated:
            ts = np.arange(b.traj.t0, b.traj.end_time + 1e-9, 0.01)
            pts = [b.traj.position(float(t)) for t in ts]
            assert not box_swept(pts, ts, track)


class TestMonitorAndSwitch:
    def test_clear_chain_unchanged(self):
        plan, view, limits = free_plan()
        res = monitor_and_switch(plan, [], view, 0.2, limits)
        assert res.outcome == "unchanged"
        assert res.plan is plan

    def test_late_conflict_switches_to_earliest_clear_branch(self):
        plan, view, limits = free_plan(speed=1.0, duration=6.0)
        track = make_track((7.5, 6.0, 4.0), extent=0.3)
        now = 0.2
        res = monitor_and_switch(plan, [track], view, now, limits)
        assert res.outcome == "switched"
        j = res.branch_index
        assert res.plan.active == j
        branch = plan.safes[j]
        assert branch.t_branch > now
        assert "case1" in res.plan.flags
        assert np.allclose(res.plan.point_s,
                           branch.traj.position(branch.traj.end_time))
        # the adopted chain must clear the box over its whole monitored span
        pts, ts = chain_points(res.plan, now, res.plan.end_time + MONITOR_TAIL)
        assert not box_swept(pts, ts, track)
        # and no earlier eligible branch is clear over that span
        for k in range(j):
            cand = plan.safes[k]
            if cand.t_branch <= now:
                continue
            trial = CommittedPlan(
                exploratory=plan.exploratory, safes=plan.safes, active=k,
                point_a=plan.point_a, point_h=plan.point_h,
                point_e=plan.point_e,
                point_s=cand.traj.position(cand.traj.end_time),
                t_h=plan.t_h)
            pts, ts = chain_points(trial, now, trial.end_time + MONITOR_TAIL)
            assert box_swept(pts, ts, track)

    def test_switch_causality_as_time_advances(self):
        plan, view, limits = free_plan(speed=1.0, duration=6.0)
        track = make_track((7.5, 6.0, 4.0), extent=0.3)
        for now in (0.1, 0.9, 1.7):
            res = monitor_and_switch(plan, [track], view, now, limits)
            if res.outcome == "switched":
                assert plan.safes[res.branch_index].t_branch > now

    def test_imminent_conflict_triggers_contingency(self):
        plan, view, limits = free_plan(speed=1.0, duration=6.0)
        # grazing box just ahead: every branch prefix clips it, but a
        # lateral evasion is still reachable
        track = make_track((3.8, 6.25, 4.0), extent=0.3)
        now = 0.1
        res = monitor_and_switch(plan, [track], view, now, limits)
        assert res.outcome == "contingency"
        assert "case2" in res.plan.flags
        assert res.plan.safes == []
        assert res.plan.active is None
        assert res.conflict_time is not None
        end = res.plan.exploratory.state_at(res.plan.end_time)
        assert np.linalg.norm(end.velocity) <= 1e-9
        ts = np.arange(res.plan.t_start, res.plan.end_time + 1e-9, 0.01)
        pts = [res.plan.position_at(float(t)) for t in ts]
        assert not box_swept(pts, ts, track)

    def test_total_blockage_stops(self):
        # one-cell-wide free corridor, blocked ahead: no ring goal is clear
        occ = np.ones((12, 12, 8), dtype=bool)
        occ[2:5, 6:7, 4:5] = False
        view = make_view(occ)
        traj = straight_traj((3.2, 6.5, 4.5), (0.8, 0.0, 0.0), 4.0)
        plan = CommittedPlan(exploratory=traj, safes=[], active=None,
                             point_a=traj.position(0.0),
                             point_h=traj.position(4.0),
                             point_e=traj.position(4.0),
                             point_s=traj.position(4.0), t_h=4.0)
        track = make_track((4.2, 6.5, 4.5), extent=0.4)
        res = monitor_and_switch(plan, [track], view, 0.0, Limits())
        assert res.outcome == "stop"
        assert "stop-command" in res.plan.flags

    def test_parked_plan_sees_approaching_obstacle(self):
        view = make_view(np.zeros((20, 12, 8), dtype=bool))
        hover = straight_traj((5.0, 6.0, 4.0), (0.0, 0.0, 0.0), 0.5)
        plan = CommittedPlan(exploratory=hover, safes=[], active=None,
                             point_a=hover.position(0.0),
                             point_h=hover.position(0.5),
                             point_e=hover.position(0.5),
                             point_s=hover.position(0.5), t_h=0.5)
        # sweeps the parking spot well after the plan's own end
        track = make_track((11.0, 6.0, 4.0), v=(-3.0, 0.0, 0.0), extent=0.3)
        res = monitor_and_switch(plan, [track], view, 1.0, Limits())
        assert res.outcome == "contingency"
        assert res.conflict_time > plan.end_time


class TestReplanner:
    def _free_grid(self, shape=(24, 12, 8), res=0.5):
        grid = VoxelGrid(res, bounds=(np.zeros(3),
                                      np.array(shape, dtype=float) * res))
        for idx in np.ndindex(shape):
            grid.set_cell(idx, FREE, 0.0)
        return grid

    def test_empty_world_pipeline(self):
        grid = self._free_grid()
        rp = Replanner(grid, Limits(), terminal_goal=[10.0, 3.0, 2.0],
                       agent_radius=0.2)
        start = BoundaryState(np.array([1.5, 3.0, 2.0]))
        rep = rp.replan_once(0.0, start, 0.0, [])
        assert rep.outcome == "ok"
        plan = rep.plan
        assert rp.committed is plan
        assert plan.t_start == pytest.approx(0.05)
        assert np.allclose(plan.point_a, start.position)
        assert np.allclose(plan.point_e, [10.0, 3.0, 2.0])
        assert rep.n_safe >= 3
        assert plan.yaw is not None
        end = plan.exploratory.state_at(plan.exploratory.end_time)
        assert np.linalg.norm(end.velocity) <= 1e-9
        assert set(rep.timings) == set(TIMING_KEYS)
        assert all(v >= 0.0 for v in rep.timings.values())

    def test_plan_threads_gap_in_wall(self):
        shape = (24, 10, 6)
        grid = self._free_grid(shape)
        for iy in range(shape[1]):
            for iz in range(shape[2]):
                if not (4 <= iy <= 5 and 2 <= iz <= 3):
                    grid.set_cell((12, iy, iz), OCCUPIED, 0.0)
        rp = Replanner(grid, Limits(v_max=2.0), terminal_goal=[10.0, 2.5, 1.5],
                       agent_radius=0.0)
        start = BoundaryState(np.array([2.0, 2.5, 1.5]))
        rep = rp.replan_once(0.0, start, 0.0, [])
        assert rep.outcome == "ok"
        traj = rep.plan.exploratory
        for t in np.arange(traj.t0, traj.end_time + 1e-9, 0.02):
            p = traj.position(float(t))
            assert grid.state_at(p) != OCCUPIED

    def test_stage_failure_keeps_previous_plan(self):
        grid = self._free_grid()
        rp = Replanner(grid, Limits(), terminal_goal=[10.0, 3.0, 2.0])
        start = BoundaryState(np.array([1.5, 3.0, 2.0]))
        rep0 = rp.replan_once(0.0, start, 0.0, [])
        assert rep0.outcome == "ok"
        committed = rp.committed
        for idx in np.ndindex((24, 12, 8)):
            grid.set_cell(idx, OCCUPIED, 1.0)
        rep1 = rp.replan_once(0.1, start, 0.0, [])
        assert rep1.outcome.startswith("failed-")
        assert rep1.reason is not None
        assert rp.committed is committed
        assert rep1.plan is committed
        assert rp.pending is None

    def test_pending_plan_promotes_at_start_time(self):
        grid = self._free_grid()
        rp = Replanner(grid, Limits(), terminal_goal=[10.0, 3.0, 2.0])
        start = BoundaryState(np.array([1.5, 3.0, 2.0]))
        rp.replan_once(0.0, start, 0.0, [])
        first = rp.committed
        state = rp.committed_state(0.1)
        rep1 = rp.replan_once(0.1, state, 0.0, [])
        assert rep1.outcome == "ok"
        assert rp.committed is first
        assert rp.pending is rep1.plan
        assert rep1.plan.t_start == pytest.approx(0.1 + rp.clock.dt_a)
        before = rp.committed_state(0.12)
        assert np.allclose(before.position, first.position_at(0.12))
        rp.committed_state(rep1.plan.t_start + 1e-6)
        assert rp.committed is rep1.plan
        assert rp.pending is None

    def test_monitor_switch_drops_pending(self):
        grid = self._free_grid((40, 12, 8))
        rp = Replanner(grid, Limits(), terminal_goal=[18.0, 3.0, 2.0])
        start = BoundaryState(np.array([1.5, 3.0, 2.0]))
        rp.replan_once(0.0, start, 0.0, [])
        state = rp.committed_state(0.1)
        rp.replan_once(0.1, state, 0.0, [])
        assert rp.pending is not None
        ahead = rp.committed.position_at(rp.committed.end_time - 0.5)
        track = make_track(tuple(ahead), extent=0.4)
        res = rp.monitor(0.12, [track])
        assert res.outcome != "unchanged"
        assert rp.pending is None
        assert rp.committed is res.plan

    def test_same_inputs_same_plan(self):
        def run():
            grid = self._free_grid()
            rp = Replanner(grid, Limits(), terminal_goal=[10.0, 3.0, 2.0])
            start = BoundaryState(np.array([1.5, 3.0, 2.0]))
            track = make_track((6.0, 5.0, 2.0), v=(0.0, -0.4, 0.0),
                               extent=0.3)
            rep = rp.replan_once(0.0, start, 0.0, [track])
            return rep
        a, b = run(), run()
        assert a.outcome == b.outcome == "ok"
        assert np.array_equal(a.plan.exploratory.coeffs,
                              b.plan.exploratory.coeffs)
        assert len(a.plan.safes) == len(b.plan.safes)
        for ba, bb in zip(a.plan.safes, b.plan.safes):
            assert ba.t_branch == bb.t_branch
            assert np.array_equal(ba.traj.coeffs, bb.traj.coeffs)
        assert a.plan.active == b.plan.active

    def test_committed_chain_clear_of_predictions(self):
        grid = self._free_grid()
        rp = Replanner(grid, Limits(), terminal_goal=[10.0, 3.0, 2.0],
                       agent_radius=0.2)
        start = BoundaryState(np.array([1.5, 3.0, 2.0]))
        track = make_track((6.0, 5.5, 3.5), extent=0.3)
        rep = rp.replan_once(0.0, start, 0.0, [track])
        assert rep.outcome == "ok"
        plan = rep.plan
        pts, ts = chain_points(plan, plan.t_start, plan.end_time)
        assert not box_swept(pts, ts, track, inflate=0.2)
        for b in plan.safes:
            ts = np.arange(b.traj.t0, b.traj.end_time + 1e-9, 0.01)
            pts = [b.traj.position(float(t)) for t in ts]
            assert not box_swept(pts, ts, track, inflate=0.2)

    def test_interval_count_adapts_to_corridor(self):
        grid = self._free_grid((16, 4, 4))
        polys = [box_poly([i * 1.0, 0, 0], [i * 1.0 + 1.5, 1, 1])
                 for i in range(5)]
        rp = Replanner(grid, Limits(), terminal_goal=[7.0, 0.5, 0.5])
        assert rp.n_intervals == 4
        traj = rp._solve_exploratory(make_corridor(polys),
                                     BoundaryState(np.array([0.3, 0.5, 0.5])),
                                     0.0)
        # five polyhedra force at least five intervals; the chain needs seven
        assert traj.n_segments == 7
        assert rp.n_intervals == 7
        assert np.allclose(traj.position(traj.end_time), [4.75, 0.5, 0.5])

    def test_unreachable_corridor_raises_after_growth(self):
        grid = self._free_grid((16, 4, 4))
        polys = [box_poly([0, 0, 0], [1, 1, 1]),
                 box_poly([3, 0, 0], [4, 1, 1])]
        rp = Replanner(grid, Limits(v_max=2.0, a_max=4.0, j_max=20.0),
                       terminal_goal=[3.5, 0.5, 0.5])
        with pytest.raises(PlanningError) as err:
            rp._solve_exploratory(make_corridor(polys),
                                  BoundaryState(np.array([0.5, 0.5, 0.5])),
                                  0.0)
        assert err.value.reason == "all-infeasible"
