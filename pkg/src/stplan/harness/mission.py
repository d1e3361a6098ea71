"""Closed-loop mission runner: sense, track, replan, monitor, fly.

The loop runs at the simulator step (default 5 ms). Sensing and replanning
happen every replan period; plan monitoring runs every step whenever moving
obstacles are being tracked; the agent follows the committed chain with
perfect tracking and is checked against the analytic true world each step.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..framework import TIMING_KEYS, Replanner
from ..tracker import Tracker
from ..types import BoundaryState, Limits
from ..worldmodel import UNKNOWN, VoxelGrid
from .scenario import Scenario
from .world import World

# Fields excluded when comparing runs for reproducibility.
WALL_CLOCK_FIELDS = ("compute_ms", "wall_time_s")

EVENT_COLUMNS = ("time", "event", "outcome", "reason", "n_safe",
                 "n_intervals") + tuple(k + "_ms" for k in TIMING_KEYS)


@dataclass
class MetricsRecord:
    """Summary of one mission, serializable to JSON."""

    name: str
    seed: int
    planner: str
    mode: str
    success: bool
    outcome: str                    # goal | collision | timeout
    travel_time: float
    path_length: float
    replan_count: int
    replan_failures: int
    case1_count: int
    case2_count: int
    stop_count: int
    collision_count: int
    path_digest: str
    compute_ms: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def strip_wall_clock(metrics: dict) -> dict:
    """Copy of a metrics dict without wall-clock timing fields."""
    return {k: v for k, v in metrics.items() if k not in WALL_CLOCK_FIELDS}


class Mission:
    """One closed-loop run of a scenario.

    The belief map starts empty and is filled only through simulated ray
    casts against the static world; moving obstacles are perceived solely
    through range-gated centroid detections fed to the tracker.
    """

    def __init__(self, scenario: Scenario, planner: str = "dgp",
                 out_dir: str | Path | None = None):
        self.sc = scenario
        self.planner = planner
        self.out_dir = Path(out_dir) if out_dir else None
        self.world = World(scenario)
        ag = scenario.agent
        self.limits = Limits(v_max=ag.v_max, a_max=ag.a_max,
                             j_max=ag.j_max, yaw_rate=ag.yaw_rate)
        lo, hi = scenario.bounds
        self.belief = VoxelGrid(scenario.resolution,
                                (np.asarray(lo, float), np.asarray(hi, float)))
        self.tracker = Tracker()
        self.rp = Replanner(self.belief, self.limits, ag.goal,
                            mode=scenario.mode, agent_radius=ag.radius,
                            planner=planner)
        self.rng = np.random.default_rng(scenario.seed)
        self.events: list[dict] = []
        self.flown: list[tuple] = []
        self.corridor_rows: list[dict] = []

    # -- sensing

    def _sense(self, pos: np.ndarray, yaw: float, t: float) -> None:
        sc = self.sc
        hits = self.world.cast_rays(pos, yaw, sc.sensor)
        # Hit points are voxel centers, so they can overshoot the nominal
        # range by up to half a cell diagonal.
        self.belief.integrate_scan(pos, hits, sc.sensor.range + sc.resolution, t)
        self.belief.remove_smears(t, sc.smear_timeout)
        dets = self.world.detect_movers(pos, t, sc.sensor, self.rng)
        self.tracker.step(dets, t)

    # -- termination

    def _goal_reached(self, pos: np.ndarray, goal: np.ndarray) -> bool:
        if self.sc.mode == "explore":
            return self._region_observed(goal)
        return float(np.linalg.norm(pos - goal)) <= self.sc.goal_tolerance

    def _region_observed(self, goal: np.ndarray) -> bool:
        """Every in-bounds voxel center within the goal tolerance is known."""
        tol = self.sc.goal_tolerance
        res = self.sc.resolution
        lo = self.belief.index_of(goal - tol)
        hi = self.belief.index_of(goal + tol)
        any_cell = False
        for ix in range(lo[0], hi[0] + 1):
            for iy in range(lo[1], hi[1] + 1):
                for iz in range(lo[2], hi[2] + 1):
                    idx = (ix, iy, iz)
                    if not self.belief._in_bounds_index(idx):
                        continue
                    center = self.belief.center_of(idx)
                    if float(np.linalg.norm(center - goal)) > tol:
                        continue
                    any_cell = True
                    if self.belief.state_of(idx) == UNKNOWN:
                        return False
        return any_cell

    # -- logging

    def _event(self, t: float, event: str, outcome: str, reason: str,
               timings: dict | None, n_safe: int, n_intervals: int) -> None:
        row = {"time": round(t, 6), "event": event, "outcome": outcome,
               "reason": reason, "n_safe": n_safe, "n_intervals": n_intervals}
        for key in TIMING_KEYS:
            val = timings[key] if timings else 0.0
            row[key + "_ms"] = round(1000.0 * val, 3)
        self.events.append(row)

    def _corridor_row(self, t: float) -> None:
        cor = self.rp.last_corridor
        if cor is None:
            return
        self.corridor_rows.append({
            "time": round(t, 6),
            "boxes": [{"lo": [float(v) for v in p.lo],
                       "hi": [float(v) for v in p.hi]} for p in cor.polys],
            "intervals": [[float(a), float(b)] for a, b in cor.intervals],
        })

    # -- main loop

    def run(self) -> MetricsRecord:
        sc = self.sc
        dt = sc.dt_sim
        steps_per_replan = max(1, int(round(sc.replan_period / dt)))
        n_steps = int(round(sc.timeout / dt))
        pos = np.asarray(sc.agent.start, dtype=float)
        goal = np.asarray(sc.agent.goal, dtype=float)
        yaw = math.atan2(goal[1] - pos[1], goal[0] - pos[0])
        t = 0.0
        outcome = "timeout"
        collisions = 0
        case1 = case2 = stops = 0
        replans = failures = 0
        stage_totals = dict.fromkeys(TIMING_KEYS, 0.0)
        path_length = 0.0
        self.flown.append((t, pos[0], pos[1], pos[2], yaw))
        wall_start = time.perf_counter()

        preds: list = []
        for k in range(n_steps):
            if k % steps_per_replan == 0:
                self._sense(pos, yaw, t)
                preds = self.tracker.predictions()
                state = self.rp.committed_state(t)
                if state is None:
                    state = BoundaryState(position=pos.copy())
                rep = self.rp.replan_once(t, state, yaw, preds)
                replans += 1
                if rep.outcome != "ok":
                    failures += 1
                for key in TIMING_KEYS:
                    stage_totals[key] += rep.timings[key]
                self._event(t, "replan", rep.outcome, rep.reason or "",
                            rep.timings, rep.n_safe, rep.n_intervals)
                if rep.outcome == "ok":
                    self._corridor_row(t)
            if preds:
                res = self.rp.monitor(t, preds)
                if res.outcome == "switched":
                    case1 += 1
                    self._event(t, "case1", res.outcome, "", None, 0, 0)
                elif res.outcome == "contingency":
                    case2 += 1
                    self._event(t, "case2", res.outcome, "", None, 0, 0)
                elif res.outcome == "stop":
                    case2 += 1
                    stops += 1
                    self._event(t, "stop", res.outcome, "", None, 0, 0)
            t = (k + 1) * dt
            state = self.rp.committed_state(t)
            if state is not None:
                new_pos = np.asarray(state.position, dtype=float)
            else:
                new_pos = pos
            plan = self.rp.committed
            if plan is not None and plan.yaw is not None:
                yaw = float(plan.yaw.value_at(t - plan.t_start))
            path_length += float(np.linalg.norm(new_pos - pos))
            pos = new_pos
            self.flown.append((t, pos[0], pos[1], pos[2], yaw))
            if self.world.collision(pos, t, sc.agent.radius):
                collisions += 1
                outcome = "collision"
                break
            if self._goal_reached(pos, goal):
                outcome = "goal"
                break

        wall = time.perf_counter() - wall_start
        compute_ms = {key: 1000.0 * stage_totals[key] / max(replans, 1)
                      for key in TIMING_KEYS}
        record = MetricsRecord(
            name=sc.name, seed=sc.seed, planner=self.planner, mode=sc.mode,
            success=outcome == "goal", outcome=outcome, travel_time=round(t, 9),
            path_length=round(path_length, 9), replan_count=replans,
            replan_failures=failures, case1_count=case1, case2_count=case2,
            stop_count=stops, collision_count=collisions,
            path_digest=self._digest(), compute_ms=compute_ms,
            wall_time_s=wall)
        if self.out_dir is not None:
            self._write_outputs(record)
        return record

    def _digest(self) -> str:
        arr = np.asarray(self.flown, dtype=float)
        return hashlib.sha1(arr.tobytes()).hexdigest()

    # -- output files

    def _write_outputs(self, record: MetricsRecord) -> None:
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.json", "w") as fh:
            json.dump(record.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "events.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=EVENT_COLUMNS)
            writer.writeheader()
            writer.writerows(self.events)
        with open(out / "trajectory.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("t", "x", "y", "z", "yaw"))
            for row in self.flown:
                writer.writerow(tuple("%.9f" % v for v in row))
        with open(out / "corridors.jsonl", "w") as fh:
            for row in self.corridor_rows:
                json.dump(row, fh, sort_keys=True)
                fh.write("\n")


def run_mission(scenario: Scenario, planner: str = "dgp",
                out_dir: str | Path | None = None) -> MetricsRecord:
    """Run one scenario to completion and return its metrics."""
    return Mission(scenario, planner=planner, out_dir=out_dir).run()


def compare_planners(scenarios, planners=("dgp", "dynamic-astar")) -> dict:
    """Run every scenario under each planner and aggregate the metrics.

    Returns {"rows": [...], "aggregate": {planner: {...}}}; rows carry the
    full per-mission metrics dicts.
    """
    rows = []
    for scenario in scenarios:
        for planner in planners:
            rows.append(run_mission(scenario, planner=planner).to_dict())
    aggregate = {}
    for planner in planners:
        sub = [r for r in rows if r["planner"] == planner]
        if not sub:
            continue
        aggregate[planner] = {
            "missions": len(sub),
            "success_rate": sum(r["success"] for r in sub) / len(sub),
            "mean_travel_time": float(np.mean([r["travel_time"] for r in sub])),
            "mean_path_length": float(np.mean([r["path_length"] for r in sub])),
            "mean_compute_ms": {
                key + "_ms": float(np.mean([r["compute_ms"][key] for r in sub]))
                for key in TIMING_KEYS},
        }
    return {"rows": rows, "aggregate": aggregate}


def sweep_seeds(make_scenario, seeds, planner: str = "dgp") -> list[MetricsRecord]:
    """Run `make_scenario(seed)` for each seed and collect the metrics."""
    return [run_mission(make_scenario(seed), planner=planner)
            for seed in seeds]
