"""Scenario schema: JSON-serializable description of one benchmark run.

A scenario pins everything a mission needs: world bounds and static
geometry, dynamic obstacle parameters, agent limits, sensor model, and the
run settings. The seed fixes every random draw, so a scenario file plus a
seed replays bit-identically.

Dynamic obstacles ride a trefoil curve evaluated parametrically:

    p(s) = center + scale * (sin s + 2 sin 2s,
                             cos s - 2 cos 2s,
                             -sin 3s) / 3,       s = time_scale * t + phase

The division by 3 keeps each axis offset within +-scale of the center.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

SCHEMA_VERSION = 1


@dataclass
class Cylinder:
    """Vertical cylinder standing on z = z_min."""

    x: float
    y: float
    radius: float
    height: float
    z_min: float = 0.0


@dataclass
class BoxObstacle:
    lo: list
    hi: list


@dataclass
class Trefoil:
    center: list
    scale: float
    time_scale: float
    phase: float
    extent: list = field(default_factory=lambda: [0.3, 0.3, 0.3])


@dataclass
class AgentSpec:
    start: list
    goal: list
    v_max: float = 3.0
    a_max: float = 6.0
    j_max: float = 30.0
    yaw_rate: float = 2.0
    radius: float = 0.3


@dataclass
class SensorSpec:
    range: float = 7.0
    fov_half: float = 1.2          # horizontal half-angle around the heading
    elevation_half: float = 0.35
    n_azimuth: int = 21
    n_rings: int = 5
    sigma: float = 0.0             # detection noise, meters


@dataclass
class Scenario:
    seed: int
    bounds: list                   # [[lo], [hi]]
    resolution: float
    agent: AgentSpec
    sensor: SensorSpec = field(default_factory=SensorSpec)
    cylinders: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    trefoils: list = field(default_factory=list)
    mode: str = "goal"
    replan_period: float = 0.1
    dt_sim: float = 0.005
    timeout: float = 60.0
    smear_timeout: float = 1.5
    goal_tolerance: float = 0.5
    name: str = "scenario"
    schema_version: int = SCHEMA_VERSION


def validate_scenario(sc: Scenario) -> None:
    lo, hi = np.asarray(sc.bounds[0]), np.asarray(sc.bounds[1])
    if not np.all(hi > lo):
        raise ValueError("bounds must have positive extent")
    for label, p in (("start", sc.agent.start), ("goal", sc.agent.goal)):
        p = np.asarray(p, dtype=float)
        if np.any(p < lo) or np.any(p > hi):
            raise ValueError("%s outside bounds" % label)
    if sc.resolution <= 0.0:
        raise ValueError("resolution must be positive")
    if sc.dt_sim <= 0.0 or sc.replan_period <= 0.0:
        raise ValueError("time steps must be positive")
    if sc.replan_period < sc.dt_sim:
        raise ValueError("replan period below simulation step")
    if sc.mode not in ("goal", "explore"):
        raise ValueError("mode must be goal or explore")
    if sc.schema_version != SCHEMA_VERSION:
        raise ValueError("unsupported schema_version %r" % (sc.schema_version,))


def scenario_to_dict(sc: Scenario) -> dict:
    return asdict(sc)


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    sc = Scenario(
        seed=int(d["seed"]),
        bounds=d["bounds"],
        resolution=float(d["resolution"]),
        agent=AgentSpec(**d["agent"]),
        sensor=SensorSpec(**d.get("sensor", {})),
        cylinders=[Cylinder(**c) for c in d.get("cylinders", [])],
        boxes=[BoxObstacle(**b) for b in d.get("boxes", [])],
        trefoils=[Trefoil(**t) for t in d.get("trefoils", [])],
        mode=d.get("mode", "goal"),
        replan_period=float(d.get("replan_period", 0.1)),
        dt_sim=float(d.get("dt_sim", 0.005)),
        timeout=float(d.get("timeout", 60.0)),
        smear_timeout=float(d.get("smear_timeout", 1.5)),
        goal_tolerance=float(d.get("goal_tolerance", 0.5)),
        name=d.get("name", "scenario"),
        schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
    )
    validate_scenario(sc)
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(sc: Scenario, path) -> None:
    validate_scenario(sc)
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _floor(bounds, resolution) -> BoxObstacle:
    """Ground slab covering the lowest voxel layer.

    Sensing only carves free space along rays that end in a hit, so every
    world gets a floor; downward rays then always terminate and the map
    around the start fills in on the first scan.
    """
    lo, hi = bounds
    return BoxObstacle(lo=[lo[0], lo[1], lo[2]],
                       hi=[hi[0], hi[1], lo[2] + resolution])


def empty_scenario(seed: int = 0) -> Scenario:
    bounds = [[0.0, 0.0, 0.0], [12.0, 6.0, 4.0]]
    res = 0.5
    sc = Scenario(
        seed=seed, bounds=bounds, resolution=res,
        agent=AgentSpec(start=[1.5, 3.0, 2.0], goal=[10.5, 3.0, 2.0]),
        boxes=[_floor(bounds, res)],
        timeout=30.0, name="empty-%d" % seed)
    validate_scenario(sc)
    return sc


def forest_scenario(seed: int, n_cylinders: int = 20) -> Scenario:
    """Random cylinder forest, 60 x 20 m footprint, straight-line goal."""
    rng = np.random.default_rng(seed)
    bounds = [[0.0, 0.0, 0.0], [60.0, 20.0, 4.0]]
    res = 0.5
    start = np.array([2.0, 10.0, 2.0])
    goal = np.array([58.0, 10.0, 2.0])
    cylinders = []
    while len(cylinders) < n_cylinders:
        x = float(rng.uniform(8.0, 52.0))
        y = float(rng.uniform(2.0, 18.0))
        r = float(rng.uniform(0.3, 0.8))
        keep_out = r + 2.5
        if np.hypot(x - start[0], y - start[1]) < keep_out:
            continue
        if np.hypot(x - goal[0], y - goal[1]) < keep_out:
            continue
        cylinders.append(Cylinder(x=x, y=y, radius=r,
                                  height=float(rng.uniform(2.5, 4.0))))
    sc = Scenario(
        seed=seed, bounds=bounds, resolution=res,
        agent=AgentSpec(start=start.tolist(), goal=goal.tolist(), v_max=4.0),
        cylinders=cylinders, boxes=[_floor(bounds, res)],
        timeout=90.0, name="forest-%d" % seed)
    validate_scenario(sc)
    return sc


def trefoil_scenario(seed: int, n_obstacles: int = 5) -> Scenario:
    """Dynamic scene: trefoil movers wandering between start and goal."""
    rng = np.random.default_rng(seed)
    bounds = [[0.0, 0.0, 0.0], [16.0, 10.0, 5.0]]
    res = 0.5
    start = np.array([1.5, 5.0, 2.0])
    goal = np.array([14.5, 5.0, 2.0])
    trefoils = []
    while len(trefoils) < n_obstacles:
        scale = float(rng.uniform(1.0, 2.0))
        center = np.array([rng.uniform(4.0, 12.0), rng.uniform(3.0, 7.0),
                           rng.uniform(2.0, 3.0)])
        if (np.linalg.norm(center - start) < scale + 2.0
                or np.linalg.norm(center - goal) < scale + 2.0):
            continue
        trefoils.append(Trefoil(
            center=center.tolist(), scale=scale,
            time_scale=float(rng.uniform(0.4, 0.9)),
            phase=float(rng.uniform(0.0, 2.0 * np.pi))))
    sc = Scenario(
        seed=seed, bounds=bounds, resolution=res,
        agent=AgentSpec(start=start.tolist(), goal=goal.tolist(), v_max=3.0),
        sensor=SensorSpec(sigma=0.02),
        trefoils=trefoils, boxes=[_floor(bounds, res)],
        timeout=60.0, name="trefoil-%d" % seed)
    validate_scenario(sc)
    return sc
