"""Exploration sub-goal selection on the windowed map.

Frontiers are Free voxels touching Unknown space; each is scored by a
weighted sum of terms favoring reachable, centered, spatially consistent,
deep and information-rich candidates, and the cheapest one becomes the next
exploration sub-goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .types import PlanningError
from .worldmodel import FREE, UNKNOWN, WindowGrid


@dataclass
class FrontierWeights:
    vel: float = 1.0
    camera: float = 1.0
    continuity: float = 1.0
    forward: float = 1.0
    info: float = 1.0


@dataclass
class FrontierContext:
    agent_pos: np.ndarray
    yaw: float
    v_max: float
    d_max: float               # window radius; keeps C_vel bounded
    f_best: np.ndarray | None = None
    d_thresh: float = 1.0
    eps: float = 1e-3
    weights: FrontierWeights = field(default_factory=FrontierWeights)


@dataclass
class FrontierCandidate:
    position: np.ndarray
    cam: np.ndarray | None = None          # (x right, y up, z forward)
    terms: dict | None = None
    cost: float | None = None


def detect_frontiers(view: WindowGrid) -> list:
    """Free voxels 6-adjacent to an in-window Unknown voxel.

    Neighbors outside the window do not count as Unknown: the window edge
    is a bookkeeping boundary, not an information frontier.
    """
    free = view.states == FREE
    unknown = view.states == UNKNOWN
    adj = np.zeros_like(free)
    for ax in range(3):
        pad = [(0, 0)] * 3
        pad[ax] = (0, 1)
        # adj[i] |= unknown[i+1] along ax, padded False past the border.
        adj |= np.pad(unknown, pad, constant_values=False)[
            tuple(slice(1, None) if a == ax else slice(None)
                  for a in range(3))]
        pad[ax] = (1, 0)
        adj |= np.pad(unknown, pad, constant_values=False)[
            tuple(slice(None, -1) if a == ax else slice(None)
                  for a in range(3))]
    cells = np.argwhere(free & adj)
    return [FrontierCandidate(position=view.world_center(tuple(c)))
            for c in cells]


def _camera_coords(ctx: FrontierContext, position) -> np.ndarray:
    offset = np.asarray(position, dtype=float) - ctx.agent_pos
    fwd = np.array([math.cos(ctx.yaw), math.sin(ctx.yaw), 0.0])
    right = np.array([math.sin(ctx.yaw), -math.cos(ctx.yaw), 0.0])
    return np.array([float(offset @ right), float(offset[2]),
                     float(offset @ fwd)])


def score_frontier(f: FrontierCandidate, ctx: FrontierContext,
                   frontiers: list) -> float:
    """Weighted sum of the five terms; stores the breakdown on f."""
    offset = f.position - ctx.agent_pos
    v_des = offset * (ctx.v_max / ctx.d_max)
    c_vel = 1.0 / (float(np.linalg.norm(v_des)) + ctx.eps)
    cam = _camera_coords(ctx, f.position)
    c_camera = math.hypot(cam[0], cam[1])
    c_forward = -cam[2]
    if ctx.f_best is None:
        c_continuity = 0.0
    else:
        c_continuity = float(np.linalg.norm(f.position - ctx.f_best))
    n_near = sum(1 for other in frontiers
                 if np.linalg.norm(f.position - other.position)
                 < ctx.d_thresh)
    c_info = -float(n_near)
    w = ctx.weights
    f.cam = cam
    f.terms = {"vel": c_vel, "camera": c_camera, "continuity": c_continuity,
               "forward": c_forward, "info": c_info}
    f.cost = (w.vel * c_vel + w.camera * c_camera
              + w.continuity * c_continuity + w.forward * c_forward
              + w.info * c_info)
    return f.cost


def select_best(frontiers: list, ctx: FrontierContext) -> FrontierCandidate:
    """Cheapest candidate; ties broken by lexicographic position."""
    if not frontiers:
        raise PlanningError("no-frontier", "nothing borders unknown space")
    for f in frontiers:
        score_frontier(f, ctx, frontiers)
    return min(frontiers, key=lambda f: (f.cost, tuple(f.position)))
