"""Ground-truth world: static geometry, trefoil movers, rays, collisions.

The truth voxel grid exists only for sensing; collision checks run against
the exact analytic geometry so a success really means no penetration.
"""

from __future__ import annotations

import math

import numpy as np

from ..worldmodel import OCCUPIED, VoxelGrid, ray_voxels
from .scenario import Scenario, SensorSpec


class TrefoilMover:
    """Closed-curve dynamic obstacle, evaluated parametrically.

    Position is a pure function of time, so stepping twice by dt and once
    by 2 dt land on the same pose exactly, and time_scale = 0 freezes it.
    """

    def __init__(self, spec):
        self.center = np.asarray(spec.center, dtype=float)
        self.scale = float(spec.scale)
        self.time_scale = float(spec.time_scale)
        self.phase = float(spec.phase)
        self.extent = np.asarray(spec.extent, dtype=float)

    def position(self, t: float) -> np.ndarray:
        s = self.time_scale * t + self.phase
        base = np.array([
            math.sin(s) + 2.0 * math.sin(2.0 * s),
            math.cos(s) - 2.0 * math.cos(2.0 * s),
            -math.sin(3.0 * s),
        ])
        return self.center + self.scale * base / 3.0

    @property
    def period(self) -> float:
        if self.time_scale == 0.0:
            return math.inf
        return 2.0 * math.pi / abs(self.time_scale)


class World:
    """Static analytic obstacles plus movers, with a voxelized twin."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.bounds = (np.asarray(scenario.bounds[0], dtype=float),
                       np.asarray(scenario.bounds[1], dtype=float))
        self.cylinders = list(scenario.cylinders)
        self.boxes = [(np.asarray(b.lo, dtype=float),
                       np.asarray(b.hi, dtype=float)) for b in scenario.boxes]
        self.movers = [TrefoilMover(t) for t in scenario.trefoils]
        self.truth = VoxelGrid(scenario.resolution, bounds=self.bounds)
        self._voxelize()

    def _voxelize(self) -> None:
        for cyl in self.cylinders:
            lo = np.array([cyl.x - cyl.radius, cyl.y - cyl.radius, cyl.z_min])
            hi = np.array([cyl.x + cyl.radius, cyl.y + cyl.radius,
                           cyl.z_min + cyl.height])
            for idx in self._index_box(lo, hi):
                c = self.truth.center_of(idx)
                if (math.hypot(c[0] - cyl.x, c[1] - cyl.y) <= cyl.radius
                        and cyl.z_min <= c[2] <= cyl.z_min + cyl.height):
                    self.truth.set_cell(idx, OCCUPIED, 0.0)
        for lo, hi in self.boxes:
            for idx in self._index_box(lo, hi):
                c = self.truth.center_of(idx)
                if np.all(c >= lo) and np.all(c <= hi):
                    self.truth.set_cell(idx, OCCUPIED, 0.0)

    def _index_box(self, lo, hi):
        res = self.truth.resolution
        i0 = np.floor(np.maximum(lo, self.bounds[0]) / res).astype(int)
        i1 = np.ceil(np.minimum(hi, self.bounds[1]) / res).astype(int)
        for ix in range(i0[0], i1[0]):
            for iy in range(i0[1], i1[1]):
                for iz in range(i0[2], i1[2]):
                    yield (ix, iy, iz)

    # ground truth queries -------------------------------------------------

    def mover_positions(self, t: float) -> np.ndarray:
        if not self.movers:
            return np.zeros((0, 3))
        return np.array([m.position(t) for m in self.movers])

    def collision(self, position, t: float, radius: float) -> bool:
        """Sphere-vs-analytic-geometry penetration test."""
        p = np.asarray(position, dtype=float)
        for cyl in self.cylinders:
            d_xy = math.hypot(p[0] - cyl.x, p[1] - cyl.y) - cyl.radius
            z_lo, z_hi = cyl.z_min, cyl.z_min + cyl.height
            dz = max(z_lo - p[2], 0.0, p[2] - z_hi)
            dist = math.hypot(max(d_xy, 0.0), dz)
            if dist < radius - 1e-9:
                return True
        for lo, hi in self.boxes:
            closest = np.clip(p, lo, hi)
            if float(np.linalg.norm(p - closest)) < radius - 1e-9:
                return True
        for mover in self.movers:
            c = mover.position(t)
            closest = np.clip(p, c - mover.extent, c + mover.extent)
            if float(np.linalg.norm(p - closest)) < radius - 1e-9:
                return True
        return False

    # sensing --------------------------------------------------------------

    def ray_directions(self, yaw: float, sensor: SensorSpec) -> np.ndarray:
        if sensor.n_rings <= 1:
            els = np.array([0.0])
        else:
            els = np.linspace(-sensor.elevation_half, sensor.elevation_half,
                              sensor.n_rings)
        if sensor.n_azimuth <= 1:
            azs = np.array([yaw])
        else:
            azs = np.linspace(yaw - sensor.fov_half, yaw + sensor.fov_half,
                              sensor.n_azimuth)
        dirs = []
        for el in els:
            ce, se = math.cos(el), math.sin(el)
            for az in azs:
                dirs.append((ce * math.cos(az), ce * math.sin(az), se))
        return np.asarray(dirs)

    def cast_rays(self, origin, yaw: float, sensor: SensorSpec) -> list:
        """First-hit points against the voxelized statics, one per ray.

        Rays that leave the world or exhaust their range return nothing;
        free space is only carved along returned (terminating) rays.
        """
        origin = np.asarray(origin, dtype=float)
        res = self.truth.resolution
        hits = []
        for d in self.ray_directions(yaw, sensor):
            end = origin + sensor.range * d
            for idx in ray_voxels(origin, end, res):
                if not self.truth._in_bounds_index(idx):
                    break
                if self.truth.state_of(idx) == OCCUPIED:
                    hits.append(self.truth.center_of(idx))
                    break
        return hits

    def detect_movers(self, origin, t: float, sensor: SensorSpec, rng) -> list:
        """(centroid, extent) pairs for movers in range, with seeded noise."""
        origin = np.asarray(origin, dtype=float)
        out = []
        for mover in self.movers:
            p = mover.position(t)
            if float(np.linalg.norm(p - origin)) > sensor.range:
                continue
            noise = rng.normal(0.0, sensor.sigma, 3) if sensor.sigma > 0 \
                else np.zeros(3)
            out.append((p + noise, mover.extent.copy()))
        return out
