"""Shared value types used across the planning pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PlanningError(RuntimeError):
    """Raised when a pipeline stage cannot produce a usable result.

    reason is a short machine-readable token; callers branch on it.
    """

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass
class Limits:
    """Kinodynamic limits of the vehicle.

    Velocity, acceleration and jerk bounds are symmetric per-axis bounds;
    yaw_rate bounds the heading rate used by the yaw planner.
    """

    v_max: float = 3.0
    a_max: float = 6.0
    j_max: float = 30.0
    yaw_rate: float = 2.0


@dataclass
class BoundaryState:
    """Full kinematic boundary condition for one end of a spline."""

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.acceleration = np.asarray(self.acceleration, dtype=float)


@dataclass
class PredictedTrack:
    """Predicted state of one moving obstacle over the planning horizon.

    position_at(t) gives the predicted center, covariance_at(t) the blended
    position covariance. extent is the half-size of the bounding box used for
    hard collision gating.
    """

    track_id: int
    t0: float
    horizon: float
    coeffs: np.ndarray          # (3, 3) per-axis quadratic, highest power first
    sigma_ekf: np.ndarray       # (3, 3) filter position covariance at t0
    sigma_poly: np.ndarray      # (3, 3) regression residual covariance
    extent: np.ndarray = field(default_factory=lambda: np.full(3, 0.3))

    def position_at(self, t: float | np.ndarray) -> np.ndarray:
        """Evaluate the predicted center, clamping t into the fit horizon."""
        tau = np.clip(np.asarray(t, dtype=float) - self.t0, 0.0, self.horizon)
        out = np.empty(np.shape(tau) + (3,))
        for axis in range(3):
            out[..., axis] = np.polyval(self.coeffs[axis], tau)
        return out

    def covariance_at(self, t: float, t_total: float) -> np.ndarray:
        """Blend filter and regression covariance linearly over t_total."""
        if t_total <= 0.0:
            return np.array(self.sigma_ekf)
        s = float(np.clip((t - self.t0) / t_total, 0.0, 1.0))
        return (1.0 - s) * self.sigma_ekf + s * self.sigma_poly
