"""Dynamic obstacle tracking and prediction.

Nine-state constant-acceleration filter per obstacle with adaptive noise
covariances: the measurement noise follows the post-fit residual, the
process noise follows the gain-weighted innovation, both under a forgetting
factor. The measurement model extracts position, so the filter is linear in
practice. Predictions are smoothed with a least-squares polynomial whose
fit residuals feed the uncertainty model used by the yaw planner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import PlanningError, PredictedTrack

ALPHA = 0.98
GATE = 1.5
DELETE_AFTER = 3.0
HORIZON = 3.0
N_SAMPLES = 10
DEGREE = 2
P0_SCALE = 10.0
Q0_SCALE = 0.1
R0_SCALE = 0.05

_H = np.hstack([np.eye(3), np.zeros((3, 6))])


def default_p0() -> np.ndarray:
    return P0_SCALE * np.eye(9)


def default_q0() -> np.ndarray:
    return Q0_SCALE * np.eye(9)


def default_r0() -> np.ndarray:
    return R0_SCALE * np.eye(3)


@dataclass
class ObstacleTrack:
    """Filter state for one tracked obstacle."""

    track_id: int
    state: np.ndarray                  # (9,) position, velocity, acceleration
    P: np.ndarray                      # (9, 9)
    Q: np.ndarray                      # (9, 9)
    R: np.ndarray                      # (3, 3)
    alpha: float = ALPHA
    last_seen: float = 0.0
    extent: np.ndarray = field(default_factory=lambda: np.full(3, 0.3))

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[3:6]


def _transition(dt: float) -> np.ndarray:
    F = np.eye(9)
    for ax in range(3):
        F[ax, 3 + ax] = dt
        F[ax, 6 + ax] = 0.5 * dt * dt
        F[3 + ax, 6 + ax] = dt
    return F


def aekf_update(track: ObstacleTrack, z, dt: float) -> ObstacleTrack:
    """Predict-update step plus the noise adaptation; mutates the track.

    The update runs with the previous R; only afterwards are R and Q pulled
    toward the residual and innovation outer products.
    """
    z = np.asarray(z, dtype=float)
    F = _transition(dt)
    x_minus = F @ track.state
    P_minus = F @ track.P @ F.T + track.Q
    S = _H @ P_minus @ _H.T + track.R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise PlanningError("degenerate-innovation",
                            "track %d" % track.track_id)
    if not np.isfinite(S_inv).all():
        raise PlanningError("degenerate-innovation",
                            "track %d" % track.track_id)
    K = P_minus @ _H.T @ S_inv
    d = z - _H @ x_minus
    x_plus = x_minus + K @ d
    A = np.eye(9) - K @ _H
    P_plus = A @ P_minus @ A.T + K @ track.R @ K.T
    P_plus = 0.5 * (P_plus + P_plus.T)

    eps = z - _H @ x_plus
    alpha = track.alpha
    R_new = alpha * track.R + (1.0 - alpha) * np.outer(eps, eps)
    Kd = K @ d
    Q_new = alpha * track.Q + (1.0 - alpha) * np.outer(Kd, Kd)

    track.state = x_plus
    track.P = P_plus
    track.R = 0.5 * (R_new + R_new.T)
    track.Q = 0.5 * (Q_new + Q_new.T)
    track.last_seen += dt
    return track


def init_track(detection, existing, track_id: int = 0, stamp: float = 0.0,
               q0: np.ndarray | None = None, r0: np.ndarray | None = None,
               alpha: float = ALPHA) -> ObstacleTrack:
    """New track seeded at the detection centroid, at rest.

    Noise covariances start from the mean over the existing tracks so a new
    obstacle inherits what the filter has already learned about the sensor;
    the configured defaults apply only to the very first track.
    """
    centroid, extent = detection
    if existing:
        Q = np.mean([t.Q for t in existing], axis=0)
        R = np.mean([t.R for t in existing], axis=0)
    else:
        Q = (q0 if q0 is not None else default_q0()).copy()
        R = (r0 if r0 is not None else default_r0()).copy()
    state = np.zeros(9)
    state[:3] = np.asarray(centroid, dtype=float)
    return ObstacleTrack(track_id=track_id, state=state, P=default_p0(),
                         Q=Q, R=R, alpha=alpha, last_seen=stamp,
                         extent=np.asarray(extent, dtype=float).copy())


def associate(detections, tracks, gate: float = GATE):
    """Greedy nearest-neighbour matching on centroid distance.

    Returns (pairs, unmatched) where pairs is a list of (detection index,
    track index) and unmatched lists detection indices without a track
    within the gate. Each track is used at most once.
    """
    cands = []
    for di, det in enumerate(detections):
        c = np.asarray(det[0], dtype=float)
        for ti, track in enumerate(tracks):
            dist = float(np.linalg.norm(c - track.position))
            if dist <= gate:
                cands.append((dist, di, ti))
    cands.sort()
    used_d: set = set()
    used_t: set = set()
    pairs = []
    for dist, di, ti in cands:
        if di in used_d or ti in used_t:
            continue
        pairs.append((di, ti))
        used_d.add(di)
        used_t.add(ti)
    unmatched = [di for di in range(len(detections)) if di not in used_d]
    return pairs, unmatched


def predict(track: ObstacleTrack, horizon: float = HORIZON,
            n_samples: int = N_SAMPLES, degree: int = DEGREE) -> PredictedTrack:
    """Constant-acceleration rollout smoothed by a per-axis polynomial fit."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if n_samples <= degree:
        raise ValueError("need more samples than the fit degree")
    ts = np.linspace(0.0, horizon, n_samples)
    p, v, a = track.state[:3], track.state[3:6], track.state[6:9]
    samples = p[None, :] + np.outer(ts, v) + 0.5 * np.outer(ts * ts, a)
    coeffs = np.empty((3, degree + 1))
    resid = np.empty(3)
    for ax in range(3):
        coeffs[ax] = np.polyfit(ts, samples[:, ax], degree)
        fit = np.polyval(coeffs[ax], ts)
        resid[ax] = float(np.mean((samples[:, ax] - fit) ** 2))
    return PredictedTrack(track_id=track.track_id, t0=track.last_seen,
                          horizon=horizon, coeffs=coeffs,
                          sigma_ekf=track.P[:3, :3].copy(),
                          sigma_poly=np.diag(resid),
                          extent=track.extent.copy())


class Tracker:
    """Owns the track set: associate, update, initialize, prune, predict."""

    def __init__(self, gate: float = GATE, delete_after: float = DELETE_AFTER,
                 alpha: float = ALPHA, horizon: float = HORIZON,
                 n_samples: int = N_SAMPLES, degree: int = DEGREE):
        self.gate = gate
        self.delete_after = delete_after
        self.alpha = alpha
        self.horizon = horizon
        self.n_samples = n_samples
        self.degree = degree
        self.tracks: list[ObstacleTrack] = []
        self._next_id = 0

    def step(self, detections, stamp: float) -> None:
        """Fold one batch of (centroid, extent) detections at a timestamp."""
        pairs, unmatched = associate(detections, self.tracks, self.gate)
        for di, ti in pairs:
            track = self.tracks[ti]
            dt = max(stamp - track.last_seen, 1e-3)
            aekf_update(track, np.asarray(detections[di][0], dtype=float), dt)
            track.last_seen = stamp
            track.extent = np.maximum(track.extent,
                                      np.asarray(detections[di][1], dtype=float))
        for di in unmatched:
            track = init_track(detections[di], self.tracks,
                               track_id=self._next_id, stamp=stamp,
                               alpha=self.alpha)
            self._next_id += 1
            self.tracks.append(track)
        self.tracks = [t for t in self.tracks
                       if stamp - t.last_seen <= self.delete_after]

    def predictions(self) -> list:
        return [predict(t, self.horizon, self.n_samples, self.degree)
                for t in self.tracks]
