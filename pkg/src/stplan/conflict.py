"""Spatio-temporal conflict tests against predicted obstacle boxes.

All tests share one sampling convention: trajectories and path segments are
linearly interpolated and checked every CONFLICT_STEP seconds, endpoints
included, against each obstacle's axis-aligned box (extent plus inflation).
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .types import PredictedTrack

CONFLICT_STEP = 0.05


def sample_times(t0: float, t1: float, step: float = CONFLICT_STEP) -> np.ndarray:
    """Times t0, t0+step, ... plus t1 itself; handles t1 <= t0."""
    if t1 <= t0:
        return np.array([t0])
    n = int(np.floor((t1 - t0) / step + 1e-12))
    ts = t0 + step * np.arange(n + 1)
    if t1 - ts[-1] > 1e-12:
        ts = np.append(ts, t1)
    else:
        ts[-1] = t1
    return ts


def point_conflicts(point: np.ndarray, t: float,
                    tracks: Iterable[PredictedTrack],
                    inflate: float = 0.0) -> bool:
    """True if point lies inside any predicted box at time t."""
    p = np.asarray(point, dtype=float)
    for track in tracks:
        half = track.extent + inflate
        if np.all(np.abs(p - track.position_at(t)) <= half):
            return True
    return False


def segment_conflicts(p0: np.ndarray, t0: float, p1: np.ndarray, t1: float,
                      tracks: Sequence[PredictedTrack],
                      inflate: float = 0.0,
                      step: float = CONFLICT_STEP) -> bool:
    """Sampled conflict test of one linearly interpolated segment."""
    if not tracks:
        return False
    ts = sample_times(t0, t1, step)
    if t1 > t0:
        alphas = (ts - t0) / (t1 - t0)
    else:
        alphas = np.zeros_like(ts)
    pts = np.outer(1.0 - alphas, p0) + np.outer(alphas, p1)
    for track in tracks:
        centers = track.position_at(ts)
        half = track.extent + inflate
        if np.any(np.all(np.abs(pts - centers) <= half, axis=1)):
            return True
    return False


def first_conflict_index(points: Sequence[np.ndarray], times: Sequence[float],
                         tracks: Sequence[PredictedTrack],
                         inflate: float = 0.0,
                         step: float = CONFLICT_STEP) -> int | None:
    """Index of the first node whose outgoing segment (or itself) conflicts.

    Returns i such that the conflict happens at node i or strictly between
    nodes i and i+1; None when the whole chain is clear.
    """
    if not tracks:
        return None
    n = len(points)
    if n == 0:
        return None
    if n == 1:
        return 0 if point_conflicts(points[0], times[0], tracks, inflate) else None
    ts = np.asarray(times, dtype=float)
    if float(np.max(np.diff(ts))) < 2.0 * step - 1e-9:
        # Nodes closer than two steps get no interior samples, so the sampled
        # segment tests reduce to node tests; run those in one pass per track.
        pts = np.asarray(points, dtype=float)
        hit = np.zeros(n, dtype=bool)
        for track in tracks:
            centers = track.position_at(ts)
            half = track.extent + inflate
            hit |= np.all(np.abs(pts - centers) <= half, axis=1)
        if not hit.any():
            return None
        idx = int(np.argmax(hit))
        return 0 if idx == 0 else idx - 1
    if point_conflicts(points[0], times[0], tracks, inflate):
        return 0
    for i in range(n - 1):
        if segment_conflicts(points[i], times[i], points[i + 1], times[i + 1],
                             tracks, inflate, step):
            return i
    return None


def path_clear(points: Sequence[np.ndarray], times: Sequence[float],
               tracks: Sequence[PredictedTrack],
               inflate: float = 0.0,
               step: float = CONFLICT_STEP) -> bool:
    return first_conflict_index(points, times, tracks, inflate, step) is None
