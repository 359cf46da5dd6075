"""Point-cloud frame representation and keypoint selection.

A frame couples a batch of sensor-frame points with per-point acquisition
times (seconds since frame begin) and the begin/end states bracketing the
sweep. Points are stored as arrays for vectorized processing; ``RawPoint``
is the per-point value view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MalformedFrameError
from .geometry import NavState


@dataclass
class RawPoint:
    xyz: np.ndarray  # sensor frame, meters
    dt: float  # seconds since frame begin


@dataclass
class PointFrame:
    """One LiDAR sweep: points, per-point times and bracketing states.

    ``n_clamped`` counts points whose dt fell outside [0, duration] on
    ingestion and were clamped; ``n_dropped`` counts non-finite or
    zero-range points that were discarded.
    """

    xyz: np.ndarray  # (N, 3) sensor frame
    dt: np.ndarray  # (N,) seconds since t_begin
    t_begin: float
    t_end: float
    state_begin: Optional[NavState] = None
    state_end: Optional[NavState] = None
    id: int = 0
    n_clamped: int = 0
    n_dropped: int = 0

    def __post_init__(self):
        self.xyz = np.atleast_2d(np.asarray(self.xyz, dtype=float))
        self.dt = np.atleast_1d(np.asarray(self.dt, dtype=float))
        if self.xyz.shape[0] == 0:
            self.xyz = self.xyz.reshape(0, 3)
        if self.t_end <= self.t_begin:
            raise MalformedFrameError(
                f"frame {self.id}: t_end ({self.t_end}) must exceed t_begin ({self.t_begin})"
            )
        if self.xyz.shape[0] != self.dt.shape[0]:
            raise MalformedFrameError("xyz and dt length mismatch")

    @property
    def n_points(self) -> int:
        return self.xyz.shape[0]

    @property
    def duration(self) -> float:
        return self.t_end - self.t_begin

    def point(self, i: int) -> RawPoint:
        return RawPoint(self.xyz[i], float(self.dt[i]))


def make_frame(
    xyz: np.ndarray,
    dt: np.ndarray,
    t_begin: float,
    t_end: float,
    frame_id: int = 0,
    state_begin: Optional[NavState] = None,
    state_end: Optional[NavState] = None,
) -> PointFrame:
    """Build a frame, dropping invalid points and clamping out-of-range times.

    Real logs carry timestamp jitter; instead of rejecting the frame, dt
    values outside [0, duration] are clamped and counted.
    """
    xyz = np.atleast_2d(np.asarray(xyz, dtype=float))
    dt = np.atleast_1d(np.asarray(dt, dtype=float))
    if xyz.shape[0] == 0:
        xyz = xyz.reshape(0, 3)
    if t_end <= t_begin:
        raise MalformedFrameError(f"frame {frame_id}: non-positive duration")
    finite = np.isfinite(xyz).all(axis=1) & np.isfinite(dt)
    nonzero = np.linalg.norm(xyz, axis=1) > 0.0
    keep = finite & nonzero
    n_dropped = int((~keep).sum())
    xyz = xyz[keep]
    dt = dt[keep]
    duration = t_end - t_begin
    clamped = np.clip(dt, 0.0, duration)
    n_clamped = int((clamped != dt).sum())
    return PointFrame(
        xyz=xyz,
        dt=clamped,
        t_begin=t_begin,
        t_end=t_end,
        state_begin=state_begin,
        state_end=state_end,
        id=frame_id,
        n_clamped=n_clamped,
        n_dropped=n_dropped,
    )


def sort_by_time(frame: PointFrame) -> PointFrame:
    """Return a copy with points stably sorted by ascending dt."""
    order = np.argsort(frame.dt, kind="stable")
    return PointFrame(
        xyz=frame.xyz[order],
        dt=frame.dt[order],
        t_begin=frame.t_begin,
        t_end=frame.t_end,
        state_begin=frame.state_begin,
        state_end=frame.state_end,
        id=frame.id,
        n_clamped=frame.n_clamped,
        n_dropped=frame.n_dropped,
    )


@dataclass
class Keypoints:
    """Indices of selected points plus their sensor-frame positions.

    ``world`` holds the deskewed world-frame estimates once registration
    has run; it is empty until then.
    """

    indices: np.ndarray  # (M,) int, unique, ascending
    xyz: np.ndarray  # (M, 3) sensor frame
    dt: np.ndarray  # (M,)
    world: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def count(self) -> int:
        return self.indices.shape[0]


def select_keypoints(frame: PointFrame, cell: float) -> Keypoints:
    """Voxel-grid downsample: one survivor per cubic cell of side ``cell``.

    The survivor is the point closest to its cell center; ties break to the
    lowest point index. Deterministic and idempotent.
    """
    if cell <= 0:
        raise ValueError("cell size must be positive")
    n = frame.n_points
    if n == 0:
        return Keypoints(np.zeros(0, dtype=int), np.zeros((0, 3)), np.zeros(0))
    keys = np.floor(frame.xyz / cell).astype(np.int64)
    centers = (keys + 0.5) * cell
    d2 = np.einsum("ij,ij->i", frame.xyz - centers, frame.xyz - centers)
    idx = np.arange(n)
    # primary sort: cell key; secondary: distance to center; tertiary: index
    order = np.lexsort((idx, d2, keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    first = np.ones(n, dtype=bool)
    first[1:] = np.any(sk[1:] != sk[:-1], axis=1)
    winners = np.sort(idx[order][first])
    return Keypoints(winners, frame.xyz[winners].copy(), frame.dt[winners].copy())


def compute_alpha(frame: PointFrame, pt: RawPoint) -> float:
    """Interpolation coefficient for one point: dt / duration, clamped."""
    if frame.duration <= 0:
        raise MalformedFrameError("zero-duration frame")
    return float(np.clip(pt.dt / frame.duration, 0.0, 1.0))


def compute_alphas(frame: PointFrame, dt: Optional[np.ndarray] = None) -> np.ndarray:
    """Vectorized interpolation coefficients for a batch of dt values."""
    if frame.duration <= 0:
        raise MalformedFrameError("zero-duration frame")
    if dt is None:
        dt = frame.dt
    return np.clip(dt / frame.duration, 0.0, 1.0)
