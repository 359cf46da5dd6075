"""IMU handling and the LO/LIO motion-modality state machine.

The IMU never fixes the pose of record here; it only seeds priors for
the scan matcher and carries bias estimates. When the IMU saturates or
faults, the system drops to LiDAR-only (LO) prediction using the
constant-relative-motion model; it returns to LIO once the stream is
healthy and the filtered biases have stabilized.

Error-state convention (15-dim): (dtheta, dp, dv, dbg, dba) with the
rotation error applied on the right: q_true = q (x) Exp(dtheta).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    D_BA,
    D_BG,
    D_POS,
    D_ROT,
    D_VEL,
    NavState,
    quat_conj,
    quat_mul,
    quat_rotate,
    quat_to_mat,
    skew,
    so3_exp,
    so3_log,
    state_boxplus,
)
from .registration import PosePair

LIO = "lio"
LO = "lo"

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class ImuSample:
    t: float
    a: np.ndarray  # specific force, m/s^2
    w: np.ndarray  # angular rate, rad/s


@dataclass
class ImuWindow:
    """Time-ordered IMU samples covering one frame interval."""

    t: np.ndarray  # (N,)
    a: np.ndarray  # (N, 3)
    w: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.t = np.atleast_1d(np.asarray(self.t, dtype=float))
        self.a = np.asarray(self.a, dtype=float).reshape(-1, 3)
        self.w = np.asarray(self.w, dtype=float).reshape(-1, 3)
        if not (self.t.shape[0] == self.a.shape[0] == self.w.shape[0]):
            raise ValueError("imu window arrays disagree in length")

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuWindow":
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(
            np.array([s.t for s in samples]),
            np.array([s.a for s in samples]),
            np.array([s.w for s in samples]),
        )

    def slice(self, t0: float, t1: float) -> "ImuWindow":
        m = (self.t >= t0) & (self.t <= t1)
        return ImuWindow(self.t[m], self.a[m], self.w[m])


@dataclass
class ImuLimits:
    a_max: float = 29.5  # m/s^2
    w_max: float = 17.5  # rad/s
    eta: float = 0.98  # saturation margin

    def __post_init__(self):
        if self.a_max <= 0 or self.w_max <= 0 or not (0 < self.eta <= 1):
            raise ValueError("limits must be positive, eta in (0, 1]")


@dataclass
class NoiseConfig:
    sigma_gyro: float = 1e-3  # rad/s
    sigma_accel: float = 1e-2  # m/s^2
    sigma_bg_walk: float = 1e-5  # rad/s/sqrt(s)
    sigma_ba_walk: float = 1e-4  # m/s^2/sqrt(s)
    obs_sigma_rot: float = 2e-3  # rad
    obs_sigma_pos: float = 5e-3  # m
    scan_info_sigma: float = 0.02  # m, residual scale for information-derived R
    scan_cov_cap: float = 1e4

    def observation_noise(self) -> np.ndarray:
        return np.diag(
            [self.obs_sigma_rot**2] * 3 + [self.obs_sigma_pos**2] * 3
        )


def initial_covariance() -> np.ndarray:
    # accel bias gets a generous prior (0.05 m/s^2 std): consumer IMUs turn
    # on with offsets of a few hundredths and the filter must be able to
    # absorb them rather than push the error into velocity
    return np.diag([1e-4] * 3 + [1e-2] * 3 + [1e-2] * 3 + [1e-4] * 3 + [2.5e-3] * 3)


def detect_saturation(sample: ImuSample, lim: ImuLimits) -> bool:
    """Per-axis rail check with margin: values at >= eta * range count."""
    return bool(
        np.any(np.abs(sample.a) >= lim.eta * lim.a_max)
        or np.any(np.abs(sample.w) >= lim.eta * lim.w_max)
    )


def window_saturated(win: ImuWindow, lim: ImuLimits) -> bool:
    if win.n == 0:
        return False
    return bool(
        np.any(np.abs(win.a) >= lim.eta * lim.a_max)
        or np.any(np.abs(win.w) >= lim.eta * lim.w_max)
    )


def detect_fault(win: ImuWindow, nominal_period: float, gap_factor: float = 3.0) -> bool:
    """Timestamp disorder, dropouts longer than gap_factor periods, or NaNs."""
    if win.n == 0:
        return True
    if not (np.all(np.isfinite(win.t)) and np.all(np.isfinite(win.a)) and np.all(np.isfinite(win.w))):
        return True
    if win.n == 1:
        return False
    dt = np.diff(win.t)
    if np.any(dt <= 0):
        return True
    return bool(np.any(dt > gap_factor * nominal_period))


def propagate_imu(
    x0: NavState,
    P0: np.ndarray,
    win: ImuWindow,
    g_world: np.ndarray = GRAVITY,
    noise: Optional[NoiseConfig] = None,
) -> Tuple[NavState, np.ndarray]:
    """Dead-reckon state and error covariance through an IMU window.

    Each integration step spans two consecutive stamps and uses the
    average of the bracketing measurements (midpoint rule), so smooth
    motions integrate with quadratic error decay in the sample period.
    Biases stay constant. The covariance follows the first-order
    error-state transition of the same discrete model. Empty or
    single-sample windows return the inputs unchanged.
    """
    noise = noise or NoiseConfig()
    x = x0.copy()
    P = P0.copy()
    if win.n < 2:
        return x, P
    q, p, v = x.q.copy(), x.p.copy(), x.v.copy()
    bg, ba = x.bg, x.ba
    sg2, sa2 = noise.sigma_gyro**2, noise.sigma_accel**2
    sbg2, sba2 = noise.sigma_bg_walk**2, noise.sigma_ba_walk**2
    for i in range(win.n - 1):
        dt = win.t[i + 1] - win.t[i]
        wm = 0.5 * (win.w[i] + win.w[i + 1]) - bg
        am = 0.5 * (win.a[i] + win.a[i + 1]) - ba
        R = quat_to_mat(quat_mul(q, so3_exp(wm * (0.5 * dt))))
        a_w = R @ am + g_world
        F = np.eye(15)
        Rd = quat_to_mat(so3_exp(wm * dt))
        F[D_ROT, D_ROT] = Rd.T
        F[D_ROT, D_BG] = -np.eye(3) * dt
        F[D_POS, D_VEL] = np.eye(3) * dt
        F[D_POS, D_ROT] = -0.5 * dt * dt * R @ skew(am)
        F[D_POS, D_BA] = -0.5 * dt * dt * R
        F[D_VEL, D_ROT] = -dt * R @ skew(am)
        F[D_VEL, D_BA] = -dt * R
        Q = np.zeros(15)
        Q[D_ROT] = sg2 * dt * dt
        Q[D_VEL] = sa2 * dt * dt
        Q[D_BG] = sbg2 * dt
        Q[D_BA] = sba2 * dt
        P = F @ P @ F.T + np.diag(Q)
        p = p + v * dt + 0.5 * a_w * dt * dt
        v = v + a_w * dt
        q = quat_mul(q, so3_exp(wm * dt))
    return NavState(q, p, v, bg.copy(), ba.copy()), P


def attitude_from_accel(a_mean: np.ndarray) -> np.ndarray:
    """Roll/pitch attitude whose rotated mean specific force points up.

    Used to bootstrap the world frame from a stationary stretch; yaw is
    left at zero (unobservable from gravity alone).
    """
    a = np.asarray(a_mean, dtype=float)
    norm = np.linalg.norm(a)
    if norm < 1e-6:
        return np.array([1.0, 0.0, 0.0, 0.0])
    u = a / norm  # body-frame up
    z = np.array([0.0, 0.0, 1.0])
    c = float(u @ z)
    if c > 1.0 - 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    if c < -1.0 + 1e-12:
        return np.array([0.0, 1.0, 0.0, 0.0])  # upside down: flip about x
    axis = np.cross(u, z)
    axis /= np.linalg.norm(axis)
    ang = np.arccos(np.clip(c, -1.0, 1.0))
    return so3_exp(axis * ang)


def lo_predict_begin(
    prev: PosePair,
    duration: float,
    bg: Optional[np.ndarray] = None,
    ba: Optional[np.ndarray] = None,
) -> NavState:
    """Begin state for the next frame under the constant-velocity model."""
    if duration <= 0:
        raise ValueError("previous frame duration must be positive")
    v = (prev.p_e - prev.p_b) / duration
    return NavState(
        prev.q_e.copy(),
        prev.p_e.copy(),
        v,
        np.zeros(3) if bg is None else bg.copy(),
        np.zeros(3) if ba is None else ba.copy(),
    )


def lo_predict_end(prev: PosePair, cur_begin: Tuple[np.ndarray, np.ndarray]):
    """End pose by replaying the previous frame's world-frame relative motion.

    With D = T_prev_end o T_prev_begin^-1 (left/world delta), the
    prediction is D applied to the current begin pose.
    """
    q_b, p_b = cur_begin
    dq = quat_mul(prev.q_e, quat_conj(prev.q_b))
    q_e = quat_mul(dq, q_b)
    p_e = quat_rotate(dq, p_b - prev.p_b) + prev.p_e
    return q_e, p_e


def scan_pose_covariance(A: np.ndarray, sigma: float, cap: float = 1e4) -> np.ndarray:
    """Covariance of a solved end pose, read off the scan information matrix.

    A is the 12x12 Gauss-Newton information of a window solve over the
    stacked (begin, end) pose errors, point-to-plane rows only. The begin
    block is marginalized out by a Schur complement and the remainder is
    inverted with sigma (the residual scale in meters) setting the overall
    level. Directions the scan never constrained come out at cap instead
    of blowing up, so the filter treats them as uninformative rather than
    swallowing a pose component that merely echoes its own prediction.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (12, 12) or not np.all(np.isfinite(A)):
        return np.full((6, 6), np.nan)
    s2 = sigma * sigma
    bb = A[0:6, 0:6] + (s2 / cap) * np.eye(6)
    eb = A[6:12, 0:6]
    S = A[6:12, 6:12] - eb @ np.linalg.solve(bb, eb.T)
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    var = s2 / np.maximum(w, s2 / cap)
    return (V * var) @ V.T


def eskf_update(
    xhat: NavState,
    P: np.ndarray,
    z_pose: Tuple[np.ndarray, np.ndarray],
    R_noise: np.ndarray,
) -> Tuple[NavState, np.ndarray, bool]:
    """Correct the propagated state with an observed end pose.

    Observation = (quaternion, position) from the scan matcher. Returns
    (posterior state, posterior covariance, accepted). A non-finite
    innovation rejects the update and returns the inputs.
    """
    q_z, p_z = z_pose
    y = np.concatenate([so3_log(quat_mul(quat_conj(xhat.q), q_z)), p_z - xhat.p])
    if not np.all(np.isfinite(y)):
        return xhat, P, False
    H = np.zeros((6, 15))
    H[0:3, 0:3] = np.eye(3)
    H[3:6, 3:6] = np.eye(3)
    S = H @ P @ H.T + R_noise
    K = P @ H.T @ np.linalg.solve(S, np.eye(6))
    dx = K @ y
    if not np.all(np.isfinite(dx)):
        return xhat, P, False
    x_post = state_boxplus(xhat, dx)
    IKH = np.eye(15) - K @ H
    P_post = IKH @ P @ IKH.T + K @ R_noise @ K.T
    P_post = 0.5 * (P_post + P_post.T)
    return x_post, P_post, True


@dataclass
class ModeState:
    """Current modality plus the evidence the transition rules consume."""

    mode: str = LIO
    saturated: bool = False
    faulted: bool = False
    history: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    window: int = 5
    eps_ba: float = 0.02  # m/s^2
    eps_bg: float = 0.002  # rad/s

    def record_bias(self, ba: np.ndarray, bg: np.ndarray) -> None:
        self.history.append((np.asarray(ba, dtype=float).copy(), np.asarray(bg, dtype=float).copy()))
        if len(self.history) > self.window:
            del self.history[: len(self.history) - self.window]


def bias_converged(mode: ModeState) -> bool:
    """Stability test: biases move less than the thresholds over the window.

    Max pairwise spread per component, which for per-component data is
    just max minus min. Needs at least two entries.
    """
    if len(mode.history) < 2:
        return False
    bas = np.array([h[0] for h in mode.history])
    bgs = np.array([h[1] for h in mode.history])
    spread_a = bas.max(axis=0) - bas.min(axis=0)
    spread_g = bgs.max(axis=0) - bgs.min(axis=0)
    return bool(np.all(spread_a < mode.eps_ba) and np.all(spread_g < mode.eps_bg))


def mode_step(mode: ModeState, saturated: bool, faulted: bool, converged: bool) -> ModeState:
    """One transition of the modality machine; returns an updated copy."""
    new_mode = mode.mode
    if mode.mode == LIO and (saturated or faulted):
        new_mode = LO
    elif mode.mode == LO and not saturated and not faulted and converged:
        new_mode = LIO
    return ModeState(
        mode=new_mode,
        saturated=saturated,
        faulted=faulted,
        history=list(mode.history),
        window=mode.window,
        eps_ba=mode.eps_ba,
        eps_bg=mode.eps_bg,
    )
