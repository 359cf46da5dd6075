"""Continuous-time frame-to-map registration.

Each point is deskewed by interpolating between a frame's begin and end
poses (quaternion slerp for rotation, lerp for translation) at the
point's normalized acquisition time. Point-to-plane residuals against
local map planes, plus inter-frame consistency residuals, are minimized
over the 12-dof pose pair by iterated reweighted Gauss-Newton with a
Levenberg damping fallback.

Rotation Jacobians use the exact derivative of the slerp with respect to
right-multiplicative perturbations of the endpoint quaternions:

    R(a) = R_b Exp(a*D),  D = Log(R_b^T R_e)
    dphi = C_b eps_b + C_e eps_e
    C_b  = Exp(a*D)^T - a * Jr(a*D) Jl^{-1}(D)
    C_e  = a * Jr(a*D) Jr^{-1}(D)

which reduce to C_b = I, C_e = 0 at a=0 and C_b = 0, C_e = I at a=1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import InsufficientResidualsError, SolverDivergedError
from .frames import Keypoints, PointFrame, RawPoint, compute_alphas, select_keypoints
from .geometry import (
    SMALL_ANGLE,
    NavState,
    quat_conj,
    quat_mul,
    quat_rotate,
    quat_slerp,
    quat_to_mat,
    lerp3,
    skew,
    so3_exp,
    so3_exp_batch,
    so3_left_jacobian_inv,
    so3_log,
    so3_right_jacobian_inv,
    quat_mul_batch,
    quat_rotate_batch,
)
from .voxel_map import MultiResMap, fit_planes_batched


@dataclass
class PosePair:
    """Begin and end poses of one frame, the optimization variables."""

    q_b: np.ndarray
    p_b: np.ndarray
    q_e: np.ndarray
    p_e: np.ndarray

    @classmethod
    def from_states(cls, begin: NavState, end: NavState) -> "PosePair":
        return cls(begin.q.copy(), begin.p.copy(), end.q.copy(), end.p.copy())

    @classmethod
    def identity(cls) -> "PosePair":
        return cls(
            np.array([1.0, 0.0, 0.0, 0.0]),
            np.zeros(3),
            np.array([1.0, 0.0, 0.0, 0.0]),
            np.zeros(3),
        )

    def copy(self) -> "PosePair":
        return PosePair(self.q_b.copy(), self.p_b.copy(), self.q_e.copy(), self.p_e.copy())

    def interpolate(self, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
        return quat_slerp(self.q_b, self.q_e, alpha), lerp3(self.p_b, self.p_e, alpha)


@dataclass
class PlaneResidual:
    index: int
    alpha: float
    normal: np.ndarray  # unit
    anchor: np.ndarray  # world point on the plane
    weight: float = 1.0


@dataclass
class SolverConfig:
    max_iters: int = 20
    tol: float = 1e-9  # update norm convergence threshold
    cost_rel_tol: float = 1e-6  # stop when a step improves cost less than this
    huber_scale: float = 0.3  # meters
    beta_c: float = 100.0  # elastic weight on the boundary pose mismatch
    # The velocity rows get their own, much softer weight. Their information
    # scales as beta/T^2, so at beta_c they would drown out the scan on well
    # observed axes and pin every frame to dead reckoning; the pose rows need
    # to stay stiff or the chain of window anchors dissolves.
    beta_v: float = 0.5
    knn: int = 5
    min_planarity: float = 0.1
    min_residuals: int = 20
    keypoint_cell: float = 0.5
    damping_factor: float = 10.0
    damping_retries: int = 3


@dataclass
class SolveReport:
    pose: PosePair
    cost: float
    iterations: int
    n_residuals: int
    J: np.ndarray  # (m, 12) weighted point-plane rows, last iteration
    A: np.ndarray  # (12, 12) = J^T J
    update_norms: List[float] = field(default_factory=list)
    cost_history: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def v_end(self) -> np.ndarray:
        """Velocity implied by the optimized translation difference."""
        return self._v_end

    _v_end: np.ndarray = field(default_factory=lambda: np.zeros(3))


# ---------------------------------------------------------------------------
# batched quaternion helpers (module-private; scalar versions live in geometry)


def _interp_rotations(q_b, q_e, alphas):
    """Slerp quaternions for a batch of alphas, plus the shared log Delta."""
    delta = so3_log(quat_mul(quat_conj(q_b), q_e))
    q_rel = so3_exp_batch(alphas[:, None] * delta[None, :])
    return quat_mul_batch(q_b, q_rel), delta


def deskew_point(pt: RawPoint, pose: PosePair, alpha: float) -> np.ndarray:
    """World position of one point via two-pose interpolation at alpha."""
    q, p = pose.interpolate(alpha)
    return quat_rotate(q, pt.xyz) + p


def deskew_batch(pose: PosePair, xyz: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Vectorized deskew of (M, 3) sensor points at (M,) alphas."""
    if xyz.shape[0] == 0:
        return xyz.copy()
    q_s, _ = _interp_rotations(pose.q_b, pose.q_e, alphas)
    trans = (1.0 - alphas)[:, None] * pose.p_b + alphas[:, None] * pose.p_e
    return quat_rotate_batch(q_s, xyz) + trans


def point_plane_residual(p_world: np.ndarray, plane: PlaneResidual) -> float:
    """Signed distance of the world point along the plane normal."""
    return float(plane.normal @ (p_world - plane.anchor))


def robust_weight(r, scale: float):
    """Huber IRLS weight: 1 inside the scale, scale/|r| outside."""
    if scale <= 0:
        raise ValueError("robust scale must be positive")
    a = np.abs(r)
    return np.where(a <= scale, 1.0, scale / np.maximum(a, scale))


def consistency_residuals(prev_end: NavState, cur_begin: NavState) -> np.ndarray:
    """Stacked rotation/position/velocity mismatch between frame boundaries.

    Rotation part is 2 * vec(q_e^-1 (x) q_b), which approaches the rotation
    vector between the two attitudes for small offsets.
    """
    dq = quat_mul(quat_conj(prev_end.q), cur_begin.q)
    return np.concatenate(
        [2.0 * dq[1:], cur_begin.p - prev_end.p, cur_begin.v - prev_end.v]
    )


def _slerp_chain_mats(delta: np.ndarray, alphas: np.ndarray):
    """C_b, C_e matrices mapping endpoint perturbations to interpolated ones.

    Both are (M, 3, 3). Built from powers of the unit-axis skew so the whole
    batch shares two fixed matrices.
    """
    M = alphas.shape[0]
    theta = float(np.linalg.norm(delta))
    if theta < SMALL_ANGLE:
        eye = np.eye(3)
        C_b = (1.0 - alphas)[:, None, None] * eye
        C_e = alphas[:, None, None] * eye
        return C_b, C_e
    axis = delta / theta
    S = skew(axis)
    S2 = S @ S
    eye = np.eye(3)
    th = alphas * theta
    sin, cos = np.sin(th), np.cos(th)
    # Exp(a*D)^T = I - sin*S + (1-cos)*S^2
    exp_T = eye - sin[:, None, None] * S + (1.0 - cos)[:, None, None] * S2
    # Jr(theta*axis) = I - ((1-cos)/th)*S + ((th-sin)/th)*S^2, guarded at 0
    with np.errstate(invalid="ignore", divide="ignore"):
        c1 = np.where(th > SMALL_ANGLE, (1.0 - cos) / np.where(th > 0, th, 1.0), th / 2.0)
        c2 = np.where(th > SMALL_ANGLE, (th - sin) / np.where(th > 0, th, 1.0), th * th / 6.0)
    jr = eye - c1[:, None, None] * S + c2[:, None, None] * S2
    jl_inv = so3_left_jacobian_inv(delta)
    jr_inv = so3_right_jacobian_inv(delta)
    C_b = exp_T - alphas[:, None, None] * (jr @ jl_inv)
    C_e = alphas[:, None, None] * (jr @ jr_inv)
    return C_b, C_e


def residual_jacobian(pt: RawPoint, pose: PosePair, plane: PlaneResidual) -> np.ndarray:
    """Analytic 1x12 row [d/dtheta_b, d/dp_b, d/dtheta_e, d/dp_e].

    Rotation blocks are with respect to right-multiplicative tangent
    perturbations of the endpoint quaternions.
    """
    rows = residual_jacobian_batch(
        pose,
        np.asarray(pt.xyz, dtype=float)[None, :],
        np.array([plane.alpha]),
        plane.normal[None, :],
    )
    return rows[0]


def residual_jacobian_batch(
    pose: PosePair, xyz: np.ndarray, alphas: np.ndarray, normals: np.ndarray
) -> np.ndarray:
    """Rows of the point-to-plane Jacobian for a batch of residuals, (M, 12)."""
    M = xyz.shape[0]
    rows = np.zeros((M, 12))
    if M == 0:
        return rows
    q_s, delta = _interp_rotations(pose.q_b, pose.q_e, alphas)
    C_b, C_e = _slerp_chain_mats(delta, alphas)
    # d r / d dphi = -n^T R_s [p]x = (p x (R_s^T n))^T
    a = quat_rotate_batch(np.column_stack([q_s[:, 0], -q_s[:, 1:]]), normals)  # R_s^T n
    g = np.cross(xyz, a)
    rows[:, 0:3] = np.einsum("mi,mij->mj", g, C_b)
    rows[:, 3:6] = (1.0 - alphas)[:, None] * normals
    rows[:, 6:9] = np.einsum("mi,mij->mj", g, C_e)
    rows[:, 9:12] = alphas[:, None] * normals
    return rows


def _consistency_jacobian(pose: PosePair, prev_end: NavState, duration: float) -> np.ndarray:
    """(9, 12) Jacobian of the consistency residuals.

    The begin velocity is not a free variable: it is the mean velocity
    implied by the translation difference, so the velocity rows couple
    p_b and p_e.
    """
    J = np.zeros((9, 12))
    dq = quat_mul(quat_conj(prev_end.q), pose.q_b)
    J[0:3, 0:3] = dq[0] * np.eye(3) + skew(dq[1:])
    J[3:6, 3:6] = np.eye(3)
    J[6:9, 3:6] = -np.eye(3) / duration
    J[6:9, 9:12] = np.eye(3) / duration
    return J


def _pose_boxplus(pose: PosePair, delta: np.ndarray) -> PosePair:
    return PosePair(
        quat_mul(pose.q_b, so3_exp(delta[0:3])),
        pose.p_b + delta[3:6],
        quat_mul(pose.q_e, so3_exp(delta[6:9])),
        pose.p_e + delta[9:12],
    )


def _implied_begin_state(pose: PosePair, duration: float) -> NavState:
    v = (pose.p_e - pose.p_b) / duration
    return NavState(q=pose.q_b.copy(), p=pose.p_b.copy(), v=v)


def _associate(
    vmap: MultiResMap,
    pose: PosePair,
    kp: Keypoints,
    alphas: np.ndarray,
    levels: np.ndarray,
    cfg: SolverConfig,
):
    """Deskew keypoints, fetch neighbor planes, return valid residual data."""
    world = deskew_batch(pose, kp.xyz, alphas)
    neigh, counts = vmap.neighbors_batch(world, levels, k=cfg.knn)
    origins = (1.0 - alphas)[:, None] * pose.p_b + alphas[:, None] * pose.p_e
    normals, anchors, planarity, valid = fit_planes_batched(neigh, counts, origins)
    valid = valid & (planarity >= cfg.min_planarity)
    sel = np.flatnonzero(valid)
    r = np.einsum("mi,mi->m", normals[sel], world[sel] - anchors[sel])
    return sel, world, r, normals[sel], anchors[sel]


def solve(
    frame: PointFrame,
    vmap: MultiResMap,
    cfg: SolverConfig,
    prior: PosePair,
    prev_end: Optional[NavState] = None,
    keypoints: Optional[Keypoints] = None,
) -> SolveReport:
    """Register one frame against the map.

    Iterates: deskew keypoints at the current pose pair, re-associate
    against the map, build robustified point-to-plane rows plus
    beta_c-weighted consistency rows, take a Gauss-Newton step (Levenberg
    damping fallback on cost increase). The reported cost is the
    reweighted least-squares surrogate on that iteration's fixed
    associations, so accepted steps never increase it.

    When ``prev_end`` is missing the consistency anchor is synthesized
    from the prior itself, turning the elastic term into a prior
    regularizer with zero initial residual.
    """
    kp = keypoints if keypoints is not None else select_keypoints(frame, cfg.keypoint_cell)
    alphas = compute_alphas(frame, kp.dt)
    ranges = np.linalg.norm(kp.xyz, axis=1)
    levels = vmap.level_for_range(ranges)
    duration = frame.duration
    if prev_end is None:
        prev_end = _implied_begin_state(prior, duration)

    pose = prior.copy()
    sqrt_c = np.concatenate([
        np.full(6, np.sqrt(cfg.beta_c)), np.full(3, np.sqrt(cfg.beta_v))
    ])
    update_norms: List[float] = []
    cost_history: List[Tuple[float, float]] = []
    J_icp = np.zeros((0, 12))
    n_res = 0
    last_cost = np.nan
    iterations = 0
    best_cost = np.inf
    best_pose = pose
    stalls = 0

    for it in range(cfg.max_iters):
        iterations = it + 1
        sel, world, r, normals, anchors = _associate(vmap, pose, kp, alphas, levels, cfg)
        n_res = sel.shape[0]
        if n_res < cfg.min_residuals:
            raise InsufficientResidualsError(
                f"frame {frame.id}: {n_res} valid residuals (< {cfg.min_residuals})"
            )
        w = robust_weight(r, cfg.huber_scale)
        sw = np.sqrt(w)
        rows = residual_jacobian_batch(pose, kp.xyz[sel], alphas[sel], normals)
        J_icp = rows * sw[:, None]
        r_w = r * sw

        r_c = consistency_residuals(prev_end, _implied_begin_state(pose, duration))
        J_c = _consistency_jacobian(pose, prev_end, duration) * sqrt_c[:, None]
        r_cw = r_c * sqrt_c

        cost = float(r_w @ r_w + r_cw @ r_cw)
        if not np.isfinite(cost):
            raise SolverDivergedError(f"frame {frame.id}: non-finite cost")

        H = J_icp.T @ J_icp + J_c.T @ J_c
        g = J_icp.T @ r_w + J_c.T @ r_cw

        lam = 0.0
        accepted = False
        for attempt in range(cfg.damping_retries + 1):
            try:
                delta = np.linalg.solve(H + lam * np.eye(12), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                cand = _pose_boxplus(pose, delta)
                # candidate cost on the same associations and weights
                cw = deskew_batch(cand, kp.xyz[sel], alphas[sel])
                rc2 = np.einsum("mi,mi->m", normals, cw - anchors) * sw
                ccw = consistency_residuals(
                    prev_end, _implied_begin_state(cand, duration)
                ) * sqrt_c
                new_cost = float(rc2 @ rc2 + ccw @ ccw)
                if np.isfinite(new_cost) and new_cost <= cost * (1.0 + 1e-12) + 1e-15:
                    pose = cand
                    accepted = True
                    update_norms.append(float(np.linalg.norm(delta)))
                    cost_history.append((cost, new_cost))
                    last_cost = new_cost
                    break
            lam = cfg.damping_factor * max(lam, 1e-6 * max(np.mean(np.diag(H)), 1e-12))
        if not accepted:
            if it == 0:
                raise SolverDivergedError(
                    f"frame {frame.id}: no descent step found at first iteration"
                )
            break  # keep the last accepted pose
        if update_norms[-1] < cfg.tol:
            break
        # correspondence shuffling can settle into a limit cycle where
        # re-association undoes each step's gain; track the best accepted
        # cost and stop after two iterations without real progress
        if last_cost < best_cost * (1.0 - cfg.cost_rel_tol):
            best_cost = last_cost
            best_pose = pose
            stalls = 0
        else:
            stalls += 1
            if stalls >= 2:
                break

    if best_cost < last_cost:
        pose = best_pose
        last_cost = best_cost
    report = SolveReport(
        pose=pose,
        cost=last_cost,
        iterations=iterations,
        n_residuals=n_res,
        J=J_icp,
        A=J_icp.T @ J_icp,
        update_norms=update_norms,
        cost_history=cost_history,
    )
    report._v_end = (pose.p_e - pose.p_b) / duration
    return report
