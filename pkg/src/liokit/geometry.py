"""Rotation and state-manifold primitives.

Conventions used throughout the package:

- Quaternions are Hamiltonian, stored as length-4 arrays ``[w, x, y, z]``,
  unit norm, canonicalized to ``w >= 0`` so that ``q`` and ``-q`` produce
  identical outputs.
- Rotation vectors are axis * angle in radians.
- Navigation states live on the manifold (orientation, position, velocity,
  gyro bias, accel bias); error vectors are 15-dim with the rotation error
  applied on the right (body frame): ``q' = q (x) exp(dtheta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8

# 15-dim error vector layout
D_ROT = slice(0, 3)
D_POS = slice(3, 6)
D_VEL = slice(6, 9)
D_BG = slice(9, 12)
D_BA = slice(12, 15)


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Normalize to unit length and flip sign so w >= 0."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot canonicalize zero/non-finite quaternion")
    # skip the divide when already unit so canonicalization is idempotent
    if abs(n - 1.0) > 1e-12:
        q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a (x) b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by quaternion q (equivalent to R(q) @ v)."""
    u = np.asarray(q[1:], dtype=float)
    w = float(q[0])
    t = 2.0 * np.cross(u, v)
    return np.asarray(v, dtype=float) + w * t + np.cross(u, t)


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(v: np.ndarray) -> np.ndarray:
    """Axis-angle rotation vector -> unit quaternion (Taylor branch near 0)."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < SMALL_ANGLE:
        # sin(a/2)/a ~ 1/2 - a^2/48 keeps the branch C2-smooth
        s = 0.5 - angle * angle / 48.0
        q = np.array([1.0 - angle * angle / 8.0, s * v[0], s * v[1], s * v[2]])
    else:
        half = 0.5 * angle
        s = np.sin(half) / angle
        q = np.array([np.cos(half), s * v[0], s * v[1], s * v[2]])
    return quat_canonical(q)


def so3_log(q: np.ndarray) -> np.ndarray:
    """Unit quaternion -> rotation vector with norm <= pi."""
    q = quat_canonical(q)
    w = min(q[0], 1.0)
    u = q[1:]
    un = np.linalg.norm(u)
    if un < SMALL_ANGLE:
        # angle ~ 2*un/w for small rotations
        return 2.0 / w * u
    angle = 2.0 * np.arctan2(un, w)
    return (angle / un) * u


def so3_left_jacobian(v: np.ndarray) -> np.ndarray:
    """Left Jacobian J_l of SO(3): Exp(v + d) ~ Exp(J_l(v) d) Exp(v)."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v)
    S = skew(v)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * S + S @ S / 6.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * S + b * (S @ S)


def so3_right_jacobian(v: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r(v) = J_l(-v)."""
    return so3_left_jacobian(-np.asarray(v, dtype=float))


def so3_left_jacobian_inv(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v)
    S = skew(v)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * S + S @ S / 12.0
    half = 0.5 * theta
    cot = half / np.tan(half)
    return np.eye(3) - 0.5 * S + (1.0 - cot) / (theta * theta) * (S @ S)


def so3_right_jacobian_inv(v: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(v, dtype=float))


def so3_exp_batch(phi: np.ndarray) -> np.ndarray:
    """Unit quaternions for an (M, 3) batch of rotation vectors."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=1)
    half = 0.5 * angle
    w = np.cos(half)
    small = angle < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(angle > 0, angle, 1.0))
    q = np.empty((phi.shape[0], 4))
    q[:, 0] = np.where(small, 1.0 - angle * angle / 8.0, w)
    q[:, 1:] = phi * s[:, None]
    return q


def quat_mul_batch(q0: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """One quaternion (4,) composed on the left with each row of Q (M, 4)."""
    w0, x0, y0, z0 = q0
    w, x, y, z = Q[:, 0], Q[:, 1], Q[:, 2], Q[:, 3]
    out = np.empty_like(Q)
    out[:, 0] = w0 * w - x0 * x - y0 * y - z0 * z
    out[:, 1] = w0 * x + x0 * w + y0 * z - z0 * y
    out[:, 2] = w0 * y - x0 * z + y0 * w + z0 * x
    out[:, 3] = w0 * z + x0 * y - y0 * x + z0 * w
    return out


def quat_rotate_batch(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Rotate each row of P (M, 3) by the matching row of Q (M, 4)."""
    w = Q[:, 0:1]
    u = Q[:, 1:]
    uxp = np.cross(u, P)
    return P + 2.0 * (w * uxp + np.cross(u, uxp))


def quat_slerp(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    """Shortest-path spherical interpolation, exact at the endpoints."""
    q0 = quat_canonical(q0)
    q1 = quat_canonical(q1)
    if alpha <= 0.0:
        return q0
    if alpha >= 1.0:
        return q1
    if float(np.dot(q0, q1)) < 0.0:
        q1 = -q1
    rel = so3_log(quat_mul(quat_conj(q0), q1))
    return quat_canonical(quat_mul(q0, so3_exp(alpha * rel)))


def lerp3(p0: np.ndarray, p1: np.ndarray, alpha: float) -> np.ndarray:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if alpha == 0.0:
        return p0.copy()
    if alpha == 1.0:
        return p1.copy()
    return (1.0 - alpha) * p0 + alpha * p1


@dataclass
class NavState:
    """Robot state: orientation, position, velocity, gyro bias, accel bias.

    Treated as an immutable value; operations return new instances.
    """

    q: np.ndarray
    p: np.ndarray
    v: np.ndarray
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @staticmethod
    def identity() -> "NavState":
        return NavState(quat_identity(), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))

    def copy(self) -> "NavState":
        return NavState(self.q.copy(), self.p.copy(), self.v.copy(), self.bg.copy(), self.ba.copy())


def state_boxplus(x: NavState, d: np.ndarray) -> NavState:
    """Apply a 15-dim error vector: rotation on the right, rest additive."""
    d = np.asarray(d, dtype=float)
    return NavState(
        q=quat_canonical(quat_mul(x.q, so3_exp(d[D_ROT]))),
        p=x.p + d[D_POS],
        v=x.v + d[D_VEL],
        bg=x.bg + d[D_BG],
        ba=x.ba + d[D_BA],
    )


def state_boxminus(a: NavState, b: NavState) -> np.ndarray:
    """15-dim difference such that b boxplus (a boxminus b) == a."""
    out = np.empty(15)
    out[D_ROT] = so3_log(quat_mul(quat_conj(b.q), a.q))
    out[D_POS] = a.p - b.p
    out[D_VEL] = a.v - b.v
    out[D_BG] = a.bg - b.bg
    out[D_BA] = a.ba - b.ba
    return out
