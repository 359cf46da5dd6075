"""Synthetic scene and sensor simulator.

Worlds are soups of bounded rectangular planes. Trajectories are
closed-form (yaw about z plus translation) so every pose, velocity and
acceleration is exact, which makes the simulator usable as an oracle:
scans are produced by exact ray casting against the planes, and inertial
streams by evaluating the analytic derivatives, adding bias and noise,
then clipping to the sensor rails.

Scan timing models either a solid-state sensor (uniform random emission
times and directions within the field of view) or a spinning sensor
(evenly spaced times, azimuth swept in order).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .formats import SequenceManifest, write_frame_binary, write_imu_csv, write_kv_file, write_tum
from .frames import PointFrame
from .geometry import NavState, quat_rotate_batch
from .motion import GRAVITY, ImuWindow


# ---------------------------------------------------------------------------
# World geometry


@dataclass(frozen=True)
class Plane:
    """Bounded rectangle: anchor point, unit normal, in-plane axes."""

    normal: np.ndarray
    anchor: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half_u: float
    half_v: float


@dataclass
class World:
    name: str
    planes: List[Plane]


def _plane(normal, anchor, u, v, half_u, half_v) -> Plane:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    return Plane(
        normal=n,
        anchor=np.asarray(anchor, dtype=float),
        u=np.asarray(u, dtype=float),
        v=np.asarray(v, dtype=float),
        half_u=float(half_u),
        half_v=float(half_v),
    )


def wall_x(x, y0, y1, z0, z1) -> Plane:
    """Vertical rectangle perpendicular to the x axis."""
    return _plane(
        (1, 0, 0),
        (x, 0.5 * (y0 + y1), 0.5 * (z0 + z1)),
        (0, 1, 0),
        (0, 0, 1),
        0.5 * (y1 - y0),
        0.5 * (z1 - z0),
    )


def wall_y(y, x0, x1, z0, z1) -> Plane:
    """Vertical rectangle perpendicular to the y axis."""
    return _plane(
        (0, 1, 0),
        (0.5 * (x0 + x1), y, 0.5 * (z0 + z1)),
        (1, 0, 0),
        (0, 0, 1),
        0.5 * (x1 - x0),
        0.5 * (z1 - z0),
    )


def slab_z(z, x0, x1, y0, y1) -> Plane:
    """Horizontal rectangle (floor or ceiling) at height z."""
    return _plane(
        (0, 0, 1),
        (0.5 * (x0 + x1), 0.5 * (y0 + y1), z),
        (1, 0, 0),
        (0, 1, 0),
        0.5 * (x1 - x0),
        0.5 * (y1 - y0),
    )


def box_room(x0, x1, y0, y1, z0, z1, skip: Sequence[str] = ()) -> List[Plane]:
    """Six-face interior box; faces named x-/x+/y-/y+/z-/z+ can be omitted."""
    faces = {
        "x-": wall_x(x0, y0, y1, z0, z1),
        "x+": wall_x(x1, y0, y1, z0, z1),
        "y-": wall_y(y0, x0, x1, z0, z1),
        "y+": wall_y(y1, x0, x1, z0, z1),
        "z-": slab_z(z0, x0, x1, y0, y1),
        "z+": slab_z(z1, x0, x1, y0, y1),
    }
    return [p for name, p in faces.items() if name not in skip]


def corridor_world(length: float = 60.0, half_width: float = 1.0, height: float = 2.5) -> World:
    """Featureless straight corridor along x, centered on the origin."""
    h = 0.5 * length
    return World("corridor", box_room(-h, h, -half_width, half_width, 0.0, height))


def raycast(
    planes: Sequence[Plane],
    origins: np.ndarray,
    dirs: np.ndarray,
    min_range: float = 0.05,
    max_range: float = 120.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest-hit ranges for a batch of rays.

    origins and dirs are (N, 3); dirs need not be normalized but the
    returned range is measured in units of the given direction length.
    Returns (ranges, hit_mask); misses hold +inf.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n_rays = dirs.shape[0]
    if origins.shape[0] == 1 and n_rays > 1:
        origins = np.broadcast_to(origins, dirs.shape)
    best = np.full(n_rays, np.inf)
    for pl in planes:
        denom = dirs @ pl.normal
        num = (pl.anchor - origins) @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        cand = (np.abs(denom) > 1e-12) & np.isfinite(t) & (t > min_range) & (t < best)
        if not cand.any():
            continue
        q = origins[cand] + t[cand, None] * dirs[cand] - pl.anchor
        inside = (np.abs(q @ pl.u) <= pl.half_u + 1e-12) & (np.abs(q @ pl.v) <= pl.half_v + 1e-12)
        idx = np.flatnonzero(cand)[inside]
        best[idx] = t[cand][inside]
    return best, best <= max_range


# ---------------------------------------------------------------------------
# Trajectories (yaw-only attitude, closed-form derivatives)


class Trajectory:
    """Analytic rigid trajectory with yaw-only attitude.

    Subclasses implement _eval(ts) returning vectorized
    (psi, dpsi, pos, vel, acc) arrays; everything else derives from it.
    """

    duration: float = 0.0

    def _eval(self, ts: np.ndarray):
        raise NotImplementedError

    def poses_batch(self, ts) -> Tuple[np.ndarray, np.ndarray]:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        psi, _, pos, _, _ = self._eval(ts)
        q = np.zeros((ts.shape[0], 4))
        q[:, 0] = np.cos(0.5 * psi)
        q[:, 3] = np.sin(0.5 * psi)
        return q, pos

    def pose(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        q, p = self.poses_batch(np.array([t]))
        return q[0], p[0]

    def velocity(self, t: float) -> np.ndarray:
        _, _, _, vel, _ = self._eval(np.array([float(t)]))
        return vel[0]

    def accel_world(self, t: float) -> np.ndarray:
        _, _, _, _, acc = self._eval(np.array([float(t)]))
        return acc[0]

    def omega_body(self, t: float) -> np.ndarray:
        _, dpsi, _, _, _ = self._eval(np.array([float(t)]))
        return np.array([0.0, 0.0, dpsi[0]])

    def state(self, t: float) -> NavState:
        q, p = self.pose(t)
        return NavState(q=q, p=p, v=self.velocity(t))


class StaticTrajectory(Trajectory):
    def __init__(self, position, psi: float = 0.0, duration: float = 1.0):
        self.p0 = np.asarray(position, dtype=float)
        self.psi0 = float(psi)
        self.duration = float(duration)

    def _eval(self, ts):
        n = ts.shape[0]
        zeros3 = np.zeros((n, 3))
        return (
            np.full(n, self.psi0),
            np.zeros(n),
            np.broadcast_to(self.p0, (n, 3)).copy(),
            zeros3,
            zeros3.copy(),
        )


class LineTrajectory(Trajectory):
    """Constant world velocity, fixed heading."""

    def __init__(self, position, velocity, psi: float = 0.0, duration: float = 1.0):
        self.p0 = np.asarray(position, dtype=float)
        self.v0 = np.asarray(velocity, dtype=float)
        self.psi0 = float(psi)
        self.duration = float(duration)

    def _eval(self, ts):
        n = ts.shape[0]
        pos = self.p0[None, :] + ts[:, None] * self.v0[None, :]
        return (
            np.full(n, self.psi0),
            np.zeros(n),
            pos,
            np.broadcast_to(self.v0, (n, 3)).copy(),
            np.zeros((n, 3)),
        )


class SinusoidTrajectory(Trajectory):
    """Smooth wander: independent sinusoids per axis plus a yaw sway."""

    def __init__(self, center, amp, freq, phase=(0.0, 0.0, 0.0),
                 yaw_amp: float = 0.0, yaw_freq: float = 0.1,
                 yaw_phase: float = 0.0, duration: float = 60.0):
        self.center = np.asarray(center, dtype=float)
        self.amp = np.asarray(amp, dtype=float)
        self.omega = 2.0 * np.pi * np.asarray(freq, dtype=float)
        self.phase = np.asarray(phase, dtype=float)
        self.yaw_amp = float(yaw_amp)
        self.yaw_omega = 2.0 * np.pi * float(yaw_freq)
        self.yaw_phase = float(yaw_phase)
        self.duration = float(duration)

    def _eval(self, ts):
        arg = ts[:, None] * self.omega[None, :] + self.phase[None, :]
        pos = self.center[None, :] + self.amp[None, :] * np.sin(arg)
        vel = self.amp[None, :] * self.omega[None, :] * np.cos(arg)
        acc = -self.amp[None, :] * self.omega[None, :] ** 2 * np.sin(arg)
        yarg = self.yaw_omega * ts + self.yaw_phase
        psi = self.yaw_amp * np.sin(yarg)
        dpsi = self.yaw_amp * self.yaw_omega * np.cos(yarg)
        return psi, dpsi, pos, vel, acc


class OutAndBackTrajectory(Trajectory):
    """Cosine push-out along a fixed direction returning to the start."""

    def __init__(self, position, direction, amplitude: float, period: float):
        self.p0 = np.asarray(position, dtype=float)
        d = np.asarray(direction, dtype=float)
        self.dir = d / np.linalg.norm(d)
        self.amp = float(amplitude)
        self.om = 2.0 * np.pi / float(period)
        self.duration = float(period)

    def _eval(self, ts):
        n = ts.shape[0]
        s = 0.5 * self.amp * (1.0 - np.cos(self.om * ts))
        ds = 0.5 * self.amp * self.om * np.sin(self.om * ts)
        dds = 0.5 * self.amp * self.om**2 * np.cos(self.om * ts)
        return (
            np.zeros(n),
            np.zeros(n),
            self.p0[None, :] + s[:, None] * self.dir[None, :],
            ds[:, None] * self.dir[None, :],
            dds[:, None] * self.dir[None, :],
        )


@dataclass
class _Segment:
    t0: float
    t1: float

    def eval(self, tau: np.ndarray):
        raise NotImplementedError


@dataclass
class StraightSegment(_Segment):
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi: float = 0.0
    speed: float = 1.0

    def eval(self, tau):
        n = tau.shape[0]
        h = np.array([np.cos(self.psi), np.sin(self.psi), 0.0])
        pos = self.p0[None, :] + self.speed * tau[:, None] * h[None, :]
        vel = np.broadcast_to(self.speed * h, (n, 3)).copy()
        return np.full(n, self.psi), np.zeros(n), pos, vel, np.zeros((n, 3))


@dataclass
class RampSegment(_Segment):
    """Straight run whose speed changes linearly from v0 to v1."""

    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi: float = 0.0
    v0: float = 0.0
    v1: float = 1.0

    def eval(self, tau):
        n = tau.shape[0]
        a = (self.v1 - self.v0) / (self.t1 - self.t0)
        h = np.array([np.cos(self.psi), np.sin(self.psi), 0.0])
        s = self.v0 * tau + 0.5 * a * tau**2
        pos = self.p0[None, :] + s[:, None] * h[None, :]
        vel = (self.v0 + a * tau)[:, None] * h[None, :]
        acc = np.broadcast_to(a * h, (n, 3)).copy()
        return np.full(n, self.psi), np.zeros(n), pos, vel, acc


@dataclass
class ArcSegment(_Segment):
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi0: float = 0.0
    speed: float = 1.0
    omega: float = 1.0

    def eval(self, tau):
        psi = self.psi0 + self.omega * tau
        r = self.speed / self.omega
        pos = self.p0[None, :] + r * np.column_stack(
            [np.sin(psi) - np.sin(self.psi0), np.cos(self.psi0) - np.cos(psi), np.zeros_like(psi)]
        )
        vel = self.speed * np.column_stack([np.cos(psi), np.sin(psi), np.zeros_like(psi)])
        acc = self.speed * self.omega * np.column_stack(
            [-np.sin(psi), np.cos(psi), np.zeros_like(psi)]
        )
        return psi, np.full(tau.shape[0], self.omega), pos, vel, acc


@dataclass
class SpinSegment(_Segment):
    """Stationary position, yaw rate ramping linearly from rate0 to rate1."""

    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi0: float = 0.0
    rate0: float = 0.0
    slope: float = 0.0

    def eval(self, tau):
        n = tau.shape[0]
        psi = self.psi0 + self.rate0 * tau + 0.5 * self.slope * tau**2
        dpsi = self.rate0 + self.slope * tau
        pos = np.broadcast_to(self.p0, (n, 3)).copy()
        return psi, dpsi, pos, np.zeros((n, 3)), np.zeros((n, 3))


class PiecewiseTrajectory(Trajectory):
    """Closed-form segments chained end to end."""

    def __init__(self, segments: List[_Segment]):
        if not segments:
            raise ValueError("need at least one segment")
        self.segments = segments
        self.breaks = np.array([s.t0 for s in segments] + [segments[-1].t1])
        self.duration = float(segments[-1].t1)

    def _eval(self, ts):
        n = ts.shape[0]
        psi = np.empty(n)
        dpsi = np.empty(n)
        pos = np.empty((n, 3))
        vel = np.empty((n, 3))
        acc = np.empty((n, 3))
        idx = np.clip(np.searchsorted(self.breaks, ts, side="right") - 1, 0, len(self.segments) - 1)
        for k, seg in enumerate(self.segments):
            sel = idx == k
            if not sel.any():
                continue
            out = seg.eval(ts[sel] - seg.t0)
            psi[sel], dpsi[sel], pos[sel], vel[sel], acc[sel] = out
        return psi, dpsi, pos, vel, acc


def course(start, psi: float, speed: float, plan: Sequence[Tuple]) -> PiecewiseTrajectory:
    """Planar driving course from a step plan.

    plan entries: ("straight", length), ("turn", angle, rate), or
    ("ramp", duration[, v_from]) which runs straight while the speed grows
    linearly from v_from (default 0) up to the cruise speed. Angles are in
    radians, positive left. Position and heading stay continuous.
    """
    p = np.asarray(start, dtype=float).copy()
    t = 0.0
    segs: List[_Segment] = []
    for step in plan:
        kind = step[0]
        if kind == "straight":
            length = float(step[1])
            dur = length / speed
            segs.append(StraightSegment(t, t + dur, p.copy(), psi, speed))
            p = p + length * np.array([np.cos(psi), np.sin(psi), 0.0])
        elif kind == "ramp":
            dur = float(step[1])
            v0 = float(step[2]) if len(step) > 2 else 0.0
            segs.append(RampSegment(t, t + dur, p.copy(), psi, v0, speed))
            length = 0.5 * (v0 + speed) * dur
            p = p + length * np.array([np.cos(psi), np.sin(psi), 0.0])
        elif kind == "turn":
            angle, rate = float(step[1]), float(step[2])
            om = np.sign(angle) * rate
            dur = abs(angle) / rate
            segs.append(ArcSegment(t, t + dur, p.copy(), psi, speed, om))
            r = speed / om
            psi1 = psi + angle
            p = p + r * np.array([np.sin(psi1) - np.sin(psi), np.cos(psi) - np.cos(psi1), 0.0])
            psi = psi1
        else:
            raise ValueError(f"unknown plan step {kind!r}")
        t += dur
    return PiecewiseTrajectory(segs)


class SwayTrajectory(Trajectory):
    """A base trajectory with windowed yaw oscillation superimposed.

    Models a carried sensor being swept side to side in bursts, e.g.
    glancing down side passages: each bump is (center, half_width, amp,
    freq_hz, phase) and contributes amp * w(t) * sin(2 pi f (t-c) + phase)
    to the yaw, where w is a cosine-squared envelope supported on
    [c - h, c + h]. Position, velocity, and acceleration pass through; the
    yaw rate picks up the exact analytic derivative of the sway.
    """

    def __init__(self, base: Trajectory, bumps: Sequence[Tuple[float, float, float, float, float]]):
        self.base = base
        self.bumps = [tuple(float(v) for v in b) for b in bumps]
        self.duration = base.duration

    def _eval(self, ts):
        psi, dpsi, pos, vel, acc = self.base._eval(ts)
        psi = psi.copy()
        dpsi = dpsi.copy()
        for c, h, amp, f, phase in self.bumps:
            m = np.abs(ts - c) < h
            if not m.any():
                continue
            u = np.pi * (ts[m] - c) / (2.0 * h)
            w = np.cos(u) ** 2
            dw = -(np.pi / (2.0 * h)) * np.sin(2.0 * u)
            om = 2.0 * np.pi * f
            arg = om * (ts[m] - c) + phase
            psi[m] += amp * w * np.sin(arg)
            dpsi[m] += amp * (dw * np.sin(arg) + w * om * np.cos(arg))
        return psi, dpsi, pos, vel, acc


class BobTrajectory(Trajectory):
    """A base trajectory with windowed position oscillation superimposed.

    Models the bounce or lurch of a hand-carried sensor along one world
    axis: each bob is (center, half_width, amp, freq_hz, phase) and adds
    amp * w(t) * sin(2 pi f (t-c) + phase) to coordinate `axis`, with the
    same cosine-squared envelope as SwayTrajectory. Velocity and
    acceleration carry the exact analytic derivatives so the synthesized
    IMU stays consistent with the sampled poses.
    """

    def __init__(self, base: Trajectory,
                 bobs: Sequence[Tuple[float, float, float, float, float]],
                 axis: int = 2):
        self.base = base
        self.bobs = [tuple(float(v) for v in b) for b in bobs]
        self.axis = int(axis)
        self.duration = base.duration

    def _eval(self, ts):
        psi, dpsi, pos, vel, acc = self.base._eval(ts)
        pos = pos.copy()
        vel = vel.copy()
        acc = acc.copy()
        k = self.axis
        for c, h, amp, f, phase in self.bobs:
            m = np.abs(ts - c) < h
            if not m.any():
                continue
            u = np.pi * (ts[m] - c) / (2.0 * h)
            w = np.cos(u) ** 2
            dw = -(np.pi / (2.0 * h)) * np.sin(2.0 * u)
            ddw = -(np.pi**2 / (2.0 * h**2)) * np.cos(2.0 * u)
            om = 2.0 * np.pi * f
            arg = om * (ts[m] - c) + phase
            s = np.sin(arg)
            ds = om * np.cos(arg)
            dds = -om**2 * s
            pos[m, k] += amp * w * s
            vel[m, k] += amp * (dw * s + w * ds)
            acc[m, k] += amp * (ddw * s + 2.0 * dw * ds + w * dds)
        return psi, dpsi, pos, vel, acc


def spin_profile(position, psi0: float, phases: Sequence[Tuple[float, float, float]]) -> PiecewiseTrajectory:
    """Stationary spin: phases of (duration, rate_start, rate_end)."""
    p = np.asarray(position, dtype=float)
    t = 0.0
    psi = float(psi0)
    segs: List[_Segment] = []
    for dur, r0, r1 in phases:
        slope = (r1 - r0) / dur
        segs.append(SpinSegment(t, t + dur, p, psi, r0, slope))
        psi += r0 * dur + 0.5 * slope * dur**2
        t += dur
    return PiecewiseTrajectory(segs)


# ---------------------------------------------------------------------------
# Sensors


@dataclass
class ScanSpec:
    """Per-frame sampling model of the range sensor."""

    points_per_frame: int = 2000
    pattern: str = "solid_state"
    az_fov: float = 2.0 * np.pi
    el_fov: float = 1.2
    el_center: float = 0.0
    beams: int = 16
    sigma_range: float = 0.0
    min_range: float = 0.05
    max_range: float = 120.0


def _scan_directions(spec: ScanSpec, duration: float, rng) -> Tuple[np.ndarray, np.ndarray]:
    """Emission times within the frame and unit directions in the body frame."""
    n = spec.points_per_frame
    if spec.pattern == "solid_state":
        times = np.sort(rng.uniform(0.0, duration, size=n))
        az = rng.uniform(-0.5 * spec.az_fov, 0.5 * spec.az_fov, size=n)
        el = spec.el_center + rng.uniform(-0.5 * spec.el_fov, 0.5 * spec.el_fov, size=n)
    elif spec.pattern == "spinning":
        times = (np.arange(n) + 0.5) * (duration / n)
        az = -0.5 * spec.az_fov + spec.az_fov * (np.arange(n) + 0.5) / n
        ladder = spec.el_center + np.linspace(-0.5 * spec.el_fov, 0.5 * spec.el_fov, spec.beams)
        el = np.tile(ladder, n // spec.beams + 1)[:n]
    else:
        raise ValueError(f"unknown scan pattern {spec.pattern!r}")
    ce = np.cos(el)
    dirs = np.column_stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)])
    return times, dirs


def sample_scan(world: World, traj: Trajectory, t0: float, t1: float,
                spec: ScanSpec, rng) -> PointFrame:
    """One distorted frame: each return is expressed in the sensor pose at
    its own emission time; dt holds the exact offset from frame begin."""
    times, dirs = _scan_directions(spec, t1 - t0, rng)
    q, p = traj.poses_batch(t0 + times)
    dirs_world = quat_rotate_batch(q, dirs)
    ranges, hit = raycast(world.planes, p, dirs_world, spec.min_range, spec.max_range)
    if spec.sigma_range > 0:
        ranges = ranges + rng.normal(scale=spec.sigma_range, size=ranges.shape)
    xyz = dirs[hit] * ranges[hit, None]
    return PointFrame(xyz=xyz, dt=times[hit], t_begin=float(t0), t_end=float(t1))


def synth_imu(traj: Trajectory, t0: float, t1: float, rate: float, rng=None,
              sigma_accel: float = 0.0, sigma_gyro: float = 0.0,
              bias_a=None, bias_g=None, a_max: Optional[float] = None,
              w_max: Optional[float] = None, g_world=GRAVITY) -> ImuWindow:
    """Inertial stream over [t0, t1]: specific force and body rates from the
    analytic trajectory, plus bias and noise, clipped at the sensor rails."""
    n = int(round((t1 - t0) * rate)) + 1
    t = t0 + np.arange(n) / rate
    psi, dpsi, _, _, acc = traj._eval(t)
    q, _ = traj.poses_batch(t)
    q_conj = np.column_stack([q[:, 0], -q[:, 1:4]])
    a_body = quat_rotate_batch(q_conj, acc - np.asarray(g_world, dtype=float)[None, :])
    w_body = np.column_stack([np.zeros_like(dpsi), np.zeros_like(dpsi), dpsi])
    if bias_a is not None:
        a_body = a_body + np.asarray(bias_a, dtype=float)[None, :]
    if bias_g is not None:
        w_body = w_body + np.asarray(bias_g, dtype=float)[None, :]
    if rng is not None and sigma_accel > 0:
        a_body = a_body + rng.normal(scale=sigma_accel, size=a_body.shape)
    if rng is not None and sigma_gyro > 0:
        w_body = w_body + rng.normal(scale=sigma_gyro, size=w_body.shape)
    if a_max is not None:
        a_body = np.clip(a_body, -a_max, a_max)
    if w_max is not None:
        w_body = np.clip(w_body, -w_max, w_max)
    return ImuWindow(t=t, a=a_body, w=w_body)


def export_ground_truth(traj: Trajectory, t0: float, t1: float, rate: float, path) -> None:
    """Reference poses sampled at the given rate, in TUM row format."""
    n = int(round((t1 - t0) * rate)) + 1
    t = t0 + np.arange(n) / rate
    q, p = traj.poses_batch(t)
    write_tum(path, t, p, q)


# ---------------------------------------------------------------------------
# Scenarios


@dataclass
class Scenario:
    """A full synthetic dataset recipe."""

    name: str
    world: World
    trajectory: Trajectory
    scan: ScanSpec
    duration: float
    lidar_rate: float = 10.0
    imu_rate: float = 200.0
    sigma_accel: float = 0.02
    sigma_gyro: float = 0.002
    bias_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a_max: float = 29.5
    w_max: float = 17.5
    clip_imu: bool = True
    loop: bool = False


def scenario_room_gentle() -> Scenario:
    world = World("room_gentle", box_room(-4, 4, -3, 3, 0, 3))
    traj = SinusoidTrajectory(
        center=(0.0, 0.0, 1.4),
        amp=(1.2, 0.9, 0.25),
        freq=(0.12, 0.09, 0.15),
        phase=(np.pi / 2, np.pi / 2, np.pi / 2),
        yaw_amp=0.5,
        yaw_freq=0.07,
        yaw_phase=np.pi / 2,
        duration=60.0,
    )
    scan = ScanSpec(points_per_frame=5000, el_fov=2.4, sigma_range=0.01)
    return Scenario(
        name="room_gentle",
        world=world,
        trajectory=traj,
        scan=scan,
        duration=60.0,
        bias_a=np.array([0.04, -0.025, 0.03]),
        bias_g=np.array([0.002, -0.0015, 0.001]),
    )


def scenario_corridor_junctions() -> Scenario:
    z0, z1 = 0.0, 2.5
    planes = [
        wall_y(1.0, -8.0, 3.0, z0, z1), wall_y(1.0, 5.0, 9.0, z0, z1),
        wall_y(1.0, 11.0, 27.0, z0, z1), wall_y(1.0, 29.0, 38.0, z0, z1),
        wall_y(-1.0, -8.0, 3.0, z0, z1), wall_y(-1.0, 5.0, 9.0, z0, z1),
        wall_y(-1.0, 11.0, 27.0, z0, z1), wall_y(-1.0, 29.0, 38.0, z0, z1),
        wall_x(-8.0, -1.0, 1.0, z0, z1), wall_x(38.0, -1.0, 1.0, z0, z1),
        slab_z(z0, -8.0, 38.0, -14.0, 14.0), slab_z(z1, -8.0, 38.0, -14.0, 14.0),
    ]
    # the cross aisle at x=4 doubles as the spawn bay: the carrier accelerates
    # from rest inside rich geometry, so every axis is scan-constrained while
    # the bias estimates settle
    for xj in (4.0, 10.0, 28.0):
        for side in (1.0, -1.0):
            planes.append(wall_x(xj - 1.0, side * 1.0, side * 14.0, z0, z1))
            planes.append(wall_x(xj + 1.0, side * 1.0, side * 14.0, z0, z1))
            planes.append(wall_y(side * 14.0, xj - 1.0, xj + 1.0, z0, z1))
    world = World("corridor_junctions", planes)
    speed = 1.5
    path = course(
        (2.0, 0.0, 1.2),
        0.0,
        speed,
        [("ramp", 3.0), ("straight", 22.75),
         ("turn", np.pi / 2, speed / 0.9), ("straight", 4.0)],
    )
    # the carrier sweeps the sensor while passing the junctions (centers
    # found from the course timing: x=10 at t~6.83, the turn at t~18.6)
    traj = SwayTrajectory(
        path,
        bumps=[(6.83, 0.7, 0.45, 2.2, 0.0), (18.64, 0.7, 0.45, 2.2, 0.0)],
    )
    scan = ScanSpec(points_per_frame=1500, el_fov=1.0, sigma_range=0.008)
    return Scenario(
        name="corridor_junctions",
        world=world,
        trajectory=traj,
        scan=scan,
        duration=traj.duration,
        bias_a=np.array([0.03, -0.02, 0.025]),
        bias_g=np.array([0.0015, -0.001, 0.002]),
    )


def scenario_saturation_spin() -> Scenario:
    world = World("saturation_spin", box_room(-5, 5, -5, 5, 0, 3))
    traj = spin_profile(
        (0.0, 0.0, 1.5),
        0.0,
        [
            (2.0, 0.0, 0.3),
            (3.0, 0.3, 20.0),
            (3.0, 20.0, 20.0),
            (3.0, 20.0, 0.3),
            (3.0, 0.3, 0.3),
        ],
    )
    scan = ScanSpec(points_per_frame=2000, el_fov=1.2, sigma_range=0.008)
    return Scenario(
        name="saturation_spin",
        world=world,
        trajectory=traj,
        scan=scan,
        duration=traj.duration,
        bias_a=np.array([0.03, -0.02, 0.02]),
        bias_g=np.array([0.001, -0.001, 0.0015]),
    )


def scenario_indoor_outdoor() -> Scenario:
    planes = [slab_z(0.0, -10.0, 60.0, -30.0, 30.0)]
    planes += [
        wall_x(-6.0, -5.0, 5.0, 0.0, 3.0),
        wall_y(-5.0, -6.0, 4.0, 0.0, 3.0),
        wall_y(5.0, -6.0, 4.0, 0.0, 3.0),
        wall_x(4.0, -5.0, -1.5, 0.0, 3.0),
        wall_x(4.0, 1.5, 5.0, 0.0, 3.0),
        slab_z(3.0, -6.0, 4.0, -5.0, 5.0),
    ]
    planes += [
        wall_x(55.0, -20.0, 20.0, 0.0, 10.0),
        wall_y(-22.0, 8.0, 55.0, 0.0, 8.0),
        wall_y(22.0, 8.0, 55.0, 0.0, 8.0),
        wall_x(25.0, 6.0, 10.0, 0.0, 6.0),
        wall_x(35.0, -10.0, -6.0, 0.0, 6.0),
    ]
    world = World("indoor_outdoor", planes)
    traj = OutAndBackTrajectory((0.0, 0.0, 1.4), (1.0, 0.0, 0.0), amplitude=45.0, period=30.0)
    scan = ScanSpec(points_per_frame=2500, el_fov=0.7, sigma_range=0.01)
    return Scenario(
        name="indoor_outdoor",
        world=world,
        trajectory=traj,
        scan=scan,
        duration=30.0,
        bias_a=np.array([0.05, -0.04, 0.03]),
        bias_g=np.array([0.002, -0.0015, 0.001]),
        loop=True,
    )


SCENARIOS: Dict[str, Callable[[], Scenario]] = {
    "room_gentle": scenario_room_gentle,
    "corridor_junctions": scenario_corridor_junctions,
    "saturation_spin": scenario_saturation_spin,
    "indoor_outdoor": scenario_indoor_outdoor,
}


def get_scenario(name: str) -> Scenario:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; have {sorted(SCENARIOS)}")
    return SCENARIOS[name]()


def generate_frames(sc: Scenario, rng) -> List[PointFrame]:
    """All frames of the scenario, in order."""
    n_frames = int(np.floor(sc.duration * sc.lidar_rate + 1e-9))
    dt = 1.0 / sc.lidar_rate
    return [
        sample_scan(sc.world, sc.trajectory, k * dt, (k + 1) * dt, sc.scan, rng)
        for k in range(n_frames)
    ]


def generate_imu(sc: Scenario, rng) -> ImuWindow:
    return synth_imu(
        sc.trajectory,
        0.0,
        sc.duration,
        sc.imu_rate,
        rng=rng,
        sigma_accel=sc.sigma_accel,
        sigma_gyro=sc.sigma_gyro,
        bias_a=sc.bias_a,
        bias_g=sc.bias_g,
        a_max=sc.a_max if sc.clip_imu else None,
        w_max=sc.w_max if sc.clip_imu else None,
    )


def generate_scenario(sc: Scenario, out_dir, seed: int = 0, gt_rate: float = 100.0) -> str:
    """Write a full dataset (frames, IMU, truth, manifest); returns the
    manifest path."""
    rng = np.random.default_rng(seed)
    out_dir = str(out_dir)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    for k, frame in enumerate(generate_frames(sc, rng)):
        write_frame_binary(os.path.join(frames_dir, f"frame_{k:05d}.bin"), frame)
    write_imu_csv(os.path.join(out_dir, "imu.csv"), generate_imu(sc, rng))
    export_ground_truth(sc.trajectory, 0.0, sc.duration, gt_rate, os.path.join(out_dir, "gt.tum"))
    manifest_path = os.path.join(out_dir, "manifest.cfg")
    write_kv_file(
        manifest_path,
        {
            "scenario": sc.name,
            "seed": str(seed),
            "frames_dir": "frames",
            "imu": "imu.csv",
            "ground_truth": "gt.tum",
            "lidar_rate": repr(float(sc.lidar_rate)),
            "imu_rate": repr(float(sc.imu_rate)),
            "imu_a_max": repr(float(sc.a_max)),
            "imu_w_max": repr(float(sc.w_max)),
            "loop": "true" if sc.loop else "false",
        },
    )
    return manifest_path


def variant(sc: Scenario, **overrides) -> Scenario:
    """Scenario copy with some fields replaced (noise, clipping, scan...)."""
    return replace(sc, **overrides)
