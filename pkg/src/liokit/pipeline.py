"""Per-frame odometry loop tying the solver, map, filter, and mode machine.

The sequence context owns the voxel map, the error-state filter, the
modality machine, and the chain of optimized pose pairs. Each incoming
frame runs through the same stations: decide the sub-frame count from
the previous solve's observability, predict a prior per sub-frame
(IMU propagation in LIO mode, constant-motion replay in LO mode),
register against the map, feed the optimized end pose back into the
filter when the IMU window is trustworthy, advance the mode machine,
and insert the motion-compensated full cloud.
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InsufficientResidualsError,
    SolverDivergedError,
)
from .frames import PointFrame, compute_alphas
from .geometry import (
    NavState,
    quat_conj,
    quat_mul,
    so3_exp,
    so3_log,
)
from .motion import (
    LIO,
    LO,
    ImuLimits,
    ImuWindow,
    ModeState,
    NoiseConfig,
    bias_converged,
    detect_fault,
    eskf_update,
    initial_covariance,
    lo_predict_end,
    mode_step,
    propagate_imu,
    scan_pose_covariance,
    window_saturated,
)
from .observability import ObservabilityReport, SegmentationConfig, assess, split_frame
from .registration import PosePair, SolverConfig, deskew_batch, solve
from .voxel_map import (
    DEFAULT_D_FAR,
    DEFAULT_D_NEAR,
    DEFAULT_RADIUS_SCALE,
    MultiResMap,
    ResolutionLadder,
)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    """Every tunable of the engine, serializable as flat dotted key/values."""

    # map
    resolutions: Tuple[float, ...] = (0.2, 0.5, 1.2)
    capacity: int = 20
    radius_scale: float = DEFAULT_RADIUS_SCALE
    d_near: float = DEFAULT_D_NEAR
    d_far: float = DEFAULT_D_FAR
    multires: bool = True
    fixed_resolution: float = 0.5  # ladder used when multires is off
    # sub-systems
    solver: SolverConfig = field(default_factory=SolverConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    limits: ImuLimits = field(default_factory=ImuLimits)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    # mode machine
    mode_window: int = 5
    eps_ba: float = 0.02
    eps_bg: float = 0.002
    gap_factor: float = 3.0
    # orchestration
    force_mode: str = ""  # "", "lio", or "lo"
    max_consecutive_failures: int = 5

    def build_map(self) -> MultiResMap:
        res = tuple(self.resolutions) if self.multires else (self.fixed_resolution,)
        ladder = ResolutionLadder(
            resolutions=res,
            capacities=tuple(self.capacity for _ in res),
            radii=tuple(self.radius_scale * r for r in res),
        )
        return MultiResMap(ladder, d_near=self.d_near, d_far=self.d_far)

    def build_mode(self) -> ModeState:
        start = LO if self.force_mode == LO else LIO
        return ModeState(
            mode=start,
            window=self.mode_window,
            eps_ba=self.eps_ba,
            eps_bg=self.eps_bg,
        )


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> Tuple[float, ...]:
    vals = tuple(float(x) for x in s.split(",") if x.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# config key -> (sub-object attribute or None for top level, field, parser)
_CONFIG_SCHEMA = {
    "map.resolutions": (None, "resolutions", _parse_floats),
    "map.capacity": (None, "capacity", int),
    "map.radius_scale": (None, "radius_scale", float),
    "map.d_near": (None, "d_near", float),
    "map.d_far": (None, "d_far", float),
    "map.multires": (None, "multires", _parse_bool),
    "map.fixed_resolution": (None, "fixed_resolution", float),
    "solver.max_iters": ("solver", "max_iters", int),
    "solver.tol": ("solver", "tol", float),
    "solver.cost_rel_tol": ("solver", "cost_rel_tol", float),
    "solver.huber_scale": ("solver", "huber_scale", float),
    "solver.beta_c": ("solver", "beta_c", float),
    "solver.beta_v": ("solver", "beta_v", float),
    "solver.knn": ("solver", "knn", int),
    "solver.min_planarity": ("solver", "min_planarity", float),
    "solver.min_residuals": ("solver", "min_residuals", int),
    "solver.keypoint_cell": ("solver", "keypoint_cell", float),
    "solver.damping_factor": ("solver", "damping_factor", float),
    "solver.damping_retries": ("solver", "damping_retries", int),
    "segmentation.enabled": ("segmentation", "enabled", _parse_bool),
    "segmentation.eps_rot": ("segmentation", "eps_rot", float),
    "segmentation.eps_pos": ("segmentation", "eps_pos", float),
    "segmentation.d_min": ("segmentation", "d_min", int),
    "segmentation.d_max": ("segmentation", "d_max", int),
    "segmentation.disjoint": ("segmentation", "disjoint", _parse_bool),
    "imu.a_max": ("limits", "a_max", float),
    "imu.w_max": ("limits", "w_max", float),
    "imu.eta": ("limits", "eta", float),
    "imu.gap_factor": (None, "gap_factor", float),
    "noise.sigma_gyro": ("noise", "sigma_gyro", float),
    "noise.sigma_accel": ("noise", "sigma_accel", float),
    "noise.sigma_bg_walk": ("noise", "sigma_bg_walk", float),
    "noise.sigma_ba_walk": ("noise", "sigma_ba_walk", float),
    "noise.obs_sigma_rot": ("noise", "obs_sigma_rot", float),
    "noise.obs_sigma_pos": ("noise", "obs_sigma_pos", float),
    "noise.scan_info_sigma": ("noise", "scan_info_sigma", float),
    "noise.scan_cov_cap": ("noise", "scan_cov_cap", float),
    "mode.window": (None, "mode_window", int),
    "mode.eps_ba": (None, "eps_ba", float),
    "mode.eps_bg": (None, "eps_bg", float),
    "pipeline.force_mode": (None, "force_mode", str),
    "pipeline.max_consecutive_failures": (None, "max_consecutive_failures", int),
}


def config_from_kv(kv: Dict[str, str]) -> PipelineConfig:
    """Build a config from flat dotted keys; unknown keys are an error."""
    top: Dict[str, object] = {}
    subs: Dict[str, Dict[str, object]] = {
        "solver": {},
        "segmentation": {},
        "limits": {},
        "noise": {},
    }
    for key, raw in kv.items():
        if key not in _CONFIG_SCHEMA:
            raise ValueError(f"unknown config key {key!r}")
        sub, name, parser = _CONFIG_SCHEMA[key]
        try:
            value = parser(raw)
        except ValueError as e:
            raise ValueError(f"config key {key!r}: {e}") from e
        if sub is None:
            top[name] = value
        else:
            subs[sub][name] = value
    cfg = PipelineConfig(
        solver=SolverConfig(**subs["solver"]),
        segmentation=SegmentationConfig(**subs["segmentation"]),
        limits=ImuLimits(**subs["limits"]),
        noise=NoiseConfig(**subs["noise"]),
        **top,
    )
    if cfg.force_mode not in ("", LIO, LO):
        raise ValueError(f"pipeline.force_mode must be '', 'lio', or 'lo', got {cfg.force_mode!r}")
    return cfg


def config_to_kv(cfg: PipelineConfig) -> Dict[str, str]:
    """Flatten a config to the dotted key/value form, every key present."""
    out: Dict[str, str] = {}
    for key, (sub, name, _) in _CONFIG_SCHEMA.items():
        obj = cfg if sub is None else getattr(cfg, sub)
        out[key] = _fmt(getattr(obj, name))
    return out


# ---------------------------------------------------------------------------
# results


@dataclass
class FrameResult:
    """One solved (or coasted) sub-frame window."""

    frame_index: int
    sub_index: int
    n_sub: int
    t_begin: float
    t_end: float
    pose: PosePair
    mode: str
    d: int  # window count chosen for the parent frame
    obs: Optional[ObservabilityReport]
    ms: float
    n_residuals: int
    iterations: int
    cost: float
    ok: bool


@dataclass
class ModeEvent:
    frame_index: int
    t: float
    prev: str
    new: str


def update_map(vmap: MultiResMap, frame: PointFrame, pose: PosePair) -> None:
    """Deskew the full cloud with the optimized pair and insert it."""
    world = deskew_batch(pose, frame.xyz, compute_alphas(frame))
    vmap.insert_batch(world, np.linalg.norm(frame.xyz, axis=1))


# ---------------------------------------------------------------------------
# pipeline


class Pipeline:
    """Sequential odometry over one stream of frames.

    The world frame coincides with the first body frame: frame 0 seeds
    the map as-is under the identity pose and is never solved. The IMU
    stream, when present, must cover the frame times; without one the
    engine must be forced into LO mode and runs LiDAR-only.
    """

    _FAILURE_KINDS = (
        InsufficientResidualsError,
        SolverDivergedError,
        DegenerateGeometryError,
    )

    def __init__(
        self,
        cfg: PipelineConfig,
        imu: Optional[ImuWindow] = None,
        imu_rate: float = 200.0,
    ):
        if imu is None and cfg.force_mode != LO:
            raise ValueError("an IMU stream is required unless force_mode is 'lo'")
        self.cfg = cfg
        self.imu = imu
        self.imu_period = 1.0 / float(imu_rate)
        self.vmap = cfg.build_map()
        self.mode = cfg.build_mode()
        self.x = NavState.identity()
        self.P = initial_covariance()
        self.results: List[FrameResult] = []
        self.mode_events: List[ModeEvent] = []
        self.frame_ms: List[float] = []
        self.n_frames = 0
        self.n_failed = 0
        # (t_begin, t_end, optimized pair) of the most recent window
        self._prev_window: Optional[Tuple[float, float, PosePair]] = None
        self._pending_d = 1
        self._fail_streak = 0

    # -- chaining helpers ---------------------------------------------------

    def _chain_state(self, t: float) -> NavState:
        """State at time t interpolated along the last optimized window."""
        t_pb, t_pe, pair = self._prev_window
        dur = t_pe - t_pb
        if dur <= 0:
            return NavState(pair.q_e.copy(), pair.p_e.copy(), np.zeros(3),
                            self.x.bg.copy(), self.x.ba.copy())
        alpha = min(max((t - t_pb) / dur, 0.0), 1.0)
        q, p = pair.interpolate(alpha)
        v = (pair.p_e - pair.p_b) / dur
        return NavState(q, p, v, self.x.bg.copy(), self.x.ba.copy())

    def _imu_slice(self, t0: float, t1: float) -> ImuWindow:
        pad = 1e-9
        return self.imu.slice(t0 - pad, t1 + pad)

    def _lio_prior(self, begin: NavState, t0: float, t1: float,
                   v0: Optional[np.ndarray] = None) -> PosePair:
        win = self._imu_slice(t0, t1)
        v_init = self.x.v if v0 is None else v0
        x0 = NavState(begin.q.copy(), begin.p.copy(), v_init.copy(),
                      self.x.bg.copy(), self.x.ba.copy())
        x1, _ = propagate_imu(x0, self.P, win, noise=self.cfg.noise)
        return PosePair(begin.q.copy(), begin.p.copy(), x1.q.copy(), x1.p.copy())

    def _lo_prior(self, begin: NavState, t0: float, t1: float) -> PosePair:
        t_pb, t_pe, pair = self._prev_window
        prev_dur = t_pe - t_pb
        if prev_dur <= 0:
            return PosePair(begin.q.copy(), begin.p.copy(), begin.q.copy(), begin.p.copy())
        f = (t1 - t0) / prev_dur
        # previous window's motion rescaled to this window's duration
        delta = so3_log(quat_mul(quat_conj(pair.q_b), pair.q_e))
        q_part = quat_mul(pair.q_b, so3_exp(f * delta))
        p_part = pair.p_b + f * (pair.p_e - pair.p_b)
        scaled = PosePair(pair.q_b.copy(), pair.p_b.copy(), q_part, p_part)
        q_e, p_e = lo_predict_end(scaled, (begin.q, begin.p))
        return PosePair(begin.q.copy(), begin.p.copy(), q_e, p_e)

    def _window_prior(self, begin: NavState, t0: float, t1: float,
                      v0: Optional[np.ndarray] = None) -> PosePair:
        if self.mode.mode == LIO and self.imu is not None:
            return self._lio_prior(begin, t0, t1, v0=v0)
        return self._lo_prior(begin, t0, t1)

    # -- frame processing ---------------------------------------------------

    def process_frame(self, frame: PointFrame) -> List[FrameResult]:
        t_wall = time.perf_counter()
        idx = self.n_frames
        self.n_frames += 1

        if self._prev_window is None:
            out = self._bootstrap(frame, idx)
        else:
            try:
                out = self._run_frame(frame, idx)
                self._fail_streak = 0
            except self._FAILURE_KINDS as err:
                out = self._coast_frame(frame, idx, err)
        self.results.extend(out)
        self.frame_ms.append((time.perf_counter() - t_wall) * 1e3)
        return out

    def _bootstrap(self, frame: PointFrame, idx: int) -> List[FrameResult]:
        pair = PosePair.identity()
        self.vmap.insert_batch(frame.xyz, np.linalg.norm(frame.xyz, axis=1))
        self._prev_window = (frame.t_begin, frame.t_end, pair)
        self._pending_d = 1
        return [
            FrameResult(
                frame_index=idx,
                sub_index=0,
                n_sub=1,
                t_begin=frame.t_begin,
                t_end=frame.t_end,
                pose=pair,
                mode=self.mode.mode,
                d=1,
                obs=None,
                ms=0.0,
                n_residuals=0,
                iterations=0,
                cost=0.0,
                ok=True,
            )
        ]

    def _run_frame(self, frame: PointFrame, idx: int) -> List[FrameResult]:
        d_req = self._pending_d
        if d_req > 1:
            windows = split_frame(frame, d_req, disjoint=self.cfg.segmentation.disjoint)
        else:
            windows = [frame]
        d_eff = len(windows)

        out: List[FrameResult] = []
        use_imu = self.mode.mode == LIO and self.imu is not None
        v_begin = self.x.v.copy()
        for s, win in enumerate(windows):
            t_sub = time.perf_counter()
            begin = self._chain_state(win.t_begin)
            if use_imu and s > 0:
                # the filter velocity is stamped at the frame begin; advance
                # it to this window's begin or an accelerating platform will
                # see a short prior and the consistency rows will lock it in
                prev = out[-1]
                xa = NavState(prev.pose.q_b.copy(), prev.pose.p_b.copy(),
                              v_begin, self.x.bg.copy(), self.x.ba.copy())
                adv = self._imu_slice(prev.t_begin, win.t_begin)
                v_begin = propagate_imu(xa, self.P, adv, noise=self.cfg.noise)[0].v
            prior = self._window_prior(begin, win.t_begin, win.t_end, v0=v_begin)
            # the elastic rows anchor the begin pose to the optimized chain
            # but the velocity to the prediction's mean rate: anchoring it
            # to the previous frame's rate instead would fight any real
            # acceleration and integrate into drift through the map
            v_prior = (prior.p_e - prior.p_b) / win.duration
            anchor = NavState(begin.q, begin.p, v_prior, begin.bg, begin.ba)
            report = solve(win, self.vmap, self.cfg.solver, prior, prev_end=anchor)
            obs = assess(report.A, self.cfg.segmentation)
            out.append(
                FrameResult(
                    frame_index=idx,
                    sub_index=s,
                    n_sub=d_eff,
                    t_begin=win.t_begin,
                    t_end=win.t_end,
                    pose=report.pose,
                    mode=self.mode.mode,
                    d=d_eff,
                    obs=obs,
                    ms=(time.perf_counter() - t_sub) * 1e3,
                    n_residuals=report.n_residuals,
                    iterations=report.iterations,
                    cost=report.cost,
                    ok=True,
                )
            )
            self._prev_window = (win.t_begin, win.t_end, report.pose)

        self._insert_frame(frame, windows, [r.pose for r in out])
        self._finish_frame(frame, idx, solved_end=out[-1].pose, failed=False,
                           A_end=report.A)
        # next frame follows the most conservative verdict across this
        # frame's windows: when the scene is thinning out mid-frame, the
        # window that saw it first wins, and the chain drops to low d one
        # frame sooner instead of carrying short windows into the weak zone
        self._pending_d = min(r.obs.d for r in out)
        return out

    def _coast_frame(self, frame: PointFrame, idx: int, err: Exception) -> List[FrameResult]:
        self._fail_streak += 1
        self.n_failed += 1
        if self._fail_streak >= self.cfg.max_consecutive_failures:
            raise SolverDivergedError(
                f"{self._fail_streak} consecutive frame failures "
                f"(last: frame {idx}: {err})"
            ) from err
        begin = self._chain_state(frame.t_begin)
        pair = self._window_prior(begin, frame.t_begin, frame.t_end)
        self._prev_window = (frame.t_begin, frame.t_end, pair)
        self._finish_frame(frame, idx, solved_end=pair, failed=True)
        self._pending_d = self.cfg.segmentation.d_min
        return [
            FrameResult(
                frame_index=idx,
                sub_index=0,
                n_sub=1,
                t_begin=frame.t_begin,
                t_end=frame.t_end,
                pose=pair,
                mode=self.mode.mode,
                d=1,
                obs=None,
                ms=0.0,
                n_residuals=0,
                iterations=0,
                cost=float("nan"),
                ok=False,
            )
        ]

    # -- filter and mode upkeep --------------------------------------------

    def _finish_frame(self, frame: PointFrame, idx: int,
                      solved_end: PosePair, failed: bool,
                      A_end: Optional[np.ndarray] = None) -> None:
        if self.cfg.force_mode == LO or self.imu is None:
            self._reanchor(solved_end)
            return

        win = self._imu_slice(frame.t_begin, frame.t_end)
        sat = window_saturated(win, self.cfg.limits)
        fault = detect_fault(win, self.imu_period, self.cfg.gap_factor) or win.n < 2
        forced_lio = self.cfg.force_mode == LIO
        healthy = not failed and (forced_lio or (not sat and not fault))

        if healthy:
            # predict from the filter's own posterior, never from the solved
            # chain: re-basing the prediction on scan output would make the
            # measurement confirm itself and the innovation would go blind
            # to velocity and bias error
            x_pred, P_pred = propagate_imu(self.x, self.P, win, noise=self.cfg.noise)
            # the pose measurement is only as good as the scan that produced
            # it: widen R along whatever the solve could not see (from its
            # own information matrix) so a degenerate axis does not feed the
            # prior back to the filter as if it were evidence
            R = self.cfg.noise.observation_noise()
            if A_end is not None:
                R_scan = scan_pose_covariance(
                    A_end, self.cfg.noise.scan_info_sigma,
                    self.cfg.noise.scan_cov_cap,
                )
                if np.all(np.isfinite(R_scan)):
                    R = R + R_scan
            x_post, P_post, accepted = eskf_update(
                x_pred, P_pred,
                (solved_end.q_e, solved_end.p_e),
                R,
            )
            if accepted:
                self.x, self.P = x_post, P_post
                self.mode.record_bias(self.x.ba, self.x.bg)
            else:
                self._reanchor(solved_end)
        else:
            self._reanchor(solved_end)
            if not forced_lio:
                self.mode.history.clear()

        if forced_lio:
            return
        converged = bias_converged(self.mode)
        new_mode = mode_step(self.mode, sat, fault, converged)
        if new_mode.mode != self.mode.mode:
            self.mode_events.append(
                ModeEvent(idx, frame.t_end, self.mode.mode, new_mode.mode)
            )
        self.mode = new_mode

    def _reanchor(self, solved_end: PosePair) -> None:
        """Reset the nominal state onto the optimized chain, keeping biases."""
        t_pb, t_pe, _ = self._prev_window
        dur = t_pe - t_pb
        v = ((solved_end.p_e - solved_end.p_b) / dur) if dur > 0 else np.zeros(3)
        self.x = NavState(solved_end.q_e.copy(), solved_end.p_e.copy(), v,
                          self.x.bg.copy(), self.x.ba.copy())

    # -- map insertion ------------------------------------------------------

    def _insert_frame(self, frame: PointFrame, windows: List[PointFrame],
                      poses: List[PosePair]) -> None:
        if len(windows) == 1:
            update_map(self.vmap, frame, poses[0])
            return
        # Overlapping windows share points; each original point is deskewed
        # exactly once, by the window that starts at its stride.
        t_abs = frame.t_begin + frame.dt
        starts = np.array([w.t_begin for w in windows])
        owner = np.clip(np.searchsorted(starts, t_abs, side="right") - 1, 0, len(windows) - 1)
        ranges = np.linalg.norm(frame.xyz, axis=1)
        for s, (win, pose) in enumerate(zip(windows, poses)):
            mask = owner == s
            if not mask.any():
                continue
            span = win.t_end - win.t_begin
            alphas = np.clip((t_abs[mask] - win.t_begin) / span, 0.0, 1.0)
            world = deskew_batch(pose, frame.xyz[mask], alphas)
            self.vmap.insert_batch(world, ranges[mask])

    # -- outputs ------------------------------------------------------------

    def trajectory(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(times, positions, quaternions w-first), one row per result."""
        t = np.array([r.t_end for r in self.results])
        p = np.array([r.pose.p_e for r in self.results])
        q = np.array([r.pose.q_e for r in self.results])
        return t, p, q

    @property
    def mean_d(self) -> float:
        per_frame: Dict[int, int] = {}
        for r in self.results:
            per_frame[r.frame_index] = r.d
        return float(np.mean(list(per_frame.values()))) if per_frame else 0.0
