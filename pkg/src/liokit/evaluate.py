"""Trajectory metrics: timestamp association, rigid alignment, ATE RMSE,
loop closure error and per-frame timing statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import EvaluationError

ASSOCIATION_WINDOW = 0.01


def associate(t_est: np.ndarray, t_gt: np.ndarray,
              max_dt: float = ASSOCIATION_WINDOW) -> Tuple[np.ndarray, np.ndarray]:
    """Match each estimate stamp to the nearest reference stamp.

    Both inputs must be sorted ascending. Returns (idx_est, idx_gt) for
    pairs within max_dt seconds.
    """
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if t_est.size == 0 or t_gt.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    pos = np.searchsorted(t_gt, t_est)
    left = np.clip(pos - 1, 0, t_gt.size - 1)
    right = np.clip(pos, 0, t_gt.size - 1)
    pick = np.where(
        np.abs(t_gt[left] - t_est) <= np.abs(t_gt[right] - t_est), left, right
    )
    ok = np.abs(t_gt[pick] - t_est) <= max_dt
    return np.flatnonzero(ok), pick[ok]


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform (R, t) with dst ~ R src + t; no scale."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = mu_d - R @ mu_s
    return R, t


def ate_rmse(t_est, p_est, t_gt, p_gt, max_dt: float = ASSOCIATION_WINDOW) -> float:
    """ATE RMSE in meters after association and rigid alignment."""
    ie, ig = associate(t_est, t_gt, max_dt)
    if ie.size < 2:
        raise EvaluationError(
            f"only {ie.size} associated pose pairs within {max_dt * 1e3:.0f} ms"
        )
    est = np.asarray(p_est, dtype=float)[ie]
    gt = np.asarray(p_gt, dtype=float)[ig]
    R, t = umeyama_alignment(est, gt)
    resid = gt - (est @ R.T + t)
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))


def end_to_end_error(positions: np.ndarray) -> float:
    """Loop closure error: distance between first and last positions."""
    p = np.asarray(positions, dtype=float)
    if p.shape[0] < 2:
        raise EvaluationError("need at least 2 poses for end-to-end error")
    return float(np.linalg.norm(p[0] - p[-1]))


def timing_report(frame_ms) -> Dict[str, float]:
    """Mean / median / 95th percentile of per-frame milliseconds."""
    arr = np.asarray(frame_ms, dtype=float)
    if arr.size == 0:
        raise EvaluationError("no timing samples")
    return {
        "mean_ms": float(np.mean(arr)),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
    }


@dataclass
class EvalSummary:
    """Sequence-level results the batch front end reports."""

    ate_rmse_m: Optional[float] = None
    end_to_end_m: Optional[float] = None
    mean_ms: float = 0.0
    p50_ms: float = 0.0
    p95_ms: float = 0.0
    mode_switches: int = 0
    mean_d: float = 1.0
    n_frames: int = 0

    def as_kv(self) -> Dict[str, str]:
        out = {
            "n_frames": str(self.n_frames),
            "mean_ms": f"{self.mean_ms:.3f}",
            "p50_ms": f"{self.p50_ms:.3f}",
            "p95_ms": f"{self.p95_ms:.3f}",
            "mode_switches": str(self.mode_switches),
            "mean_d": f"{self.mean_d:.4f}",
        }
        if self.ate_rmse_m is not None:
            out["ate_rmse_m"] = f"{self.ate_rmse_m:.6f}"
        if self.end_to_end_m is not None:
            out["end_to_end_m"] = f"{self.end_to_end_m:.6f}"
        return out
