"""Degeneracy scoring and adaptive frame segmentation.

The registration solve leaves a 12x12 information matrix A = J^T J over
(rot_b, pos_b, rot_e, pos_e). Each 3x3 diagonal block's eigenvalue
spectrum tells how well the scene constrains that group: a small
lambda3/lambda2 ratio means one direction is nearly unobservable.

Two scores coexist on purpose. The segmentation decision uses the
degeneracy factor lambda3/lambda2 per block (small = degenerate, frames
are NOT split when weak). Plots and logs additionally carry a
condition-style display score kappa = lambda1/lambda3 over the
translation blocks, where LARGE = degenerate, with a conventional
threshold of 3.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import MalformedMatrixError
from .frames import PointFrame

BLOCK_NAMES = ("rot_begin", "pos_begin", "rot_end", "pos_end")
KAPPA_THRESHOLD = 3.5
_KAPPA_CAP = 1e12


@dataclass
class SegmentationConfig:
    eps_rot: float = 0.2
    eps_pos: float = 0.2
    d_min: int = 1
    d_max: int = 4
    enabled: bool = True
    disjoint: bool = False

    def __post_init__(self):
        if not (1 <= self.d_min <= self.d_max):
            raise ValueError("need 1 <= d_min <= d_max")


@dataclass
class ObservabilityReport:
    eigenvalues: np.ndarray  # (4, 3) descending per block, order BLOCK_NAMES
    factors: np.ndarray  # (4,) lambda3/lambda2 per block
    total_factor: float  # mean of the four factors
    kappa: float  # display score, max lambda1/lambda3 over translation blocks
    weak: bool
    segment: bool
    d: int


def info_blocks(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """The four 3x3 diagonal blocks of A in (R_b, p_b, R_e, p_e) order."""
    A = np.asarray(A, dtype=float)
    if A.shape != (12, 12):
        raise MalformedMatrixError(f"expected 12x12, got {A.shape}")
    if np.linalg.norm(A - A.T) > 1e-8:
        raise MalformedMatrixError("information matrix is not symmetric")
    return tuple(A[s, s] for s in (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)))


def block_eigenvalues(blocks) -> np.ndarray:
    """(4, 3) eigenvalues, descending within each block, clipped at zero."""
    out = np.zeros((4, 3))
    for i, B in enumerate(blocks):
        ev = np.linalg.eigvalsh(0.5 * (B + B.T))
        out[i] = np.maximum(ev[::-1], 0.0)
    return out


def degeneracy_factors(blocks) -> np.ndarray:
    """lambda3/lambda2 for each block; 0 when the block is rank-deficient."""
    ev = block_eigenvalues(blocks)
    lam2, lam3 = ev[:, 1], ev[:, 2]
    return np.where(lam2 < 1e-12, 0.0, lam3 / np.maximum(lam2, 1e-300))


def display_kappa(blocks) -> float:
    """Condition-style score over the two translation blocks, capped."""
    ev = block_eigenvalues(blocks)
    trans = ev[[1, 3]]
    lam1, lam3 = trans[:, 0], trans[:, 2]
    kappa = lam1 / np.maximum(lam3, lam1 / _KAPPA_CAP)
    kappa = np.where(lam1 <= 0.0, _KAPPA_CAP, kappa)
    return float(kappa.max())


def _round_half_down(x: float) -> int:
    return int(np.ceil(x - 0.5))


def decide_segmentation(factors: np.ndarray, cfg: SegmentationConfig) -> Tuple[bool, int]:
    """(segment?, d) from the four degeneracy factors.

    Weak observability (any rotation factor below eps_rot or translation
    factor below eps_pos) suppresses segmentation: splitting a frame
    shortens each window's geometry, which is the wrong move when the
    scene is already degenerate. Otherwise d interpolates between d_min
    and d_max by the mean factor, rounding halves down.
    """
    f = np.asarray(factors, dtype=float)
    if f.shape != (4,):
        raise ValueError("expected four factors")
    eps = np.array([cfg.eps_rot, cfg.eps_pos, cfg.eps_rot, cfg.eps_pos])
    weak = bool(np.any(f < eps))
    if weak:
        return False, cfg.d_min
    alpha = float(f.mean())
    d = _round_half_down(cfg.d_min * (1.0 - alpha) + cfg.d_max * alpha)
    d = int(np.clip(d, cfg.d_min, cfg.d_max))
    return d >= 2, d


def assess(A: np.ndarray, cfg: SegmentationConfig) -> ObservabilityReport:
    """Full scoring of one solve's information matrix."""
    blocks = info_blocks(A)
    ev = block_eigenvalues(blocks)
    factors = degeneracy_factors(blocks)
    kappa = display_kappa(blocks)
    segment, d = decide_segmentation(factors, cfg)
    if not cfg.enabled:
        segment, d = False, cfg.d_min
    eps = np.array([cfg.eps_rot, cfg.eps_pos, cfg.eps_rot, cfg.eps_pos])
    return ObservabilityReport(
        eigenvalues=ev,
        factors=factors,
        total_factor=float(factors.mean()),
        kappa=kappa,
        weak=bool(np.any(factors < eps)),
        segment=segment,
        d=d,
    )


def split_frame(frame: PointFrame, d: int, disjoint: bool = False) -> List[PointFrame]:
    """Cut one frame into d-way sub-frames over an even time grid.

    Overlapping mode (default): boundary set N[j] = t_b + j*T/d, and
    window l spans [N[l], N[l+2]] truncated at the frame end, i.e. span
    2T/d at stride T/d. For d=2 a 100 ms frame yields windows starting
    every 50 ms. Disjoint mode emits the plain partition [N[l], N[l+1]].

    Any empty window means d outruns the point support; the split falls
    back to d-1 recursively. d=1 returns the input frame unchanged.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if d == 1:
        return [frame]
    T = frame.duration
    bounds = np.linspace(0.0, T, d + 1)
    out: List[PointFrame] = []
    for l in range(d):
        lo = bounds[l]
        hi = bounds[l + 1] if disjoint else min(bounds[min(l + 2, d)], T)
        if disjoint and l < d - 1:
            mask = (frame.dt >= lo) & (frame.dt < hi)
        else:
            mask = (frame.dt >= lo) & (frame.dt <= hi)
        if not mask.any():
            return split_frame(frame, d - 1, disjoint=disjoint)
        out.append(
            PointFrame(
                xyz=frame.xyz[mask].copy(),
                dt=frame.dt[mask] - lo,
                t_begin=frame.t_begin + lo,
                t_end=frame.t_begin + hi,
                id=frame.id,
            )
        )
    return out
