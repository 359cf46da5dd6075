"""Metric tests: association windows, alignment invariance, noise
expectation, and timing statistics."""

import numpy as np
import pytest

from liokit.errors import EvaluationError
from liokit.evaluate import (
    associate,
    ate_rmse,
    end_to_end_error,
    timing_report,
    umeyama_alignment,
)
from liokit.geometry import quat_to_mat, so3_exp


def random_rigid(rng):
    R = quat_to_mat(so3_exp(rng.normal(size=3)))
    t = rng.normal(scale=5.0, size=3)
    return R, t


class TestAssociate:
    def test_exact_match(self):
        t = np.arange(10) * 0.1
        ie, ig = associate(t, t)
        assert np.array_equal(ie, np.arange(10))
        assert np.array_equal(ig, np.arange(10))

    def test_small_offset_matches(self):
        t_gt = np.arange(100) * 0.01
        t_est = t_gt[::10] + 0.004
        ie, ig = associate(t_est, t_gt)
        assert ie.size == 10
        assert np.array_equal(ig, np.arange(0, 100, 10))

    def test_beyond_window_excluded(self):
        ie, ig = associate(np.array([0.0, 1.0]), np.array([0.5]))
        assert ie.size == 0

    def test_picks_nearest_side(self):
        t_gt = np.array([0.0, 0.1])
        ie, ig = associate(np.array([0.004, 0.097]), t_gt)
        assert np.array_equal(ig, [0, 1])

    def test_empty_inputs(self):
        ie, ig = associate(np.zeros(0), np.arange(5.0))
        assert ie.size == 0 and ig.size == 0


class TestUmeyama:
    def test_recovers_random_rigid_transform(self, rng):
        for _ in range(20):
            R, t = random_rigid(rng)
            src = rng.normal(scale=3.0, size=(50, 3))
            dst = src @ R.T + t
            R_hat, t_hat = umeyama_alignment(src, dst)
            assert np.allclose(R_hat, R, atol=1e-9)
            assert np.allclose(t_hat, t, atol=1e-9)

    def test_result_is_rotation(self, rng):
        src = rng.normal(size=(30, 3))
        dst = rng.normal(size=(30, 3))
        R, _ = umeyama_alignment(src, dst)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1.0) < 1e-12


class TestAteRmse:
    def test_identity_is_zero(self, rng):
        t = np.arange(50) * 0.1
        p = rng.normal(scale=4.0, size=(50, 3))
        assert ate_rmse(t, p, t, p) < 1e-12

    def test_rigid_offset_is_removed(self, rng):
        t = np.arange(50) * 0.1
        p = np.cumsum(rng.normal(scale=0.2, size=(50, 3)), axis=0)
        R, tr = random_rigid(rng)
        assert ate_rmse(t, p @ R.T + tr, t, p) < 1e-9

    def test_alignment_invariance_under_common_transform(self, rng):
        t = np.arange(60) * 0.1
        gt = np.cumsum(rng.normal(scale=0.2, size=(60, 3)), axis=0)
        est = gt + rng.normal(scale=0.05, size=gt.shape)
        base = ate_rmse(t, est, t, gt)
        R, tr = random_rigid(rng)
        moved = ate_rmse(t, est @ R.T + tr, t, gt @ R.T + tr)
        assert abs(base - moved) < 1e-9

    def test_gaussian_noise_matches_expectation(self):
        rng = np.random.default_rng(2024)
        n = 1000
        t = np.arange(n) * 0.1
        gt = np.cumsum(rng.normal(scale=0.3, size=(n, 3)), axis=0)
        est = gt + rng.normal(scale=0.1, size=gt.shape)
        rmse = ate_rmse(t, est, t, gt)
        expected = 0.1 * np.sqrt(3.0)
        assert abs(rmse - expected) < 0.05 * expected

    def test_too_few_associations_raises(self):
        with pytest.raises(EvaluationError, match="associated"):
            ate_rmse(np.array([0.0, 1.0]), np.zeros((2, 3)),
                     np.array([0.5, 1.5]), np.zeros((2, 3)), max_dt=0.01)

    def test_subsampled_truth_still_associates(self, rng):
        t_gt = np.arange(0, 10, 0.01)
        gt = np.column_stack([np.sin(t_gt), np.cos(t_gt), t_gt])
        t_est = np.arange(0, 10, 0.1) + 0.003
        idx = np.searchsorted(t_gt, t_est)
        est = gt[np.clip(idx, 0, len(t_gt) - 1)]
        assert ate_rmse(t_est, est, t_gt, gt) < 0.02


class TestEndToEnd:
    def test_closed_loop_zero(self):
        p = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [1.0, 2.0, 3.0]])
        assert end_to_end_error(p) == 0.0

    def test_pythagoras(self):
        p = np.array([[0.0, 0, 0], [9.0, 9, 9], [0.3, 0.4, 0.0]])
        assert abs(end_to_end_error(p) - 0.5) < 1e-12

    def test_single_pose_raises(self):
        with pytest.raises(EvaluationError):
            end_to_end_error(np.zeros((1, 3)))


class TestTiming:
    def test_single_sample_degenerate(self):
        rep = timing_report([12.5])
        assert rep["mean_ms"] == rep["p50_ms"] == rep["p95_ms"] == 12.5

    def test_two_samples_mean(self):
        rep = timing_report([10.0, 20.0])
        assert rep["mean_ms"] == 15.0

    def test_matches_numpy_recomputation(self, rng):
        ms = rng.gamma(5.0, 4.0, size=500)
        rep = timing_report(ms)
        assert rep["mean_ms"] == pytest.approx(np.mean(ms))
        assert rep["p50_ms"] == pytest.approx(np.percentile(ms, 50))
        assert rep["p95_ms"] == pytest.approx(np.percentile(ms, 95))

    def test_empty_raises(self):
        with pytest.raises(EvaluationError):
            timing_report([])
