import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from liokit.errors import MalformedMatrixError
from liokit.frames import make_frame
from liokit.observability import (
    SegmentationConfig,
    assess,
    block_eigenvalues,
    decide_segmentation,
    degeneracy_factors,
    display_kappa,
    info_blocks,
    split_frame,
)


def random_psd12(rng, m=40):
    J = rng.normal(size=(m, 12))
    return J.T @ J, J


class TestInfoBlocks:
    def test_identity(self):
        blocks = info_blocks(np.eye(12))
        for B in blocks:
            assert_allclose(B, np.eye(3), atol=0)

    def test_block_diagonal_exact(self, rng):
        A = np.zeros((12, 12))
        want = []
        for i in range(4):
            M = rng.normal(size=(3, 3))
            B = M @ M.T
            A[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = B
            want.append(B)
        got = info_blocks(A)
        for g, w in zip(got, want):
            assert_array_equal(g, w)

    def test_matches_column_products(self, rng):
        A, J = random_psd12(rng)
        blocks = info_blocks(A)
        for i, B in enumerate(blocks):
            cols = J[:, 3 * i : 3 * i + 3]
            assert_allclose(B, cols.T @ cols, atol=1e-10)

    def test_rejects_asymmetric(self, rng):
        A = np.eye(12)
        A[0, 1] = 1e-6
        with pytest.raises(MalformedMatrixError):
            info_blocks(A)

    def test_rejects_wrong_shape(self):
        with pytest.raises(MalformedMatrixError):
            info_blocks(np.eye(6))


class TestDegeneracyFactors:
    def test_isotropic_is_one(self):
        blocks = [3.7 * np.eye(3)] * 4
        assert_allclose(degeneracy_factors(blocks), np.ones(4), atol=1e-12)

    def test_rank_two_is_zero(self):
        B = np.diag([1.0, 1.0, 0.0])
        f = degeneracy_factors([B, np.eye(3), np.eye(3), np.eye(3)])
        assert f[0] == 0.0
        assert_allclose(f[1:], 1.0, atol=1e-12)

    def test_scale_invariance(self, rng):
        A, _ = random_psd12(rng)
        b1 = info_blocks(A)
        for c in (1e-6, 0.5, 1.0, 42.0, 1e8):
            b2 = info_blocks(c * A)
            assert_allclose(degeneracy_factors(b2), degeneracy_factors(b1), rtol=1e-9)

    def test_known_spectrum(self):
        B = np.diag([4.0, 2.0, 0.5])
        f = degeneracy_factors([B] * 4)
        assert_allclose(f, 0.25, atol=1e-12)


class TestDisplayKappa:
    def test_isotropic_is_one(self):
        assert display_kappa([np.eye(3)] * 4) == pytest.approx(1.0)

    def test_uses_translation_blocks_only(self):
        rot = np.diag([100.0, 1.0, 0.01])  # huge spread, must be ignored
        pos = np.diag([2.0, 1.5, 1.0])
        k = display_kappa([rot, pos, rot, pos])
        assert k == pytest.approx(2.0)

    def test_rank_deficient_caps(self):
        pos = np.diag([1.0, 1.0, 0.0])
        k = display_kappa([np.eye(3), pos, np.eye(3), np.eye(3)])
        assert k == pytest.approx(1e12)

    def test_anisotropic_corridor_like(self):
        pos = np.diag([350.0, 40.0, 1.0])
        assert display_kappa([np.eye(3), pos, np.eye(3), pos]) == pytest.approx(350.0)


class TestDecideSegmentation:
    def test_all_strong_gives_dmax(self):
        seg, d = decide_segmentation(np.ones(4), SegmentationConfig())
        assert seg is True
        assert d == 4

    def test_any_zero_suppresses(self):
        for i in range(4):
            f = np.ones(4)
            f[i] = 0.0
            seg, d = decide_segmentation(f, SegmentationConfig())
            assert seg is False
            assert d == 1

    def test_half_rounds_down(self):
        seg, d = decide_segmentation(np.full(4, 0.5), SegmentationConfig())
        assert seg is True
        assert d == 2  # 1 + 3*0.5 = 2.5 rounds down

    def test_interior_values(self):
        _, d = decide_segmentation(np.full(4, 5.0 / 6.0), SegmentationConfig())
        assert d == 3  # d_real = 3.5 rounds down
        _, d = decide_segmentation(np.full(4, 0.845), SegmentationConfig())
        assert d == 4  # d_real = 3.535

    def test_monotone_in_factors(self, rng):
        cfg = SegmentationConfig()
        for _ in range(200):
            f1 = rng.uniform(0, 1, size=4)
            f2 = f1 + rng.uniform(0, 1 - f1)
            _, d1 = decide_segmentation(f1, cfg)
            _, d2 = decide_segmentation(f2, cfg)
            assert d1 <= d2

    def test_clamped_to_bounds(self):
        cfg = SegmentationConfig(d_min=2, d_max=3)
        _, d = decide_segmentation(np.ones(4), cfg)
        assert d == 3
        seg, d = decide_segmentation(np.full(4, 0.25), cfg)
        assert d == 2

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SegmentationConfig(d_min=3, d_max=2)


class TestAssess:
    def test_consistent_with_parts(self, rng):
        A, _ = random_psd12(rng)
        cfg = SegmentationConfig()
        rep = assess(A, cfg)
        blocks = info_blocks(A)
        assert_allclose(rep.factors, degeneracy_factors(blocks), atol=0)
        assert rep.kappa == display_kappa(blocks)
        assert_allclose(rep.eigenvalues, block_eigenvalues(blocks), atol=0)
        seg, d = decide_segmentation(rep.factors, cfg)
        assert (rep.segment, rep.d) == (seg, d)
        assert np.all(np.diff(rep.eigenvalues, axis=1) <= 0)

    def test_disabled_forces_single(self, rng):
        rep = assess(np.eye(12) * 5.0, SegmentationConfig(enabled=False))
        assert rep.segment is False
        assert rep.d == 1


def uniform_time_frame(rng, n=1000, T=0.1):
    xyz = rng.uniform(-3, 3, size=(n, 3))
    dt = np.sort(rng.uniform(0.0, T, size=n))
    return make_frame(xyz, dt, 2.0, 2.0 + T)


class TestSplitFrame:
    def test_d1_identity(self, rng):
        f = uniform_time_frame(rng)
        out = split_frame(f, 1)
        assert len(out) == 1
        assert out[0] is f

    def test_d2_two_windows_50ms_stride(self, rng):
        f = uniform_time_frame(rng)  # 10 Hz frame
        out = split_frame(f, 2)
        assert len(out) == 2
        assert out[0].t_begin == pytest.approx(2.0)
        assert out[1].t_begin == pytest.approx(2.05)
        assert out[1].t_begin - out[0].t_begin == pytest.approx(0.05)
        assert out[0].t_end == pytest.approx(2.1)  # span 2T/d, truncated at end
        assert out[1].t_end == pytest.approx(2.1)

    def test_membership_matches_interval_oracle(self, rng):
        f = uniform_time_frame(rng)
        d = 4
        out = split_frame(f, d)
        assert len(out) == d
        T = f.duration
        bounds = [l * T / d for l in range(d + 1)]
        for l, sub in enumerate(out):
            lo = bounds[l]
            hi = min(bounds[min(l + 2, d)], T)
            want = np.flatnonzero((f.dt >= lo) & (f.dt <= hi))
            assert sub.n_points == want.size
            assert_allclose(np.sort(sub.xyz, axis=0), np.sort(f.xyz[want], axis=0), atol=0)

    def test_every_point_in_some_window(self, rng):
        f = uniform_time_frame(rng, n=777)
        for d in (2, 3, 4):
            out = split_frame(f, d)
            total = np.concatenate([s.xyz for s in out])
            in_rows = {tuple(r) for r in f.xyz}
            out_rows = {tuple(r) for r in total}
            assert in_rows <= out_rows

    def test_disjoint_exact_partition(self, rng):
        f = uniform_time_frame(rng, n=500)
        for d in (2, 3, 4):
            out = split_frame(f, d, disjoint=True)
            total = np.concatenate([s.xyz for s in out])
            assert total.shape[0] == f.n_points
            assert_allclose(
                np.sort(total, axis=0), np.sort(f.xyz, axis=0), atol=0
            )

    def test_dt_renormalized_to_window_start(self, rng):
        f = uniform_time_frame(rng)
        for sub in split_frame(f, 4):
            assert sub.dt.min() >= 0.0
            assert sub.dt.max() <= sub.duration + 1e-12
        # absolute times preserved: window dt + t_begin equals original stamps
        sub = split_frame(f, 2)[1]
        orig = f.dt[(f.dt >= 0.05) & (f.dt <= 0.1)]
        assert_allclose(np.sort(sub.dt + (sub.t_begin - f.t_begin)), np.sort(orig), atol=1e-15)

    def test_empty_window_falls_back(self, rng):
        # all points in the first quarter: d=4 leaves windows empty
        xyz = rng.uniform(-1, 1, size=(50, 3))
        dt = rng.uniform(0.0, 0.024, size=50)
        f = make_frame(xyz, dt, 0.0, 0.1)
        out = split_frame(f, 4)
        # fell back until every window holds a point (d=1 worst case)
        assert all(s.n_points > 0 for s in out)
        assert len(out) < 4

    def test_rejects_bad_d(self, rng):
        with pytest.raises(ValueError):
            split_frame(uniform_time_frame(rng), 0)
