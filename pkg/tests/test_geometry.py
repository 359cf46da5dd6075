import numpy as np
import pytest

from liokit.geometry import (
    NavState,
    lerp3,
    quat_canonical,
    quat_conj,
    quat_identity,
    quat_mul,
    quat_rotate,
    quat_slerp,
    quat_to_mat,
    skew,
    so3_exp,
    so3_left_jacobian,
    so3_left_jacobian_inv,
    so3_log,
    so3_right_jacobian,
    so3_right_jacobian_inv,
    state_boxminus,
    state_boxplus,
)
from conftest import random_unit_quat


def rodrigues_matrix(axis, angle):
    """Independent axis-angle rotation-matrix oracle (Rodrigues formula)."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0:
        return np.eye(3)
    axis = axis / n
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def random_state(rng):
    return NavState(
        q=random_unit_quat(rng),
        p=rng.normal(size=3),
        v=rng.normal(size=3),
        bg=rng.normal(size=3) * 0.01,
        ba=rng.normal(size=3) * 0.1,
    )


class TestExpLog:
    def test_zero_rotation_is_identity(self):
        q = so3_exp(np.zeros(3))
        np.testing.assert_allclose(q, quat_identity())

    def test_quarter_turn_about_z_matches_matrix_oracle(self):
        q = so3_exp(np.array([0.0, 0.0, np.pi / 2]))
        R_oracle = rodrigues_matrix([0, 0, 1], np.pi / 2)
        np.testing.assert_allclose(quat_to_mat(q), R_oracle, atol=1e-12)
        # x-axis maps to y-axis
        np.testing.assert_allclose(quat_rotate(q, [1.0, 0, 0]), [0, 1.0, 0], atol=1e-12)

    def test_round_trip_up_to_norm_3(self, rng):
        for _ in range(200):
            v = rng.normal(size=3)
            v *= rng.uniform(0, 3.0) / max(np.linalg.norm(v), 1e-12)
            back = so3_log(so3_exp(v))
            assert np.linalg.norm(back - v) < 1e-9

    def test_log_identity_is_zero(self):
        np.testing.assert_allclose(so3_log(quat_identity()), np.zeros(3))

    def test_log_double_cover(self, rng):
        for _ in range(20):
            q = random_unit_quat(rng)
            np.testing.assert_allclose(so3_log(q), so3_log(-q), atol=1e-12)

    def test_log_norm_bounded_by_pi(self, rng):
        for _ in range(100):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            assert np.linalg.norm(so3_log(q)) <= np.pi + 1e-12

    def test_small_angle_branch_consistent(self):
        v = np.array([3e-9, -2e-9, 1e-9])
        np.testing.assert_allclose(so3_log(so3_exp(v)), v, atol=1e-18)

    def test_matrix_oracle_random(self, rng):
        for _ in range(50):
            axis = rng.normal(size=3)
            angle = rng.uniform(-3, 3)
            v = angle * axis / np.linalg.norm(axis)
            np.testing.assert_allclose(
                quat_to_mat(so3_exp(v)), rodrigues_matrix(axis, angle), atol=1e-12
            )


class TestSlerp:
    def test_same_input_any_alpha(self, rng):
        q = random_unit_quat(rng)
        np.testing.assert_allclose(quat_slerp(q, q, 0.7), q, atol=1e-12)

    def test_endpoints_exact(self, rng):
        for _ in range(20):
            q0 = random_unit_quat(rng)
            q1 = random_unit_quat(rng)
            np.testing.assert_array_equal(quat_slerp(q0, q1, 0.0), q0)
            np.testing.assert_array_equal(quat_slerp(q0, q1, 1.0), q1)

    def test_halfway_matches_axis_angle_oracle(self):
        q90 = so3_exp(np.array([0.0, 0.0, np.pi / 2]))
        q45_oracle = so3_exp(np.array([0.0, 0.0, np.pi / 4]))
        np.testing.assert_allclose(quat_slerp(quat_identity(), q90, 0.5), q45_oracle, atol=1e-12)

    def test_norm_preserving(self, rng):
        for _ in range(50):
            q = quat_slerp(random_unit_quat(rng), random_unit_quat(rng), rng.uniform(0, 1))
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12

    def test_shortest_path_sign_flip(self):
        q0 = quat_identity()
        q1 = -so3_exp(np.array([0.0, 0.0, 0.3]))
        mid = quat_slerp(q0, q1, 0.5)
        np.testing.assert_allclose(mid, so3_exp(np.array([0.0, 0.0, 0.15])), atol=1e-12)


class TestLerp3:
    def test_same_point(self):
        a = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(lerp3(a, a, 0.3), a, rtol=1e-15)

    def test_quarter(self):
        np.testing.assert_allclose(
            lerp3(np.zeros(3), np.array([2.0, 0, 0]), 0.25), [0.5, 0, 0]
        )

    def test_endpoints(self):
        p0 = np.array([1.0, -1.0, 0.5])
        p1 = np.array([4.0, 2.0, -3.0])
        np.testing.assert_array_equal(lerp3(p0, p1, 0.0), p0)
        np.testing.assert_array_equal(lerp3(p0, p1, 1.0), p1)


class TestBoxOps:
    def test_boxplus_zero(self, rng):
        x = random_state(rng)
        y = state_boxplus(x, np.zeros(15))
        np.testing.assert_allclose(y.q, x.q, atol=1e-15)
        np.testing.assert_array_equal(y.p, x.p)

    def test_round_trip_both_orders(self, rng):
        for _ in range(100):
            x = random_state(rng)
            d = rng.normal(size=15) * 0.5
            # (x [+] d) [-] x == d
            d_back = state_boxminus(state_boxplus(x, d), x)
            assert np.linalg.norm(d_back - d) < 1e-9
            # b [+] (a [-] b) == a
            a = random_state(rng)
            rebuilt = state_boxplus(x, state_boxminus(a, x))
            assert np.linalg.norm(state_boxminus(rebuilt, a)) < 1e-9

    def test_translation_only_delta_matches_vector_addition(self, rng):
        x = random_state(rng)
        d = np.zeros(15)
        d[3:6] = [0.1, -0.2, 0.3]
        y = state_boxplus(x, d)
        np.testing.assert_allclose(y.p, x.p + d[3:6], atol=1e-15)
        np.testing.assert_array_equal(y.q, x.q)

    def test_deterministic(self, rng):
        x = random_state(rng)
        d = rng.normal(size=15)
        y1 = state_boxplus(x, d)
        y2 = state_boxplus(x, d)
        assert np.array_equal(y1.q, y2.q) and np.array_equal(y1.p, y2.p)


class TestJacobians:
    def test_left_jacobian_definition(self, rng):
        # Exp(v + d) ~ Exp(J_l(v) d) (x) Exp(v)
        for _ in range(30):
            v = rng.normal(size=3)
            d = rng.normal(size=3) * 1e-6
            lhs = so3_exp(v + d)
            rhs = quat_mul(so3_exp(so3_left_jacobian(v) @ d), so3_exp(v))
            assert np.linalg.norm(so3_log(quat_mul(quat_conj(rhs), lhs))) < 1e-10

    def test_right_jacobian_definition(self, rng):
        # Exp(v + d) ~ Exp(v) (x) Exp(J_r(v) d)
        for _ in range(30):
            v = rng.normal(size=3)
            d = rng.normal(size=3) * 1e-6
            lhs = so3_exp(v + d)
            rhs = quat_mul(so3_exp(v), so3_exp(so3_right_jacobian(v) @ d))
            assert np.linalg.norm(so3_log(quat_mul(quat_conj(rhs), lhs))) < 1e-10

    def test_inverses(self, rng):
        for _ in range(30):
            v = rng.normal(size=3) * rng.uniform(0, 2.5)
            np.testing.assert_allclose(
                so3_left_jacobian(v) @ so3_left_jacobian_inv(v), np.eye(3), atol=1e-10
            )
            np.testing.assert_allclose(
                so3_right_jacobian(v) @ so3_right_jacobian_inv(v), np.eye(3), atol=1e-10
            )


def test_canonical_rejects_zero():
    with pytest.raises(ValueError):
        quat_canonical(np.zeros(4))
