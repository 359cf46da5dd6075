"""Simulator tests: exact ray casting, analytic trajectory derivatives,
inertial synthesis, and dataset generation."""

import numpy as np
import pytest

from liokit.formats import SequenceManifest, read_frame, read_tum
from liokit.geometry import NavState, quat_rotate, quat_rotate_batch, quat_conj
from liokit.motion import ImuWindow, NoiseConfig, initial_covariance, propagate_imu
from liokit.observability import degeneracy_factors, display_kappa, info_blocks
from liokit.registration import PosePair, SolverConfig, solve
from liokit.sim import (
    ArcSegment,
    LineTrajectory,
    OutAndBackTrajectory,
    PiecewiseTrajectory,
    Plane,
    ScanSpec,
    SinusoidTrajectory,
    StaticTrajectory,
    World,
    box_room,
    course,
    generate_frames,
    generate_scenario,
    get_scenario,
    raycast,
    sample_scan,
    corridor_world,
    scenario_corridor_junctions,
    scenario_room_gentle,
    spin_profile,
    synth_imu,
    variant,
    wall_x,
    wall_y,
    slab_z,
)
from liokit.voxel_map import DEFAULT_CAPACITY, MultiResMap, ResolutionLadder


def plane_distances(world, pts):
    """Distance from each point to its nearest (infinite) world plane."""
    d = np.full(pts.shape[0], np.inf)
    for pl in world.planes:
        d = np.minimum(d, np.abs((pts - pl.anchor) @ pl.normal))
    return d


class TestRaycast:
    def test_two_parallel_walls_exact_ranges(self):
        planes = [wall_y(2.0, -50, 50, -50, 50), wall_y(-3.0, -50, 50, -50, 50)]
        origins = np.zeros((4, 3))
        dirs = np.array([[0, 1, 0], [0, -1, 0], [0, 1, 0], [0, -1, 0]], dtype=float)
        ranges, hit = raycast(planes, origins, dirs)
        assert hit.all()
        assert np.array_equal(ranges, [2.0, 3.0, 2.0, 3.0])

    def test_oblique_range_is_analytic(self):
        planes = [wall_x(4.0, -50, 50, -50, 50)]
        d = np.array([[np.cos(0.3), np.sin(0.3), 0.0]])
        ranges, hit = raycast(planes, np.zeros((1, 3)), d)
        assert hit[0]
        assert abs(ranges[0] - 4.0 / np.cos(0.3)) < 1e-12

    def test_bounded_extent_misses(self):
        planes = [wall_x(5.0, -1, 1, -1, 1)]
        dirs = np.array([[1, 0, 0], [1, 0.5, 0]], dtype=float)
        ranges, hit = raycast(planes, np.zeros((2, 3)), dirs)
        assert hit[0] and not hit[1]
        assert np.isinf(ranges[1])

    def test_nearest_hit_wins(self):
        planes = [wall_x(5.0, -10, 10, -10, 10), wall_x(2.0, -10, 10, -10, 10)]
        ranges, hit = raycast(planes, np.zeros((1, 3)), np.array([[1.0, 0, 0]]))
        assert ranges[0] == 2.0

    def test_min_range_skips_origin_plane(self):
        planes = [wall_x(0.0, -10, 10, -10, 10), wall_x(3.0, -10, 10, -10, 10)]
        ranges, _ = raycast(planes, np.zeros((1, 3)), np.array([[1.0, 0, 0]]))
        assert ranges[0] == 3.0


class TestTrajectories:
    def fd_check(self, traj, ts):
        h = 1e-6
        for t in ts:
            v = traj.velocity(t)
            a = traj.accel_world(t)
            _, p_plus = traj.pose(t + h)
            _, p_minus = traj.pose(t - h)
            assert np.allclose((p_plus - p_minus) / (2 * h), v, atol=1e-5)
            v_plus = traj.velocity(t + h)
            v_minus = traj.velocity(t - h)
            assert np.allclose((v_plus - v_minus) / (2 * h), a, atol=1e-5)

    def test_sinusoid_derivatives(self):
        traj = SinusoidTrajectory((0, 0, 1), (1.0, 0.8, 0.3), (0.2, 0.15, 0.25),
                                  yaw_amp=0.4, yaw_freq=0.1, duration=10)
        self.fd_check(traj, [0.3, 1.7, 4.2, 8.9])

    def test_out_and_back_returns_to_start(self):
        traj = OutAndBackTrajectory((1, 2, 0.5), (1, 0, 0), amplitude=40.0, period=20.0)
        _, p0 = traj.pose(0.0)
        _, p_mid = traj.pose(10.0)
        _, p_end = traj.pose(20.0)
        assert np.allclose(p_mid, [41, 2, 0.5], atol=1e-9)
        assert np.allclose(p_end, p0, atol=1e-9)
        self.fd_check(traj, [2.1, 9.4, 17.3])

    def test_course_continuity_and_endpoint(self):
        traj = course((2, 0, 1.2), 0.0, 1.5,
                      [("straight", 17.0), ("turn", np.pi / 2, 1.5 / 0.9), ("straight", 4.0)])
        for tb in traj.breaks[1:-1]:
            _, p_before = traj.pose(tb - 1e-9)
            _, p_after = traj.pose(tb + 1e-9)
            assert np.allclose(p_before, p_after, atol=1e-6)
        _, p_end = traj.pose(traj.duration)
        assert np.allclose(p_end, [19.9, 4.9, 1.2], atol=1e-9)
        self.fd_check(traj, [3.0, 11.5, 12.0, 13.5])

    def test_course_ramp_starts_at_rest(self):
        traj = course((2, 0, 1.2), 0.0, 1.5, [("ramp", 3.0), ("straight", 14.75)])
        assert np.allclose(traj.velocity(0.0), 0.0, atol=1e-12)
        assert np.allclose(traj.velocity(3.0), [1.5, 0, 0], atol=1e-12)
        _, p = traj.pose(3.0)
        assert np.allclose(p, [4.25, 0, 1.2], atol=1e-12)
        self.fd_check(traj, [0.5, 1.8, 2.9, 5.0])

    def test_arc_yaw_rate_matches_omega(self):
        seg = ArcSegment(0.0, 4.0, np.zeros(3), 0.0, speed=1.0, omega=0.5)
        traj = PiecewiseTrajectory([seg])
        assert np.allclose(traj.omega_body(1.3), [0, 0, 0.5])
        q, _ = traj.pose(2.0)
        assert abs(2 * np.arctan2(q[3], q[0]) - 1.0) < 1e-12

    def test_spin_profile_rate_and_continuity(self):
        traj = spin_profile((0, 0, 1), 0.0, [(2.0, 0.0, 0.0), (2.0, 0.0, 10.0), (1.0, 10.0, 10.0)])
        assert np.allclose(traj.omega_body(1.0), [0, 0, 0.0])
        assert np.allclose(traj.omega_body(3.0), [0, 0, 5.0])
        assert np.allclose(traj.omega_body(4.5), [0, 0, 10.0])
        for tb in (2.0, 4.0):
            psi_b, _, _, _, _ = traj._eval(np.array([tb - 1e-9]))
            psi_a, _, _, _, _ = traj._eval(np.array([tb + 1e-9]))
            assert abs(psi_b[0] - psi_a[0]) < 1e-6

    def test_static_state(self):
        traj = StaticTrajectory((1, 2, 3), psi=0.7)
        x = traj.state(0.5)
        assert np.allclose(x.p, [1, 2, 3])
        assert np.allclose(x.v, 0)
        assert abs(2 * np.arctan2(x.q[3], x.q[0]) - 0.7) < 1e-12


class TestSampleScan:
    def test_static_frame_points_equal_world_geometry(self, rng):
        world = World("box", box_room(-3, 3, -2, 2, 0, 2.5))
        traj = StaticTrajectory((0, 0, 1.2))
        spec = ScanSpec(points_per_frame=600, el_fov=2.0, sigma_range=0.0)
        frame = sample_scan(world, traj, 0.0, 0.1, spec, rng)
        assert frame.n_points > 500
        world_pts = frame.xyz + np.array([0, 0, 1.2])
        assert plane_distances(world, world_pts).max() < 1e-12

    def test_moving_scan_on_planes_after_exact_deskew(self, rng):
        world = World("box", box_room(-5, 15, -4, 4, 0, 3))
        traj = course((0, 0, 1.2), 0.0, 2.0, [("straight", 6.0), ("turn", 1.0, 0.8)])
        spec = ScanSpec(points_per_frame=800, el_fov=1.4, sigma_range=0.0)
        frame = sample_scan(world, traj, 0.4, 0.5, spec, rng)
        q, p = traj.poses_batch(frame.t_begin + frame.dt)
        world_pts = quat_rotate_batch(q, frame.xyz) + p
        assert plane_distances(world, world_pts).max() < 1e-12

    def test_constant_velocity_smear_is_v_dt(self):
        planes = [wall_x(5.0, -10, 10, -10, 10)]
        traj = LineTrajectory((0, 0, 0), (1.0, 0, 0))
        d = np.array([[1.0, 0, 0]])
        _, p0 = traj.pose(0.0)
        _, p1 = traj.pose(0.1)
        r0, _ = raycast(planes, p0[None, :], d)
        r1, _ = raycast(planes, p1[None, :], d)
        assert abs((r0[0] - r1[0]) - 0.1) < 1e-12

    def test_times_sorted_and_in_frame(self, rng):
        world = World("box", box_room(-3, 3, -3, 3, 0, 3))
        spec = ScanSpec(points_per_frame=400, sigma_range=0.0)
        frame = sample_scan(world, StaticTrajectory((0, 0, 1)), 2.0, 2.1, spec, rng)
        assert frame.t_begin == 2.0 and frame.t_end == 2.1
        assert np.all(np.diff(frame.dt) >= 0)
        assert frame.dt.min() >= 0 and frame.dt.max() <= 0.1

    def test_spinning_pattern_is_azimuth_ordered(self, rng):
        world = World("box", box_room(-3, 3, -3, 3, 0, 3))
        spec = ScanSpec(points_per_frame=320, pattern="spinning", el_fov=0.6,
                        beams=16, sigma_range=0.0)
        frame = sample_scan(world, StaticTrajectory((0, 0, 1)), 0.0, 0.1, spec, rng)
        az = np.arctan2(frame.xyz[:, 1], frame.xyz[:, 0])
        assert np.all(np.diff(az) > 0)

    def test_range_noise_is_radial_gaussian(self):
        world = World("box", box_room(-3, 3, -3, 3, 0, 3))
        traj = StaticTrajectory((0, 0, 1))
        clean = sample_scan(world, traj, 0.0, 0.1,
                            ScanSpec(points_per_frame=2000, sigma_range=0.0),
                            np.random.default_rng(99))
        noisy = sample_scan(world, traj, 0.0, 0.1,
                            ScanSpec(points_per_frame=2000, sigma_range=0.05),
                            np.random.default_rng(99))
        dr = np.linalg.norm(noisy.xyz, axis=1) - np.linalg.norm(clean.xyz, axis=1)
        assert abs(np.std(dr) - 0.05) < 0.005
        assert abs(np.mean(dr)) < 0.005


class TestSynthImu:
    def test_stationary_reads_gravity(self):
        traj = StaticTrajectory((0, 0, 1))
        win = synth_imu(traj, 0.0, 1.0, 100.0)
        assert np.allclose(win.a, [0, 0, 9.81], atol=1e-12)
        assert np.allclose(win.w, 0, atol=1e-12)

    def test_spin_clips_at_rail(self):
        traj = spin_profile((0, 0, 1), 0.0, [(2.0, 20.0, 20.0)])
        win = synth_imu(traj, 0.0, 2.0, 100.0, w_max=17.5)
        assert np.max(win.w[:, 2]) == 17.5
        free = synth_imu(traj, 0.0, 2.0, 100.0)
        assert np.max(free.w[:, 2]) == 20.0

    def test_circle_centripetal_magnitude(self):
        speed, omega = 1.2, 0.6
        traj = PiecewiseTrajectory([ArcSegment(0.0, 8.0, np.zeros(3), 0.0, speed, omega)])
        win = synth_imu(traj, 0.0, 8.0, 50.0)
        assert np.allclose(win.a[:, 0], 0.0, atol=1e-9)
        assert np.allclose(win.a[:, 1], speed * omega, atol=1e-9)
        assert np.allclose(win.a[:, 2], 9.81, atol=1e-9)
        assert np.allclose(win.w[:, 2], omega, atol=1e-12)

    def test_bias_and_noise_applied(self, rng):
        traj = StaticTrajectory((0, 0, 1))
        win = synth_imu(traj, 0.0, 2.0, 100.0, rng=rng, sigma_accel=0.05,
                        sigma_gyro=0.01, bias_a=(0.2, 0, 0), bias_g=(0, 0.05, 0))
        assert abs(np.mean(win.a[:, 0]) - 0.2) < 0.02
        assert abs(np.mean(win.w[:, 1]) - 0.05) < 0.005
        assert np.std(win.a[:, 2]) > 0.02

    def test_double_integration_quadratic_error_decay(self):
        traj = SinusoidTrajectory((0, 0, 1), (0.5, 0.4, 0.2), (0.3, 0.25, 0.4),
                                  yaw_amp=0.3, yaw_freq=0.2, duration=2.0)
        _, p_true = traj.pose(2.0)
        errs = []
        for rate in (100.0, 200.0):
            win = synth_imu(traj, 0.0, 2.0, rate)
            x0 = traj.state(0.0)
            x1, _ = propagate_imu(x0, initial_covariance(), win)
            errs.append(np.linalg.norm(x1.p - p_true))
        assert errs[1] < errs[0]
        ratio = errs[0] / errs[1]
        assert ratio > 2.8, f"expected near-quadratic decay, got ratio {ratio:.2f}"
        assert errs[1] < 2e-3


class TestScenarios:
    def test_registry_builds_all(self):
        for name in ("room_gentle", "corridor_junctions", "saturation_spin", "indoor_outdoor"):
            sc = get_scenario(name)
            assert sc.duration > 0
            assert sc.scan.points_per_frame > 0
            assert sc.name == name

    def test_scenarios_start_at_rest(self):
        # the first frame seeds the map without motion compensation, so
        # every canned trajectory must begin with zero twist
        for name in ("room_gentle", "corridor_junctions", "saturation_spin", "indoor_outdoor"):
            traj = get_scenario(name).trajectory
            assert np.allclose(traj.velocity(0.0), 0.0, atol=1e-12), name
            assert np.allclose(traj.omega_body(0.0), 0.0, atol=1e-12), name

    def test_unknown_scenario_raises(self):
        with pytest.raises(KeyError):
            get_scenario("nope")

    def test_generate_scenario_writes_loadable_dataset(self, tmp_path, rng):
        sc = variant(
            get_scenario("saturation_spin"),
            duration=1.0,
            scan=ScanSpec(points_per_frame=200, sigma_range=0.0),
        )
        manifest_path = generate_scenario(sc, tmp_path, seed=7)
        man = SequenceManifest.load(manifest_path)
        assert len(man.frame_paths) == 10
        assert man.imu_path and man.gt_path
        frame = read_frame(man.frame_paths[3])
        assert abs(frame.t_begin - 0.3) < 1e-12
        assert frame.n_points > 0
        t, p, q = read_tum(man.gt_path)
        assert t[0] == 0.0 and abs(t[-1] - 1.0) < 1e-9
        assert np.allclose(p[0], [0, 0, 1.5], atol=1e-6)

    def test_generation_is_deterministic_per_seed(self, tmp_path):
        sc = variant(
            get_scenario("room_gentle"),
            duration=0.5,
            scan=ScanSpec(points_per_frame=150, sigma_range=0.01),
        )
        generate_scenario(sc, tmp_path / "a", seed=3)
        generate_scenario(sc, tmp_path / "b", seed=3)
        generate_scenario(sc, tmp_path / "c", seed=4)
        fa = read_frame(tmp_path / "a" / "frames" / "frame_00002.bin")
        fb = read_frame(tmp_path / "b" / "frames" / "frame_00002.bin")
        fc = read_frame(tmp_path / "c" / "frames" / "frame_00002.bin")
        assert np.array_equal(fa.xyz, fb.xyz)
        assert not np.array_equal(fa.xyz, fc.xyz)

    def test_saturation_profile_crosses_threshold_once_each_way(self):
        sc = get_scenario("saturation_spin")
        win = synth_imu(sc.trajectory, 0.0, sc.duration, 200.0)
        hot = np.abs(win.w[:, 2]) >= 0.98 * sc.w_max
        flips = np.diff(hot.astype(int))
        assert np.sum(flips == 1) == 1
        assert np.sum(flips == -1) == 1


class TestWorldObservability:
    def build_and_solve(self, world, position, rng):
        traj = StaticTrajectory(position)
        spec = ScanSpec(points_per_frame=1200, el_fov=1.0, sigma_range=0.005)
        vmap = MultiResMap()
        q0, p0 = traj.pose(0.0)
        for k in range(3):
            frame = sample_scan(world, traj, 0.1 * k, 0.1 * (k + 1), spec, rng)
            world_pts = quat_rotate_batch(
                np.broadcast_to(q0, (frame.n_points, 4)).copy(), frame.xyz) + p0
            vmap.insert_batch(world_pts, np.linalg.norm(frame.xyz, axis=1))
        frame = sample_scan(world, traj, 0.3, 0.4, spec, rng)
        state = traj.state(0.0)
        prior = PosePair.from_states(state, state)
        report = solve(frame, vmap, SolverConfig(max_iters=4), prior)
        blocks = info_blocks(report.A)
        return degeneracy_factors(blocks), display_kappa(blocks)

    def test_corridor_weaker_than_room_along_translation(self, rng):
        corridor = corridor_world(length=60.0)
        room = scenario_room_gentle().world
        position = (0.0, 0.0, 1.4)
        f_corr, k_corr = self.build_and_solve(corridor, position, rng)
        f_room, k_room = self.build_and_solve(room, position, rng)
        trans_corr = min(f_corr[1], f_corr[3])
        trans_room = min(f_room[1], f_room[3])
        assert trans_corr < 0.5 * trans_room
        assert k_corr > 2.0 * k_room
