import numpy as np
import pytest

import ppcreg as pr
from ppcreg.errors import EmptyPointSet, UndefinedReduction

from conftest import random_transform


def point_set(rng, n=200, scale=60.0):
    pts = rng.uniform(-1, 1, (n, 3)) * scale
    g = rng.normal(size=(n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return pr.SurfacePointSet(pts, g)


class TestMtre:
    def test_equal_poses_zero(self):
        rng = np.random.default_rng(0)
        pts = point_set(rng)
        T = random_transform(rng)
        assert pr.mtre(T, T, pts) == 0.0

    def test_pure_translation_offset(self):
        rng = np.random.default_rng(1)
        pts = point_set(rng)
        t_gt = random_transform(rng)
        shift = pr.RigidTransform(np.eye(3), np.array([3.0, 0.0, 4.0]))
        t_est = shift.compose(t_gt)
        assert pr.mtre(t_est, t_gt, pts) == pytest.approx(5.0, abs=1e-12)

    def test_rotation_matches_chord_formula(self):
        # Oracle: a rotation by theta about an axis moves each point by
        # 2 sin(theta/2) * (distance to the axis).
        rng = np.random.default_rng(2)
        pts = point_set(rng, n=500)
        centroid = pts.points.mean(axis=0)
        axis = np.array([0.0, 0.0, 1.0])
        theta = 0.3
        rot = pr.exp_se3(pr.MotionVector(theta * axis, np.zeros(3)))
        # Rotate about the centroid in the identity frame.
        t_gt = pr.RigidTransform(np.eye(3), -centroid)
        t_est = rot.compose(t_gt)
        d_axis = np.linalg.norm((pts.points - centroid)[:, :2], axis=1)
        expected = float(np.mean(2.0 * np.sin(theta / 2.0) * d_axis))
        assert pr.mtre(t_est, t_gt, pts) == pytest.approx(expected, rel=1e-12)

    def test_frame_invariance(self):
        rng = np.random.default_rng(3)
        pts = point_set(rng)
        t_est, t_gt, s = (random_transform(rng) for _ in range(3))
        a = pr.mtre(t_est, t_gt, pts)
        b = pr.mtre(s.compose(t_est), s.compose(t_gt), pts)
        assert abs(a - b) < 1e-9

    def test_empty_point_set(self):
        empty = pr.SurfacePointSet(np.empty((0, 3)), np.empty((0, 3)))
        T = pr.RigidTransform.identity()
        with pytest.raises(EmptyPointSet):
            pr.mtre(T, T, empty)


class TestReductionFactor:
    def test_halved(self):
        assert pr.reduction_factor(20.0, 10.0) == 0.5

    def test_worsened_is_zero(self):
        assert pr.reduction_factor(10.0, 12.0) == 0.0

    def test_unchanged_is_zero(self):
        assert pr.reduction_factor(10.0, 10.0) == 0.0

    def test_zero_before_undefined(self):
        with pytest.raises(UndefinedReduction):
            pr.reduction_factor(0.0, 1.0)

    def test_range_property(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            before = rng.uniform(0.1, 50)
            after = rng.uniform(0, 80)
            rf = pr.reduction_factor(before, after)
            assert 0.0 <= rf <= 1.0
            if after >= before:
                assert rf == 0.0


class TestEpe:
    def _corr(self, dp_extra=0.0):
        geom = pr.ProjectionGeometry(1000.0, (256, 256), (1.0, 1.0), (128.0, 128.0))
        rng = np.random.default_rng(5)
        w = np.stack(
            [rng.uniform(-40, 40, 30), rng.uniform(-40, 40, 30), rng.uniform(450, 550, 30)],
            axis=1,
        )
        g = rng.normal(size=(30, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        pose = pr.RigidTransform.identity()
        t_gt = pr.RigidTransform(np.eye(3), np.array([5.0, -2.0, 0.0]))
        p = geom.project(w)
        n2d = np.tile([1.0, 0.0], (30, 1))
        c = pr.ContourPointSet(w, g, p, n2d)
        dp = geom.project(t_gt.apply(w)) - p + dp_extra
        valid = np.ones(30, bool)
        corr = pr.CorrespondenceSet(c, dp, p + dp, np.ones(30), valid, valid.astype(float))
        return corr, t_gt, geom

    def test_perfect_flow_is_zero(self):
        corr, t_gt, geom = self._corr()
        assert pr.epe(corr, t_gt, geom) == pytest.approx(0.0, abs=1e-12)

    def test_identity_pose_zero_flow(self):
        geom = pr.ProjectionGeometry(1000.0, (256, 256), (1.0, 1.0), (128.0, 128.0))
        rng = np.random.default_rng(6)
        w = np.stack(
            [rng.uniform(-40, 40, 10), rng.uniform(-40, 40, 10), rng.uniform(450, 550, 10)],
            axis=1,
        )
        g = np.tile([1.0, 0.0, 0.0], (10, 1))
        p = geom.project(w)
        c = pr.ContourPointSet(w, g, p, np.tile([1.0, 0.0], (10, 1)))
        valid = np.ones(10, bool)
        corr = pr.CorrespondenceSet(
            c, np.zeros((10, 2)), p, np.ones(10), valid, valid.astype(float)
        )
        assert pr.epe(corr, pr.RigidTransform.identity(), geom) == 0.0

    def test_uniform_offset(self):
        corr, t_gt, geom = self._corr(dp_extra=np.array([0.6, 0.8]))
        assert pr.epe(corr, t_gt, geom) == pytest.approx(1.0, abs=1e-12)

    def test_no_valid_raises(self):
        corr, t_gt, geom = self._corr()
        import dataclasses

        corr = dataclasses.replace(
            corr, valid=np.zeros(30, bool), weight=np.zeros(30)
        )
        with pytest.raises(EmptyPointSet):
            pr.epe(corr, t_gt, geom)


class TestSampleInitialTransform:
    def test_target_zero_returns_ground_truth(self, sphere_pair_surface):
        t_gt = pr.RigidTransform(np.eye(3), np.array([0.0, 0.0, 500.0]))
        rng = np.random.default_rng(7)
        s = pr.sample_initial_transform(t_gt, sphere_pair_surface, 0.0, rng)
        assert s.t_init is t_gt

    def test_target_45_achieved(self, sphere_pair_surface):
        t_gt = pr.RigidTransform(np.eye(3), np.array([0.0, 0.0, 500.0]))
        rng = np.random.default_rng(8)
        s = pr.sample_initial_transform(t_gt, sphere_pair_surface, 45.0, rng)
        achieved = pr.mtre(s.t_init, t_gt, sphere_pair_surface)
        assert 44.9 <= achieved <= 45.1

    def test_deterministic_for_seed(self, sphere_pair_surface):
        t_gt = pr.RigidTransform(np.eye(3), np.array([0.0, 0.0, 500.0]))
        a = pr.sample_initial_transform(
            t_gt, sphere_pair_surface, 20.0, np.random.default_rng(9)
        )
        b = pr.sample_initial_transform(
            t_gt, sphere_pair_surface, 20.0, np.random.default_rng(9)
        )
        assert np.array_equal(a.t_init.rotation, b.t_init.rotation)
        assert np.array_equal(a.t_init.translation, b.t_init.translation)

    def test_achievement_over_many_draws(self, sphere_pair_surface):
        t_gt = pr.RigidTransform(np.eye(3), np.array([0.0, 0.0, 500.0]))
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(1000):
            target = rng.uniform(0.5, 45.0)
            s = pr.sample_initial_transform(t_gt, sphere_pair_surface, target, rng)
            achieved = pr.mtre(s.t_init, t_gt, sphere_pair_surface)
            worst = max(worst, abs(achieved - target))
        assert worst <= 0.1

    def test_empty_points_raise(self):
        empty = pr.SurfacePointSet(np.empty((0, 3)), np.empty((0, 3)))
        with pytest.raises(EmptyPointSet):
            pr.sample_initial_transform(
                pr.RigidTransform.identity(), empty, 10.0, np.random.default_rng(0)
            )


@pytest.fixture(scope="module")
def pair_scene(sphere_pair_volume, sphere_pair_surface):
    geom = pr.ProjectionGeometry(1000.0, (256, 256), (1.5, 1.5), (128.0, 128.0))
    t_gt = pr.view_pose(sphere_pair_volume, 500.0, (0, 1, 0), 0.0)
    return sphere_pair_volume, sphere_pair_surface, geom, t_gt


class TestRegister:
    def test_fixed_point_converges_quickly(self, pair_scene):
        vol, surface, geom, t_gt = pair_scene
        cfg = pr.RegistrationConfig(matcher="image", weighting="score", drr_step=0.5)
        grad_flr = pr.image_gradient(pr.render_drr(vol, t_gt, geom, 0.5))
        report = pr.register(
            vol, geom, t_gt, cfg, grad_flr=grad_flr, t_gt=t_gt, surface=surface
        )
        assert report.converged
        assert report.n_iterations <= 2
        assert report.mtre_trace[-1] < 0.5

    def test_oracle_converges_from_20mm(self, pair_scene):
        vol, surface, geom, t_gt = pair_scene
        cfg = pr.RegistrationConfig(matcher="oracle", weighting="uniform", max_iterations=10)
        rng = np.random.default_rng(12)
        s = pr.sample_initial_transform(t_gt, surface, 20.0, rng)
        report = pr.register(vol, geom, s.t_init, cfg, t_gt=t_gt, surface=surface)
        assert report.mtre_trace[0] == pytest.approx(20.0, abs=0.1)
        assert report.mtre_trace[-1] < 0.1
        assert report.n_iterations <= 10

    def test_single_iteration_cap(self, pair_scene):
        vol, surface, geom, t_gt = pair_scene
        cfg = pr.RegistrationConfig(
            matcher="oracle", weighting="uniform", max_iterations=1
        )
        rng = np.random.default_rng(13)
        s = pr.sample_initial_transform(t_gt, surface, 15.0, rng)
        report = pr.register(vol, geom, s.t_init, cfg, t_gt=t_gt, surface=surface)
        assert report.n_iterations == 1
        assert len(report.poses) == 2
        assert len(report.mtre_trace) == 2
        assert len(report.reduction_factors) == 1

    def test_trace_non_increasing_under_oracle(self, pair_scene):
        vol, surface, geom, t_gt = pair_scene
        cfg = pr.RegistrationConfig(matcher="oracle", weighting="uniform", max_iterations=10)
        for seed in (14, 15, 16):
            rng = np.random.default_rng(seed)
            s = pr.sample_initial_transform(t_gt, surface, rng.uniform(5, 20), rng)
            report = pr.register(vol, geom, s.t_init, cfg, t_gt=t_gt, surface=surface)
            trace = np.array(report.mtre_trace)
            assert np.all(np.diff(trace) <= 1e-6)

    def test_report_lengths_consistent(self, pair_scene):
        vol, surface, geom, t_gt = pair_scene
        cfg = pr.RegistrationConfig(matcher="oracle", weighting="uniform", max_iterations=4)
        rng = np.random.default_rng(17)
        s = pr.sample_initial_transform(t_gt, surface, 10.0, rng)
        report = pr.register(vol, geom, s.t_init, cfg, t_gt=t_gt, surface=surface)
        n = report.n_iterations
        assert len(report.poses) == n + 1
        assert len(report.mtre_trace) == n + 1
        assert len(report.reduction_factors) == n
        assert report.wall_time > 0


class TestSummarize:
    def test_single_result(self):
        s = pr.summarize([(20.0, 10.0)])
        assert s.p50 == s.p75 == s.p95 == 10.0
        assert s.rf_mean == 0.5
        assert s.mtre_mean == 10.0
        assert s.mtre_std == 0.0

    def test_percentiles_against_bruteforce(self):
        finals = np.arange(1.0, 101.0)
        results = [(200.0, float(f)) for f in finals]
        s = pr.summarize(results)

        def brute_percentile(values, q):
            v = np.sort(np.asarray(values, dtype=float))
            pos = (len(v) - 1) * q / 100.0
            lo = int(np.floor(pos))
            hi = int(np.ceil(pos))
            return v[lo] + (pos - lo) * (v[hi] - v[lo])

        assert s.p50 == pytest.approx(brute_percentile(finals, 50), abs=1e-12)
        assert s.p50 == pytest.approx(50.5, abs=1e-12)
        assert s.p75 == pytest.approx(brute_percentile(finals, 75), abs=1e-12)
        assert s.p95 == pytest.approx(brute_percentile(finals, 95), abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyPointSet):
            pr.summarize([])

    def test_moment_fields(self):
        results = [(30.0, 10.0), (30.0, 20.0)]
        s = pr.summarize(results)
        assert s.mtre_mean == 15.0
        assert s.mtre_std == 5.0
        assert s.rf_mean == pytest.approx((2 / 3 + 1 / 3) / 2)
        assert s.n_samples == 2
