import numpy as np
import pytest

import ppcreg as pr
from ppcreg.errors import PointBehindSource

from conftest import random_transform


def mv(w, t):
    return pr.MotionVector(np.array(w, dtype=float), np.array(t, dtype=float))


class TestExpSe3:
    def test_zero_motion_is_identity(self):
        T = pr.exp_se3(mv([0, 0, 0], [0, 0, 0]))
        assert np.allclose(T.rotation, np.eye(3), atol=1e-15)
        assert np.allclose(T.translation, 0, atol=1e-15)

    def test_pure_translation(self):
        T = pr.exp_se3(mv([0, 0, 0], [1, 2, 3]))
        assert np.allclose(T.rotation, np.eye(3), atol=1e-15)
        assert np.allclose(T.translation, [1, 2, 3], atol=1e-15)

    def test_quarter_turn_about_z(self):
        T = pr.exp_se3(mv([0, 0, np.pi / 2], [0, 0, 0]))
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        assert np.allclose(T.rotation, expected, atol=1e-12)
        assert np.allclose(T.translation, 0, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            mv([np.nan, 0, 0], [0, 0, 0])

    def test_first_order_consistency(self):
        # Central difference of exp(eps*dv)(x) against omega x x + t.
        # (A forward difference at eps=1e-6 carries a second-order term of
        # up to eps/2 * |omega|^2 * |x| ~ 2.5e-4, so the centered form is
        # the one that meets the 1e-4 budget for every draw.)
        rng = np.random.default_rng(0)
        eps = 1e-6
        for _ in range(100):
            dv6 = rng.normal(size=6)
            dv6 /= np.linalg.norm(dv6)
            w, t = dv6[:3], dv6[3:]
            x = rng.uniform(-1, 1, 3) * 500 * rng.uniform() ** (1 / 3)
            lin = np.cross(w, x) + t
            plus = pr.exp_se3(mv(eps * w, eps * t)).apply(x)
            minus = pr.exp_se3(mv(-eps * w, -eps * t)).apply(x)
            err = np.linalg.norm((plus - minus) / (2 * eps) - lin)
            assert err <= 1e-4

    def test_small_angle_branch_continuous(self):
        # The Taylor branch and the exact branch agree near the threshold.
        for theta in (9.9e-5, 1.1e-4):
            w = np.array([theta, 0, 0])
            T = pr.exp_se3(mv(w, [1, 0, 0]))
            expected = pr.exp_se3(mv(w * (1 + 1e-12), [1, 0, 0]))
            assert np.allclose(T.rotation, expected.rotation, atol=1e-12)


class TestRigidTransform:
    def test_apply_identity(self):
        T = pr.RigidTransform.identity()
        assert np.allclose(T.apply(np.array([7.0, 8, 9])), [7, 8, 9])

    def test_apply_pure_translation(self):
        T = pr.RigidTransform(np.eye(3), np.array([1.0, 2, 3]))
        assert np.allclose(T.apply(np.zeros(3)), [1, 2, 3])

    def test_apply_rotation_z90(self):
        T = pr.exp_se3(mv([0, 0, np.pi / 2], [0, 0, 0]))
        assert np.allclose(T.apply(np.array([1.0, 0, 0])), [0, 1, 0], atol=1e-12)

    def test_compose_identity_unit(self):
        rng = np.random.default_rng(1)
        T = random_transform(rng)
        I = pr.RigidTransform.identity()
        for composed in (I.compose(T), T.compose(I)):
            assert np.allclose(composed.rotation, T.rotation, atol=1e-15)
            assert np.allclose(composed.translation, T.translation, atol=1e-15)

    def test_compose_with_inverse(self):
        rng = np.random.default_rng(2)
        T = random_transform(rng)
        I = T.compose(T.invert())
        assert np.abs(I.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(I.translation).max() < 1e-9

    def test_compose_translations(self):
        a = pr.RigidTransform(np.eye(3), np.array([1.0, 0, 0]))
        b = pr.RigidTransform(np.eye(3), np.array([0.0, 1, 0]))
        assert np.allclose(a.compose(b).translation, [1, 1, 0])

    def test_compose_associative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b, c = (random_transform(rng) for _ in range(3))
            left = a.compose(b).compose(c)
            right = a.compose(b.compose(c))
            assert np.abs(left.rotation - right.rotation).max() < 1e-9
            assert np.abs(left.translation - right.translation).max() < 1e-9

    def test_apply_preserves_distances(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            T = random_transform(rng)
            x, y = rng.uniform(-200, 200, (2, 3))
            assert abs(
                np.linalg.norm(T.apply(x) - T.apply(y)) - np.linalg.norm(x - y)
            ) < 1e-9

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            pr.RigidTransform(np.eye(3) * 1.01, np.zeros(3))

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            pr.RigidTransform(R, np.zeros(3))


class TestProjection:
    def setup_method(self):
        self.geom = pr.ProjectionGeometry(1000.0, (512, 512), (1.0, 1.0), (256.0, 256.0))

    def test_on_axis_point(self):
        assert np.allclose(self.geom.project(np.array([0.0, 0, 500])), [256, 256])

    def test_magnification(self):
        # magnification 1000/500 = 2 => 50 mm offset lands 100 px off-center
        assert np.allclose(self.geom.project(np.array([50.0, 0, 500])), [356, 256])

    def test_point_behind_source(self):
        with pytest.raises(PointBehindSource):
            self.geom.project(np.array([0.0, 0, -10.0]))

    def test_backproject_principal_point(self):
        assert np.allclose(self.geom.backproject(np.array([256.0, 256.0])), [0, 0, 1000])

    def test_backproject_offset(self):
        assert np.allclose(self.geom.backproject(np.array([356.0, 256.0])), [100, 0, 1000])

    def test_roundtrip_property(self):
        rng = np.random.default_rng(5)
        pix = rng.uniform(0, 511, (100, 2))
        again = self.geom.project(self.geom.backproject(pix))
        assert np.abs(again - pix).max() < 1e-9

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ValueError):
            pr.ProjectionGeometry(-1.0, (512, 512), (1.0, 1.0), (256.0, 256.0))
        with pytest.raises(ValueError):
            pr.ProjectionGeometry(1000.0, (512, 512), (0.0, 1.0), (256.0, 256.0))
        with pytest.raises(ValueError):
            pr.ProjectionGeometry(1000.0, (512, 512), (1.0, 1.0), (600.0, 256.0))
