"""SE(3) rigid transforms, 6-DOF motion vectors, and the C-arm projection model.

Coordinate conventions used throughout the package:

- Camera frame: X-ray source at the origin, optical axis along +z, the
  detector plane at z = sdd.
- A RigidTransform maps volume-frame coordinates (mm) to camera-frame
  coordinates (mm).
- Pixel coordinates are (u, v) with u along detector columns and v along
  rows; pixel (0, 0) is the first stored sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import PointBehindSource

# Points closer to the source plane than this are rejected by project();
# anatomy never sits near the source in a registration scene.
MIN_SOURCE_DISTANCE_MM = 1.0

_ORTHO_TOL = 1e-9
_REORTHO_TRIGGER = 1e-12


def _vec3(x) -> np.ndarray:
    v = np.array(x, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {np.shape(x)}")
    return v


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(w) @ x == cross(w, x)."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class RigidTransform:
    """Rigid map y = rotation @ x + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        t = _vec3(self.translation)
        err = np.abs(R.T @ R - np.eye(3)).max()
        if not np.isfinite(err) or err > _ORTHO_TOL:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.3e})")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or a stack of (N, 3) points."""
        pts = np.asarray(x, dtype=float)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self after other: (self.compose(other))(x) == self(other(x))."""
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        if np.abs(R.T @ R - np.eye(3)).max() > _REORTHO_TRIGGER:
            R = _nearest_rotation(R)
        return RigidTransform(R, t)

    def invert(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)


def _nearest_rotation(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U = U.copy()
        U[:, -1] *= -1.0
        out = U @ Vt
    return out


@dataclass(frozen=True)
class MotionVector:
    """SE(3) increment dv = (omega, t): omega in radians, t in mm."""

    omega: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        w = _vec3(self.omega)
        t = _vec3(self.t)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(t))):
            raise ValueError("motion vector entries must be finite")
        w.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "t", t)

    @staticmethod
    def zero() -> "MotionVector":
        return MotionVector(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_array(a: np.ndarray) -> "MotionVector":
        a = np.asarray(a, dtype=float).reshape(6)
        return MotionVector(a[:3], a[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.omega, self.t])

    def norms(self) -> tuple[float, float]:
        """(rotation magnitude in rad, translation magnitude in mm)."""
        return float(np.linalg.norm(self.omega)), float(np.linalg.norm(self.t))


def exp_se3(dv: MotionVector) -> RigidTransform:
    """Exact SE(3) exponential of a motion vector.

    Rotation by Rodrigues' formula; translation through the left Jacobian,
    so exp(eps*dv)(x) = x + eps*(omega x x + t) + O(eps^2).
    """
    w = dv.omega
    theta2 = float(w @ w)
    K = skew(w)
    K2 = K @ K
    if theta2 < 1e-8:
        # Taylor expansions; exact coefficients cancel badly for tiny angles.
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
        c = 1.0 / 6.0 - theta2 / 120.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    R = np.eye(3) + a * K + b * K2
    V = np.eye(3) + b * K + c * K2
    return RigidTransform(_nearest_rotation(R), V @ dv.t)


@dataclass(frozen=True)
class ProjectionGeometry:
    """Pinhole C-arm model: source at the origin, detector plane at z = sdd.

    detector_size is (width, height) in pixels, pixel_spacing is (su, sv) in
    mm per pixel, principal_point is (cu, cv) in pixels.
    """

    sdd: float
    detector_size: tuple[int, int]
    pixel_spacing: tuple[float, float]
    principal_point: tuple[float, float]

    def __post_init__(self):
        w, h = self.detector_size
        su, sv = self.pixel_spacing
        cu, cv = self.principal_point
        if not self.sdd > 0:
            raise ValueError("sdd must be positive")
        if w < 1 or h < 1:
            raise ValueError("detector must have at least one pixel per axis")
        if not (su > 0 and sv > 0):
            raise ValueError("pixel spacing must be positive")
        if not (0 <= cu <= w and 0 <= cv <= h):
            raise ValueError("principal point must lie on the detector")

    def project(self, x_cam: np.ndarray) -> np.ndarray:
        """Perspective-project camera-frame points (mm) to pixels.

        Raises PointBehindSource if any point has z <= MIN_SOURCE_DISTANCE_MM.
        """
        x = np.asarray(x_cam, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        z = pts[:, 2]
        if np.any(z <= MIN_SOURCE_DISTANCE_MM):
            bad = float(z.min())
            raise PointBehindSource(f"point at z={bad:.3f} mm is behind the source guard")
        su, sv = self.pixel_spacing
        cu, cv = self.principal_point
        u = pts[:, 0] * self.sdd / (z * su) + cu
        v = pts[:, 1] * self.sdd / (z * sv) + cv
        out = np.stack([u, v], axis=-1)
        return out[0] if single else out

    def backproject(self, p: np.ndarray) -> np.ndarray:
        """Lift pixels onto the detector plane (camera frame, mm)."""
        q = np.asarray(p, dtype=float)
        single = q.ndim == 1
        px = np.atleast_2d(q)
        su, sv = self.pixel_spacing
        cu, cv = self.principal_point
        out = np.stack(
            [
                (px[:, 0] - cu) * su,
                (px[:, 1] - cv) * sv,
                np.full(len(px), self.sdd),
            ],
            axis=-1,
        )
        return out[0] if single else out

    def contains(self, p: np.ndarray) -> np.ndarray:
        """Boolean mask of pixels inside the sampled detector area."""
        px = np.atleast_2d(np.asarray(p, dtype=float))
        w, h = self.detector_size
        return (
            (px[:, 0] >= 0.0)
            & (px[:, 0] <= w - 1.0)
            & (px[:, 1] >= 0.0)
            & (px[:, 1] <= h - 1.0)
        )


@lru_cache(maxsize=8)
def detector_ray_directions(geom: ProjectionGeometry) -> np.ndarray:
    """Unit ray directions from the source through every pixel center.

    Returned as an (H*W, 3) read-only array in row-major pixel order.
    """
    w, h = geom.detector_size
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    pix = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    pts = geom.backproject(pix)
    dirs = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    dirs.flags.writeable = False
    return dirs
