"""DRR rendering by uniform-step ray casting, plus 2D gradient images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall
from .geometry import ProjectionGeometry, RigidTransform, detector_ray_directions
from .volume import Volume

_RAY_CHUNK = 8192


@dataclass(frozen=True)
class Image2D:
    """Detector image; data[v, u] is the sample at pixel (u, v)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("image data must be 2D")
        if not np.all(np.isfinite(d)):
            raise ValueError("image data must be finite")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class GradientImage2D:
    """Per-pixel partial derivatives in pixel units."""

    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        gx = np.ascontiguousarray(self.gx, dtype=np.float64)
        gy = np.ascontiguousarray(self.gy, dtype=np.float64)
        if gx.shape != gy.shape or gx.ndim != 2:
            raise ValueError("gx and gy must be 2D arrays of equal shape")
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            raise ValueError("gradient data must be finite")
        gx.flags.writeable = False
        gy.flags.writeable = False
        object.__setattr__(self, "gx", gx)
        object.__setattr__(self, "gy", gy)

    @property
    def width(self) -> int:
        return self.gx.shape[1]

    @property
    def height(self) -> int:
        return self.gx.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)


def _clip_to_box(src: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Entry/exit distances of rays (src + t*dir) against an AABB, t >= 0."""
    n = len(dirs)
    tnear = np.zeros(n)
    tfar = np.full(n, np.inf)
    for ax in range(3):
        d = dirs[:, ax]
        s = src[ax]
        parallel = np.abs(d) < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[ax] - s) / d
            t2 = (hi[ax] - s) / d
        lo_t = np.minimum(t1, t2)
        hi_t = np.maximum(t1, t2)
        inside = lo[ax] <= s <= hi[ax]
        tnear = np.where(parallel, tnear if inside else np.inf, np.maximum(tnear, lo_t))
        tfar = np.where(parallel, tfar if inside else -np.inf, np.minimum(tfar, hi_t))
    tnear = np.maximum(tnear, 0.0)
    return tnear, tfar


def render_drr(
    v: Volume,
    pose: RigidTransform,
    geom: ProjectionGeometry,
    step: float | None = None,
) -> Image2D:
    """Cast one ray per pixel and integrate density along it (mm * density).

    Sample points are transformed into the volume frame through the inverse
    pose; the segment is clipped to the volume's bounding box and integrated
    with the midpoint rule at spacing <= step. Rays that miss the box give 0.
    """
    if step is None:
        step = 0.5 * min(v.spacing)
    if step <= 0:
        raise ValueError("step must be positive")

    w, h = geom.detector_size
    dirs_cam = detector_ray_directions(geom)
    inv = pose.invert()
    src = inv.translation  # source (camera origin) in the volume frame
    dirs = dirs_cam @ inv.rotation.T

    lo, hi = v.bounds
    tnear, tfar = _clip_to_box(src, dirs, lo, hi)
    seg = tfar - tnear
    hit = seg > 0

    out = np.zeros(h * w, dtype=np.float64)
    data = v._data_f64
    origin = v.origin
    spacing = v.spacing_array

    idx_hit = np.flatnonzero(hit)
    for start in range(0, len(idx_hit), _RAY_CHUNK):
        sel = idx_hit[start : start + _RAY_CHUNK]
        t0 = tnear[sel]
        length = seg[sel]
        n_steps = np.ceil(length / step).astype(int)
        n_max = int(n_steps.max())
        dt = length / n_steps
        j = np.arange(n_max)
        # (rays, samples): midpoint positions along each ray
        ts = t0[:, None] + (j[None, :] + 0.5) * dt[:, None]
        live = j[None, :] < n_steps[:, None]
        pts = src[None, None, :] + dirs[sel][:, None, :] * ts[..., None]
        coords = ((pts - origin) / spacing).reshape(-1, 3)
        vals = ndimage.map_coordinates(
            data, coords.T, order=1, mode="constant", cval=0.0
        ).reshape(len(sel), n_max)
        out[sel] = np.sum(vals * live, axis=1) * dt
    return Image2D(out.reshape(h, w))


def image_gradient(img: Image2D) -> GradientImage2D:
    """Central differences in the interior, one-sided at the borders."""
    if img.width < 3 or img.height < 3:
        raise ImageTooSmall(f"need at least 3x3 pixels, got {img.width}x{img.height}")
    gy, gx = np.gradient(img.data)
    return GradientImage2D(gx, gy)


def bilinear_sample(arr: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Bilinear read of arr[v, u] at sub-pixel (u, v) positions; 0 outside."""
    q = np.asarray(p, dtype=float)
    pts = q.reshape(-1, 2)
    vals = ndimage.map_coordinates(
        arr, np.stack([pts[:, 1], pts[:, 0]]), order=1, mode="constant", cval=0.0
    )
    return vals.reshape(q.shape[:-1])


def sample_gradient(g: GradientImage2D, p: np.ndarray) -> np.ndarray:
    """Bilinear (gx, gy) at sub-pixel positions; (0, 0) outside the image."""
    q = np.asarray(p, dtype=float)
    return np.stack([bilinear_sample(g.gx, q), bilinear_sample(g.gy, q)], axis=-1)
