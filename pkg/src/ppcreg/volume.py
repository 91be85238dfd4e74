"""Voxel volumes: trilinear sampling, smoothed gradients, surface extraction,
and synthetic phantom generation.

Volume data is stored as a float32 array of shape (nx, ny, nz); voxel
(i, j, k) has its center at origin + (i, j, k) * spacing in the volume frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import EmptySurface, PrimitiveOutOfBounds


@dataclass(frozen=True)
class Volume:
    """Scalar voxel grid with physical spacing and origin (mm)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if any(d < 1 for d in dims):
            raise ValueError("dims must be positive")
        if any(s <= 0 for s in spacing):
            raise ValueError("spacing must be positive")
        origin = np.array(self.origin, dtype=float).reshape(3)
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.shape != dims:
            raise ValueError(f"data shape {data.shape} does not match dims {dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data must be finite")
        origin.flags.writeable = False
        data.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "data", data)

    @cached_property
    def _data_f64(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64)

    @property
    def spacing_array(self) -> np.ndarray:
        return np.array(self.spacing)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical hull of voxel centers: (lower corner, upper corner) in mm."""
        hi = self.origin + (np.array(self.dims) - 1) * self.spacing_array
        return self.origin.copy(), hi

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.bounds
        return (lo + hi) / 2.0

    def world_to_index(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.origin) / self.spacing_array


@dataclass(frozen=True)
class SurfacePointSet:
    """Surface points (mm, volume frame) with unit density gradients."""

    points: np.ndarray
    gradients: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float).reshape(-1, 3)
        grads = np.ascontiguousarray(self.gradients, dtype=float).reshape(-1, 3)
        if len(pts) != len(grads):
            raise ValueError("points and gradients must have equal length")
        if len(grads):
            norms = np.linalg.norm(grads, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("gradients must be unit vectors")
        pts.flags.writeable = False
        grads.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "gradients", grads)

    def __len__(self) -> int:
        return len(self.points)


def sample_trilinear(v: Volume, x: np.ndarray) -> np.ndarray | float:
    """Trilinear interpolation at physical coordinates; 0 outside the bounds.

    Accepts a single (3,) point or an (N, 3) stack. The bounds are the hull
    of voxel centers.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    idx = v.world_to_index(np.atleast_2d(pts))
    vals = ndimage.map_coordinates(
        v._data_f64, idx.T, order=1, mode="constant", cval=0.0
    )
    return float(vals[0]) if single else vals


def _edge_clamped_central_diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (1, 1)
    padded = np.pad(arr, pad, mode="edge")
    lo = [slice(None)] * arr.ndim
    hi = [slice(None)] * arr.ndim
    lo[axis] = slice(0, arr.shape[axis])
    hi[axis] = slice(2, arr.shape[axis] + 2)
    return (padded[tuple(hi)] - padded[tuple(lo)]) / (2.0 * h)


def gradient_field(v: Volume, sigma: float) -> np.ndarray:
    """Gaussian-smoothed density gradient in density/mm.

    Separable smoothing (sigma in voxels, truncated at 3 sigma) followed by
    edge-clamped central differences scaled by 1/spacing per axis. Returns an
    (nx, ny, nz, 3) array.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    smoothed = v._data_f64
    if sigma > 0:
        smoothed = ndimage.gaussian_filter(smoothed, sigma, mode="nearest", truncate=3.0)
    out = np.empty(v.dims + (3,), dtype=np.float64)
    for ax in range(3):
        out[..., ax] = _edge_clamped_central_diff(smoothed, ax, v.spacing[ax])
    return out


@dataclass(frozen=True)
class CannyParams:
    """Thresholds are fractions of the maximum gradient magnitude."""

    sigma: float = 1.0
    t_low: float = 0.1
    t_high: float = 0.3
    max_points: int | None = None

    def __post_init__(self):
        if not (0.0 < self.t_low < self.t_high < 1.0):
            raise ValueError("need 0 < t_low < t_high < 1")
        if self.max_points is not None and self.max_points < 1:
            raise ValueError("max_points must be positive")


def extract_surface_points(v: Volume, params: CannyParams = CannyParams()) -> SurfacePointSet:
    """3D Canny surface extraction.

    Gradient magnitude, non-maximum suppression along the local gradient
    direction (trilinear-sampled one voxel to either side), then hysteresis
    thresholding. Points come out in raster order (x fastest, then y, then z)
    as voxel centers in mm with unit gradients.
    """
    grad = gradient_field(v, params.sigma)
    mag = np.linalg.norm(grad, axis=-1)
    mmax = float(mag.max())
    if mmax <= 0.0:
        raise EmptySurface("volume has no density variation")
    low = params.t_low * mmax
    high = params.t_high * mmax

    cand = np.argwhere(mag >= low)
    if len(cand) == 0:
        raise EmptySurface("no voxel reaches the low gradient threshold")

    g = grad[cand[:, 0], cand[:, 1], cand[:, 2]]
    # Step direction of one voxel in index space corresponding to the
    # physical gradient direction.
    d_idx = g / v.spacing_array
    d_idx /= np.linalg.norm(d_idx, axis=1, keepdims=True)
    m_here = mag[cand[:, 0], cand[:, 1], cand[:, 2]]
    fwd = ndimage.map_coordinates(mag, (cand + d_idx).T, order=1, mode="constant", cval=0.0)
    bwd = ndimage.map_coordinates(mag, (cand - d_idx).T, order=1, mode="constant", cval=0.0)
    keep = (m_here + 1e-12 >= fwd) & (m_here + 1e-12 >= bwd)

    nms = np.zeros(v.dims, dtype=bool)
    kept = cand[keep]
    nms[kept[:, 0], kept[:, 1], kept[:, 2]] = True

    weak = nms & (mag >= low)
    strong = nms & (mag >= high)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3, 3), dtype=bool))
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels != 0]
    final = weak & np.isin(labels, strong_labels)
    if not final.any():
        raise EmptySurface("no voxel survives hysteresis")

    # Raster order: x fastest, then y, then z.
    kk, jj, ii = np.nonzero(final.transpose(2, 1, 0))
    if params.max_points is not None and len(ii) > params.max_points:
        stride = int(np.ceil(len(ii) / params.max_points))
        ii, jj, kk = ii[::stride], jj[::stride], kk[::stride]

    idx = np.stack([ii, jj, kk], axis=1).astype(float)
    points = v.origin + idx * v.spacing_array
    g_out = grad[ii, jj, kk]
    g_out /= np.linalg.norm(g_out, axis=1, keepdims=True)
    return SurfacePointSet(points, g_out)


@dataclass(frozen=True)
class Primitive:
    """Geometric primitive with additive density.

    size semantics by kind:
      sphere    -> (radius,)
      box       -> (half_x, half_y, half_z)
      cylinder  -> (radius, half_length); axis gives the symmetry direction
      ellipsoid -> (semi_x, semi_y, semi_z)
    """

    kind: str
    center: tuple[float, float, float]
    size: tuple[float, ...]
    density: float
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def extent(self) -> np.ndarray:
        """Conservative half-extent of the bounding box per axis (mm)."""
        if self.kind == "sphere":
            return np.full(3, self.size[0])
        if self.kind == "box":
            return np.array(self.size)
        if self.kind == "cylinder":
            r, hl = self.size
            a = np.abs(np.array(self.axis, dtype=float))
            a /= np.linalg.norm(a)
            return a * hl + r
        if self.kind == "ellipsoid":
            return np.array(self.size)
        raise ValueError(f"unknown primitive kind {self.kind!r}")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    primitives: tuple[Primitive, ...]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    jitter_mm: float = 0.0


def _primitive_mask(prim: Primitive, center: np.ndarray, X, Y, Z) -> np.ndarray:
    dx, dy, dz = X - center[0], Y - center[1], Z - center[2]
    if prim.kind == "sphere":
        r = prim.size[0]
        return dx * dx + dy * dy + dz * dz <= r * r
    if prim.kind == "box":
        hx, hy, hz = prim.size
        return (np.abs(dx) <= hx) & (np.abs(dy) <= hy) & (np.abs(dz) <= hz)
    if prim.kind == "cylinder":
        r, hl = prim.size
        a = np.array(prim.axis, dtype=float)
        a /= np.linalg.norm(a)
        along = dx * a[0] + dy * a[1] + dz * a[2]
        perp2 = dx * dx + dy * dy + dz * dz - along * along
        return (np.abs(along) <= hl) & (perp2 <= r * r)
    if prim.kind == "ellipsoid":
        ax, ay, az = prim.size
        return (dx / ax) ** 2 + (dy / ay) ** 2 + (dz / az) ** 2 <= 1.0
    raise ValueError(f"unknown primitive kind {prim.kind!r}")


def make_phantom(spec: PhantomSpec, seed: int = 0) -> Volume:
    """Rasterize a phantom description into a Volume.

    Densities accumulate additively. The seed drives only the optional
    uniform jitter of primitive centers; for fixed (spec, seed) the output
    is bit-identical across runs.
    """
    rng = np.random.default_rng(seed)
    origin = np.array(spec.origin, dtype=float)
    spacing = np.array(spec.spacing, dtype=float)
    dims = np.array(spec.dims)
    lo = origin - 0.5 * spacing
    hi = origin + (dims - 0.5) * spacing

    xs = origin[0] + np.arange(spec.dims[0]) * spacing[0]
    ys = origin[1] + np.arange(spec.dims[1]) * spacing[1]
    zs = origin[2] + np.arange(spec.dims[2]) * spacing[2]
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")

    data = np.zeros(spec.dims, dtype=np.float64)
    for prim in spec.primitives:
        center = np.array(prim.center, dtype=float)
        center = center + rng.uniform(-spec.jitter_mm, spec.jitter_mm, 3)
        ext = prim.extent()
        if np.any(center - ext < lo) or np.any(center + ext > hi):
            raise PrimitiveOutOfBounds(
                f"{prim.kind} at {tuple(center)} exceeds volume extent"
            )
        data[_primitive_mask(prim, center, X, Y, Z)] += prim.density
    return Volume(spec.dims, spec.spacing, origin, data.astype(np.float32))


def _center_of(dims, spacing) -> np.ndarray:
    return (np.array(dims) - 1) * np.array(spacing) / 2.0


def preset_spec(name: str) -> PhantomSpec:
    """Built-in phantom descriptions used by the harness and the tests."""
    if name == "sphere":
        dims = (64, 64, 64)
        c = _center_of(dims, (1, 1, 1))
        return PhantomSpec(
            dims,
            (1.0, 1.0, 1.0),
            (Primitive("sphere", tuple(c), (30.0,), 1.0),),
        )
    if name == "sphere_pair":
        dims = (64, 64, 64)
        c = _center_of(dims, (1, 1, 1))
        return PhantomSpec(
            dims,
            (1.0, 1.0, 1.0),
            (
                Primitive("sphere", tuple(c + (-13.0, 0.0, 0.0)), (16.0,), 1.0),
                Primitive("sphere", tuple(c + (15.0, 6.0, 4.0)), (10.0,), 1.0),
            ),
        )
    if name == "nested_spheres":
        dims = (64, 64, 64)
        c = _center_of(dims, (1, 1, 1))
        return PhantomSpec(
            dims,
            (1.0, 1.0, 1.0),
            (
                Primitive("sphere", tuple(c), (30.0,), 1.0),
                Primitive("sphere", tuple(c), (15.0,), 2.0),
            ),
        )
    if name == "vertebra":
        # Body with a carved canal plus two lateral processes; deliberately
        # asymmetric so no rigid self-symmetry survives.
        dims = (128, 128, 128)
        c = _center_of(dims, (1, 1, 1))
        return PhantomSpec(
            dims,
            (1.0, 1.0, 1.0),
            (
                Primitive("box", tuple(c + (0.0, 0.0, 0.0)), (40.0, 30.0, 25.0), 1.0),
                Primitive(
                    "cylinder",
                    tuple(c + (6.0, 16.0, 0.0)),
                    (8.0, 25.0),
                    -1.0,
                    axis=(0.0, 0.0, 1.0),
                ),
                Primitive("ellipsoid", tuple(c + (46.0, 10.0, 4.0)), (12.0, 16.0, 10.0), 1.0),
                Primitive("ellipsoid", tuple(c + (-46.0, 8.0, -6.0)), (10.0, 13.0, 8.0), 1.0),
            ),
        )
    raise KeyError(f"unknown phantom preset {name!r}")


PRESET_NAMES = ("sphere", "sphere_pair", "nested_spheres", "vertebra")
