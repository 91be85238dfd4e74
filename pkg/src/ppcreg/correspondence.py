"""Contour-point selection, 1-D correspondence search along the gradient
normal, and correspondence weighting.

Matching is restricted to the direction of the projected gradient: motion
along an image contour is unobservable from a single view, so only the
normal component of the 2D displacement is searched for.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateWeights
from .geometry import MIN_SOURCE_DISTANCE_MM, ProjectionGeometry, RigidTransform
from .projector import GradientImage2D, bilinear_sample
from .volume import SurfacePointSet

_MATCH_CHUNK = 256
_VAR_EPS = 1e-12


@dataclass(frozen=True)
class ContourPointSet:
    """Surface points visible as contours under the current pose.

    w, g live in the volume frame; p are the projections under that pose and
    n2d the unit image-plane search directions.
    """

    w: np.ndarray
    g: np.ndarray
    p: np.ndarray
    n2d: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=float).reshape(-1, 3)
        g = np.ascontiguousarray(self.g, dtype=float).reshape(-1, 3)
        p = np.ascontiguousarray(self.p, dtype=float).reshape(-1, 2)
        n2d = np.ascontiguousarray(self.n2d, dtype=float).reshape(-1, 2)
        if not (len(w) == len(g) == len(p) == len(n2d)):
            raise ValueError("field lengths differ")
        if len(n2d):
            if np.abs(np.linalg.norm(n2d, axis=1) - 1.0).max() > 1e-6:
                raise ValueError("n2d must be unit vectors")
        for a in (w, g, p, n2d):
            a.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "n2d", n2d)

    def __len__(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched displacements dp with validity flags and solver weights."""

    base: ContourPointSet
    dp: np.ndarray
    p_prime: np.ndarray
    score: np.ndarray
    valid: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        n = len(self.base)
        dp = np.ascontiguousarray(self.dp, dtype=float).reshape(n, 2)
        pp = np.ascontiguousarray(self.p_prime, dtype=float).reshape(n, 2)
        score = np.ascontiguousarray(self.score, dtype=float).reshape(n)
        valid = np.ascontiguousarray(self.valid, dtype=bool).reshape(n)
        weight = np.ascontiguousarray(self.weight, dtype=float).reshape(n)
        if np.any(weight[~valid] != 0.0):
            raise ValueError("invalid correspondences must carry zero weight")
        if np.any(weight < 0):
            raise ValueError("weights must be non-negative")
        for a in (dp, pp, score, valid, weight):
            a.flags.writeable = False
        object.__setattr__(self, "dp", dp)
        object.__setattr__(self, "p_prime", pp)
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "weight", weight)

    def __len__(self) -> int:
        return len(self.base)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


def select_contour_points(
    s: SurfacePointSet,
    pose: RigidTransform,
    geom: ProjectionGeometry,
    eps: float = 0.1,
) -> ContourPointSet:
    """Keep surface points whose gradient is nearly perpendicular to the ray.

    A point survives when |g_cam . r_hat| < eps, projects in front of the
    source and inside the detector. n2d is the projected direction of the
    gradient component orthogonal to the viewing ray.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    if len(s) == 0:
        return ContourPointSet(
            np.empty((0, 3)), np.empty((0, 3)), np.empty((0, 2)), np.empty((0, 2))
        )

    x = pose.apply(s.points)
    g_cam = s.gradients @ pose.rotation.T
    in_front = x[:, 2] > MIN_SOURCE_DISTANCE_MM
    r = np.zeros_like(x)
    r[in_front] = x[in_front] / np.linalg.norm(x[in_front], axis=1, keepdims=True)
    cos_view = np.abs(np.sum(g_cam * r, axis=1))
    keep = in_front & (cos_view < eps)
    if not keep.any():
        return ContourPointSet(
            np.empty((0, 3)), np.empty((0, 3)), np.empty((0, 2)), np.empty((0, 2))
        )

    x = x[keep]
    g_cam = g_cam[keep]
    r = r[keep]
    p = geom.project(x)
    inside = geom.contains(p)

    x, g_cam, r, p = x[inside], g_cam[inside], r[inside], p[inside]
    w = s.points[keep][inside]
    g = s.gradients[keep][inside]

    # Image-plane direction of the gradient: remove the ray component, then
    # push through the projection Jacobian at x.
    g_perp = g_cam - np.sum(g_cam * r, axis=1, keepdims=True) * r
    su, sv = geom.pixel_spacing
    z = x[:, 2]
    du = geom.sdd / (z * su) * g_perp[:, 0] - x[:, 0] * geom.sdd / (z * z * su) * g_perp[:, 2]
    dv = geom.sdd / (z * sv) * g_perp[:, 1] - x[:, 1] * geom.sdd / (z * z * sv) * g_perp[:, 2]
    n2d = np.stack([du, dv], axis=1)
    norms = np.linalg.norm(n2d, axis=1)
    ok = norms > 1e-12
    n2d = n2d[ok] / norms[ok, None]
    return ContourPointSet(w[ok], g[ok], p[ok], n2d)


@dataclass(frozen=True)
class MatchParams:
    search_radius: int = 20
    patch_half_width: int = 5
    min_score: float = 0.3

    def __post_init__(self):
        if self.search_radius < 1 or self.patch_half_width < 1:
            raise ValueError("search radius and patch half-width must be >= 1")


def _patch_offsets(h: int) -> np.ndarray:
    rng = np.arange(-h, h + 1, dtype=float)
    ou, ov = np.meshgrid(rng, rng)
    return np.stack([ou.ravel(), ov.ravel()], axis=-1)


def _ncc(template: np.ndarray, cand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """NCC of (N, P) templates against (N, K, P) candidates -> (N, K) scores.

    Flat templates are flagged; flat candidates score -1 so they never win.
    """
    t0 = template - template.mean(axis=1, keepdims=True)
    c0 = cand - cand.mean(axis=2, keepdims=True)
    t_ss = np.sum(t0 * t0, axis=1)
    c_ss = np.sum(c0 * c0, axis=2)
    num = np.einsum("np,nkp->nk", t0, c0)
    den = np.sqrt(t_ss[:, None] * c_ss)
    textured = t_ss > _VAR_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(den > _VAR_EPS, num / np.maximum(den, _VAR_EPS), -1.0)
    scores = np.clip(scores, -1.0, 1.0)
    return scores, textured


def match_along_normal(
    c: ContourPointSet,
    grad_drr: GradientImage2D,
    grad_flr: GradientImage2D,
    params: MatchParams = MatchParams(),
) -> CorrespondenceSet:
    """1-D NCC search along each contour normal.

    Gradient-magnitude patches of half-width h around p_i in the DRR are
    compared against patches at p_i + k*n2d_i in the fluoro image for
    integer k in [-R, R]; the best integer offset is refined by a parabola
    fit over its neighbours (clamped to +-0.5 px). Ties prefer the smallest
    |k|, then the negative offset. A peak at the edge of the search range
    cannot be refined and usually means the true displacement is out of
    range, so such matches are flagged invalid.
    """
    n = len(c)
    if n == 0:
        empty = np.empty((0,))
        return CorrespondenceSet(c, np.empty((0, 2)), np.empty((0, 2)), empty, empty.astype(bool), empty)

    mag_d = grad_drr.magnitude()
    mag_f = grad_flr.magnitude()
    offsets = _patch_offsets(params.patch_half_width)
    ks = np.arange(-params.search_radius, params.search_radius + 1, dtype=float)
    n_k = len(ks)

    k_best = np.zeros(n)
    best = np.full(n, -1.0)
    textured_all = np.zeros(n, dtype=bool)
    interior_all = np.zeros(n, dtype=bool)
    # Tiny |k| penalty: breaks exact score ties deterministically toward the
    # smallest offset without disturbing genuinely different scores.
    tie_pen = np.abs(ks) * 1e-9

    for lo in range(0, n, _MATCH_CHUNK):
        sl = slice(lo, min(lo + _MATCH_CHUNK, n))
        p = c.p[sl]
        n2d = c.n2d[sl]
        template = bilinear_sample(mag_d, p[:, None, :] + offsets[None, :, :])
        centers = p[:, None, :] + ks[None, :, None] * n2d[:, None, :]
        cand = bilinear_sample(
            mag_f, centers[:, :, None, :] + offsets[None, None, :, :]
        )
        scores, textured = _ncc(template, cand)
        pick = np.argmax(scores - tie_pen[None, :], axis=1)
        rows = np.arange(scores.shape[0])
        s_best = scores[rows, pick]

        # Parabola refinement at interior maxima only. A peak at the NCC
        # ceiling certifies a perfect match (Cauchy-Schwarz), so refining it
        # would only chase asymmetry in the falloff; leave it at the integer.
        k_ref = ks[pick].copy()
        interior = (pick > 0) & (pick < n_k - 1)
        if interior.any():
            ri = rows[interior]
            pi = pick[interior]
            s_m = scores[ri, pi - 1]
            s_0 = scores[ri, pi]
            s_p = scores[ri, pi + 1]
            denom = s_m - 2.0 * s_0 + s_p
            refine = (denom < -_VAR_EPS) & (s_0 < 1.0 - 1e-12)
            safe = np.where(refine, denom, -1.0)
            delta = np.where(refine, 0.5 * (s_m - s_p) / safe, 0.0)
            k_ref[interior] += np.clip(delta, -0.5, 0.5)

        k_best[sl] = k_ref
        best[sl] = s_best
        textured_all[sl] = textured
        interior_all[sl] = interior

    dp = k_best[:, None] * c.n2d
    p_prime = c.p + dp
    inside = (
        (p_prime[:, 0] >= 0.0)
        & (p_prime[:, 0] <= grad_flr.width - 1.0)
        & (p_prime[:, 1] >= 0.0)
        & (p_prime[:, 1] <= grad_flr.height - 1.0)
    )
    valid = textured_all & interior_all & (best >= params.min_score) & inside
    weight = valid.astype(float)
    return CorrespondenceSet(c, dp, p_prime, best, valid, weight)


def oracle_match(
    c: ContourPointSet, t_gt: RigidTransform, geom: ProjectionGeometry
) -> CorrespondenceSet:
    """Ground-truth correspondences: p' is the projection of w under t_gt.

    Used to separate solver and geometry behaviour from matching quality.
    """
    n = len(c)
    if n == 0:
        empty = np.empty((0,))
        return CorrespondenceSet(c, np.empty((0, 2)), np.empty((0, 2)), empty, empty.astype(bool), empty)
    x_gt = t_gt.apply(c.w)
    in_front = x_gt[:, 2] > MIN_SOURCE_DISTANCE_MM
    p_prime = c.p.copy()
    if in_front.any():
        p_prime[in_front] = geom.project(x_gt[in_front])
    inside = geom.contains(p_prime)
    valid = in_front & inside
    dp = p_prime - c.p
    dp[~valid] = 0.0
    p_prime = c.p + dp
    score = np.where(valid, 1.0, -1.0)
    return CorrespondenceSet(c, dp, p_prime, score, valid, valid.astype(float))


def compute_weights(
    c: CorrespondenceSet,
    strategy: str = "score",
    gamma: float = 2.0,
    pose: RigidTransform | None = None,
    geom: ProjectionGeometry | None = None,
) -> CorrespondenceSet:
    """Assign solver weights to correspondences.

    uniform:    1 for valid matches.
    score:      max(score, 0) ** gamma.
    score_irls: score weights scaled by a Huber factor computed from the
                residuals of one unweighted pre-solve (delta = 1.345 * MAD).
    Invalid correspondences always get weight 0. Raises DegenerateWeights
    when nothing retains positive weight.
    """
    valid = c.valid
    if strategy == "uniform":
        w = valid.astype(float)
    elif strategy in ("score", "score_irls"):
        w = np.where(valid, np.maximum(c.score, 0.0) ** gamma, 0.0)
        if strategy == "score_irls":
            if pose is None or geom is None:
                raise ValueError("score_irls weighting needs pose and geom")
            w = _huber_rescale(c, w, pose, geom)
    else:
        raise ValueError(f"unknown weighting strategy {strategy!r}")

    if not np.any(w > 0):
        raise DegenerateWeights(f"no correspondence retains positive weight ({strategy})")
    return replace(c, weight=w)


def _huber_rescale(
    c: CorrespondenceSet, w: np.ndarray, pose: RigidTransform, geom: ProjectionGeometry
) -> np.ndarray:
    # Local import: the row builder lives one layer up.
    from .ppc import build_ppc_rows, solve_weighted

    sys = build_ppc_rows(c, pose, geom)
    flat = replace(sys, w=np.ones_like(sys.w))
    dv, _ = solve_weighted(flat)
    r = sys.A @ dv.as_array() - sys.b
    med = np.median(r)
    mad = np.median(np.abs(r - med))
    delta = 1.345 * mad
    if delta <= 1e-12:
        return w
    factor = np.minimum(1.0, delta / np.maximum(np.abs(r), 1e-300))
    out = w.copy()
    out[c.valid] *= factor
    return out
