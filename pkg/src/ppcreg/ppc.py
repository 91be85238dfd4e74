"""Point-to-plane constraint system: row construction, weighted closed-form
solve, and the full single-iteration update operator.

Each valid correspondence constrains the moved 3D contour point to a plane
through the X-ray source, the matched detector point, and the 3D lift of the
contour tangent. Linearizing the motion as dx = omega x x + t gives one row

    [ (x_i x n_i)^T  n_i^T ] . (omega, t) = -n_i . x_i

per correspondence, solved in weighted least squares for the 6-vector dv.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass

import numpy as np

from .correspondence import (
    CorrespondenceSet,
    compute_weights,
    match_along_normal,
    oracle_match,
    select_contour_points,
)
from .errors import DegenerateWeights, EmptySystem
from .geometry import MotionVector, ProjectionGeometry, RigidTransform, exp_se3
from .projector import GradientImage2D, image_gradient, render_drr
from .volume import SurfacePointSet, Volume

if typing.TYPE_CHECKING:
    from .pipeline import RegistrationConfig

DEFAULT_RCOND = 1e-10


@dataclass(frozen=True)
class PpcSystem:
    """Stacked constraint rows: A (N, 6), b (N,) in mm, weights w (N,) >= 0."""

    A: np.ndarray
    b: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=float)
        b = np.ascontiguousarray(self.b, dtype=float).reshape(-1)
        w = np.ascontiguousarray(self.w, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[1] != 6 or A.shape[0] != len(b) or len(b) != len(w):
            raise ValueError("inconsistent system shapes")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(w))):
            raise ValueError("system entries must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        for a in (A, b, w):
            a.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return len(self.b)


@dataclass(frozen=True)
class SolveInfo:
    rank: int
    condition_number: float


@dataclass(frozen=True)
class UpdateDiagnostics:
    n_contour: int
    n_valid: int
    condition_number: float
    motion_norm: tuple[float, float]
    solver_rank: int
    updated: bool


def plane_normal_for(
    p_prime: np.ndarray, n2d: np.ndarray, geom: ProjectionGeometry
) -> np.ndarray:
    """Unit normals of the source/match/tangent planes for (N, 2) inputs."""
    d = geom.backproject(p_prime)
    su, sv = geom.pixel_spacing
    tangent2d = np.stack([-n2d[:, 1], n2d[:, 0]], axis=1)
    t3 = np.stack(
        [tangent2d[:, 0] * su, tangent2d[:, 1] * sv, np.zeros(len(n2d))], axis=1
    )
    n = np.cross(d, t3)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def build_ppc_rows(
    c: CorrespondenceSet, pose: RigidTransform, geom: ProjectionGeometry
) -> PpcSystem:
    """Assemble one constraint row per valid correspondence.

    The plane passes through the source (the camera origin), so the offset
    term is b_i = -n_i . x_i with x_i the contour point in the camera frame.
    """
    vi = np.flatnonzero(c.valid)
    if len(vi) == 0:
        raise EmptySystem("no valid correspondence to build rows from")
    x = pose.apply(c.base.w[vi])
    n = plane_normal_for(c.p_prime[vi], c.base.n2d[vi], geom)
    A = np.hstack([np.cross(x, n), n])
    b = -np.sum(n * x, axis=1)
    return PpcSystem(A, b, c.weight[vi])


def solve_weighted(
    sys: PpcSystem, rcond: float = DEFAULT_RCOND
) -> tuple[MotionVector, SolveInfo]:
    """Weighted least-squares motion via truncated SVD.

    Minimizes ||diag(w) (A dv - b)||. Columns are scaled to unit norm before
    the decomposition (rotation columns carry mm^2-scale entries, translation
    columns are unit normals) and the scaling is undone afterwards. Singular
    values below rcond * sigma_max are truncated; rank-deficient systems
    return the minimal-norm solution in the scaled variables.
    """
    if not np.any(sys.w > 0):
        raise EmptySystem("system has no positively weighted row")
    M = sys.A * sys.w[:, None]
    y = sys.b * sys.w
    col = np.linalg.norm(M, axis=0)
    col = np.where(col > 0, col, 1.0)
    sol, _, rank, sv = np.linalg.lstsq(M / col, y, rcond=rcond)
    dv = sol / col
    if len(sv) and sv[-1] > 0:
        cond = float(sv[0] / sv[-1])
    else:
        cond = float("inf")
    return MotionVector.from_array(dv), SolveInfo(int(rank), cond)


def _clip_motion(
    dv: MotionVector, max_rot: float | None, max_trans: float | None
) -> MotionVector:
    """Scale dv onto the trust-region boundary when it exceeds the limits."""
    w_norm, t_norm = dv.norms()
    scale = 1.0
    if max_rot is not None and w_norm > max_rot:
        scale = min(scale, max_rot / w_norm)
    if max_trans is not None and t_norm > max_trans:
        scale = min(scale, max_trans / t_norm)
    if scale >= 1.0:
        return dv
    return MotionVector(dv.omega * scale, dv.t * scale)


def update_step(
    surface: SurfacePointSet,
    pose: RigidTransform,
    v: Volume,
    geom: ProjectionGeometry,
    config: "RegistrationConfig",
    grad_flr: GradientImage2D | None = None,
    t_gt: RigidTransform | None = None,
) -> tuple[RigidTransform, UpdateDiagnostics]:
    """One registration iteration: contours, matches, weights, solve, update.

    With the image matcher this renders the DRR at the current pose and
    matches its gradient against the cached fluoro gradient. With the oracle
    matcher the matched points are the ground-truth projections and no
    rendering is needed. A failed iteration (no valid correspondence or all
    weights zero) returns the pose unchanged with updated=False.
    """
    contours = select_contour_points(surface, pose, geom, config.contour_eps)
    if config.matcher == "oracle":
        if t_gt is None:
            raise ValueError("oracle matching requires the ground-truth pose")
        corr = oracle_match(contours, t_gt, geom)
    elif config.matcher == "image":
        if grad_flr is None:
            raise ValueError("image matching requires the fluoro gradient")
        drr = render_drr(v, pose, geom, config.drr_step)
        grad_drr = image_gradient(drr)
        corr = match_along_normal(contours, grad_drr, grad_flr, config.matching)
    else:
        raise ValueError(f"unknown matcher {config.matcher!r}")

    n_valid = corr.n_valid
    try:
        corr = compute_weights(corr, config.weighting, pose=pose, geom=geom)
        system = build_ppc_rows(corr, pose, geom)
        dv, info = solve_weighted(system, config.rcond)
    except (EmptySystem, DegenerateWeights):
        diag = UpdateDiagnostics(len(contours), n_valid, float("inf"), (0.0, 0.0), 0, False)
        return pose, diag

    dv = _clip_motion(dv, config.max_step_rot, config.max_step_trans)
    new_pose = exp_se3(dv).compose(pose)
    diag = UpdateDiagnostics(
        len(contours), n_valid, info.condition_number, dv.norms(), info.rank, True
    )
    return new_pose, diag
