"""Single-view 2D/3D rigid registration with point-to-plane correspondences.

The engine renders gradient DRRs from a voxel volume, finds 1-D
correspondences at projected contour points, and solves a weighted
point-to-plane linear system for an SE(3) update until convergence.
"""

from .correspondence import (
    ContourPointSet,
    CorrespondenceSet,
    MatchParams,
    compute_weights,
    match_along_normal,
    oracle_match,
    select_contour_points,
)
from .geometry import (
    MotionVector,
    ProjectionGeometry,
    RigidTransform,
    exp_se3,
)
from .pipeline import (
    EvaluationSample,
    RegistrationConfig,
    RegistrationReport,
    Summary,
    epe,
    mtre,
    reduction_factor,
    register,
    run_single_update_experiment,
    sample_initial_transform,
    summarize,
    view_pose,
)
from .ppc import (
    PpcSystem,
    UpdateDiagnostics,
    build_ppc_rows,
    solve_weighted,
    update_step,
)
from .projector import (
    GradientImage2D,
    Image2D,
    image_gradient,
    render_drr,
    sample_gradient,
)
from .volume import (
    CannyParams,
    PhantomSpec,
    Primitive,
    SurfacePointSet,
    Volume,
    extract_surface_points,
    gradient_field,
    make_phantom,
    preset_spec,
    sample_trilinear,
)

__version__ = "0.1.0"

__all__ = [
    "CannyParams",
    "ContourPointSet",
    "CorrespondenceSet",
    "EvaluationSample",
    "GradientImage2D",
    "Image2D",
    "MatchParams",
    "MotionVector",
    "PhantomSpec",
    "PpcSystem",
    "Primitive",
    "ProjectionGeometry",
    "RegistrationConfig",
    "RegistrationReport",
    "RigidTransform",
    "Summary",
    "SurfacePointSet",
    "UpdateDiagnostics",
    "Volume",
    "build_ppc_rows",
    "compute_weights",
    "epe",
    "exp_se3",
    "extract_surface_points",
    "gradient_field",
    "image_gradient",
    "make_phantom",
    "match_along_normal",
    "mtre",
    "oracle_match",
    "preset_spec",
    "reduction_factor",
    "register",
    "render_drr",
    "run_single_update_experiment",
    "sample_gradient",
    "sample_initial_transform",
    "sample_trilinear",
    "select_contour_points",
    "solve_weighted",
    "summarize",
    "update_step",
    "view_pose",
]
