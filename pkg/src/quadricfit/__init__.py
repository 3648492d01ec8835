"""quadricfit: 3D ellipsoid localisation from multi-view 2D detections."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    DegenerateMaskError,
    DegenerateProjectionError,
    InitializationError,
    InsufficientViewsError,
    InvalidInputError,
    MissingCameraError,
    NoFiniteCenterError,
    NormalizationError,
    NotAnEllipseError,
    QuadricFitError,
)
from .geometry import (
    BoundingBox,
    CameraProjection,
    Conic,
    DualConic,
    DualQuadric,
    Ellipse2D,
    Ellipsoid3D,
    Quadric,
    adjugate,
    compose_quadric,
    compute_G,
    conic_from_ellipse,
    decompose_quadric,
    dual_conic_from_ellipse,
    duplication_matrices,
    ellipse_from_bbox,
    ellipse_from_conic,
    fold_angle,
    outline_ellipse,
    project_quadric,
    vech,
    vech_inv,
)
from .closed_form import (
    ClosedFormSolution,
    StackedSystem,
    ObjectObservations,
    build_system,
    fit_pfd,
    primal_from_dual,
    solve_svd,
)
from .regularized import (
    RegularizedProblem,
    RegularizedSolution,
    fit_pfd_reg,
    make_regularized_problem,
    solve_regularized,
)
from .mask_fitting import BinaryMask, load_mask, moments_ellipse
from .metrics import (
    EvalReport,
    ObjectEval,
    OverlapEstimate,
    centroid_success,
    evaluate,
    orientation_error,
    volume_overlap,
    volume_overlap_detail,
)
from .synthetic import (
    PerturbationSpec,
    ScenarioConfig,
    SweepResult,
    SweepRow,
    generate_scene,
    lookat_camera,
    perturb_ellipse,
    project_gt_ellipse,
    run_sweep,
)
from .files import Scene, load_results, load_scene, result_entry, results_payload

__all__ = [
    "__version__",
    "QuadricFitError",
    "InvalidInputError",
    "NotAnEllipseError",
    "DegenerateProjectionError",
    "NoFiniteCenterError",
    "MissingCameraError",
    "InsufficientViewsError",
    "NormalizationError",
    "InitializationError",
    "DegenerateMaskError",
    "BoundingBox",
    "Ellipse2D",
    "Conic",
    "DualConic",
    "Quadric",
    "DualQuadric",
    "CameraProjection",
    "Ellipsoid3D",
    "ellipse_from_bbox",
    "conic_from_ellipse",
    "ellipse_from_conic",
    "dual_conic_from_ellipse",
    "outline_ellipse",
    "adjugate",
    "vech",
    "vech_inv",
    "duplication_matrices",
    "compute_G",
    "project_quadric",
    "decompose_quadric",
    "compose_quadric",
    "fold_angle",
    "ObjectObservations",
    "StackedSystem",
    "ClosedFormSolution",
    "build_system",
    "solve_svd",
    "primal_from_dual",
    "fit_pfd",
    "RegularizedProblem",
    "RegularizedSolution",
    "make_regularized_problem",
    "solve_regularized",
    "fit_pfd_reg",
    "BinaryMask",
    "load_mask",
    "moments_ellipse",
    "OverlapEstimate",
    "ObjectEval",
    "EvalReport",
    "volume_overlap",
    "volume_overlap_detail",
    "orientation_error",
    "centroid_success",
    "evaluate",
    "ScenarioConfig",
    "PerturbationSpec",
    "SweepRow",
    "SweepResult",
    "generate_scene",
    "lookat_camera",
    "project_gt_ellipse",
    "perturb_ellipse",
    "run_sweep",
    "Scene",
    "load_scene",
    "load_results",
    "result_entry",
    "results_payload",
]
