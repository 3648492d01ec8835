"""Closed-form multi-view ellipsoid estimation (the PfD method).

Each detection constrains the object's dual quadric linearly: for frame f
with camera P_f and dual conic C*_f there is a scale beta_f with
beta_f c*_f = G_f vech(Q*), c*_f = vech(C*_f).  Stacking all frames gives
one homogeneous system M w = 0 in w = (vech(Q*), beta_1..beta_F), solved
by the right singular vector of the smallest singular value.  The primal
quadric follows as |det(Q*)|^(1/3) (Q*)^-1.

Inputs are conditioned before stacking: cameras and conics are mapped by
an isotropic image-plane similarity H (P -> HP, C* -> H C* H^T) chosen so
the union of the detection ellipses spans roughly [-1,1]^2, and every
conic is scaled to a unit-norm vech.  The world-frame dual quadric is
untouched by H, so only the betas need mapping back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientViewsError,
    InvalidInputError,
    MissingCameraError,
    NoFiniteCenterError,
    NotAnEllipseError,
)
from .geometry import (
    CameraProjection,
    Conic,
    DualConic,
    DualQuadric,
    Ellipse2D,
    Ellipsoid3D,
    Quadric,
    adjugate,
    compute_G,
    decompose_quadric,
    dual_conic_from_ellipse,
    ellipse_from_conic,
    sign_normalized,
    vech,
    vech_inv,
)

#: |det| threshold (unit-norm dual) below which primal recovery is refused.
DET_TOL = 1e-14

#: smallest/second-smallest singular value ratio considered ambiguous.
GAP_TOL = 0.99


@dataclass(frozen=True, eq=False)
class ObjectObservations:
    """All 2D detections of one object: (frame_id, DualConic) pairs."""

    object_id: str
    observations: tuple[tuple[int, DualConic], ...]

    def __post_init__(self):
        obs = tuple((int(f), c) for f, c in self.observations)
        if len(obs) < 2:
            raise InsufficientViewsError(
                f"object {self.object_id!r} has {len(obs)} observation(s); need at least 2"
            )
        frames = [f for f, _ in obs]
        if len(set(frames)) != len(frames):
            raise InvalidInputError(f"object {self.object_id!r} has duplicate frame ids")
        for _, c in obs:
            if not isinstance(c, DualConic):
                raise InvalidInputError("observations must carry DualConic values")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "object_id", str(self.object_id))

    @classmethod
    def from_ellipses(
        cls, object_id: str, ellipses: list[tuple[int, Ellipse2D]]
    ) -> "ObjectObservations":
        return cls(
            object_id=object_id,
            observations=tuple((f, dual_conic_from_ellipse(e)) for f, e in ellipses),
        )

    @property
    def frame_ids(self) -> tuple[int, ...]:
        return tuple(f for f, _ in self.observations)


@dataclass(frozen=True, eq=False)
class StackedSystem:
    """The homogeneous system M w = 0 for one object.

    ``matrix`` is 6F x (10+F): block row f holds G_f in columns 0..9 and
    -c*_f in column 10+f, zeros elsewhere.  ``beta_factors`` maps solved
    betas back to the caller's conic scales (multiply), undoing both the
    conditioning similarity and the per-conic normalization.
    """

    matrix: np.ndarray
    frame_ids: tuple[int, ...]
    beta_factors: np.ndarray
    conditioner: np.ndarray = field(default_factory=lambda: np.eye(3))

    @property
    def n_frames(self) -> int:
        return len(self.frame_ids)


@dataclass(frozen=True, eq=False)
class ClosedFormSolution:
    """SVD solution of a stacked system.

    ``betas`` are expressed against the caller's input conics;
    ``betas_internal`` against the conditioned unit-norm conics actually
    inside M (these pair with ``dual_quadric`` as the unit singular
    vector, which downstream refinement needs).  ``primal`` is None when
    the dual was numerically singular.
    """

    object_id: str
    dual_quadric: DualQuadric
    primal: Quadric | None
    ellipsoid: Ellipsoid3D
    betas: np.ndarray
    betas_internal: np.ndarray
    residual: float
    gap: float
    frame_ids: tuple[int, ...]
    warnings: tuple[str, ...] = ()


# Target half-width of the detection union box after conditioning.  The
# value trades closed-form noise robustness against fidelity: at 1.0 the
# conic entries are fully balanced and the SVD solve tolerates detection
# errors far better than the unbalanced pixel-scale system, at ~0.4 it
# keeps exact solves at full precision while preserving the documented
# failure mode of the unregularized solver under large detection shifts
# (which the regularized solver is there to fix).
CONDITIONING_HALF_EXTENT = 0.4


def _conditioning_similarity(observations) -> np.ndarray:
    """Isotropic similarity centering the union of detection extents.

    Maps the union box of all detections to [-k, k]^2 with
    k = CONDITIONING_HALF_EXTENT.
    """
    lo = np.array([np.inf, np.inf])
    hi = np.array([-np.inf, -np.inf])
    for _, dual in observations:
        try:
            e = ellipse_from_conic(Conic(adjugate(dual.matrix)))
        except (NotAnEllipseError, InvalidInputError):
            continue
        r = e.semi_axes[0]
        lo = np.minimum(lo, e.center - r)
        hi = np.maximum(hi, e.center + r)
    if not np.all(np.isfinite(lo)):
        return np.eye(3)
    span = float(np.max(hi - lo))
    s = 2.0 * CONDITIONING_HALF_EXTENT / span if span > 0 else 1.0
    c = 0.5 * (lo + hi)
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def build_system(
    obs: ObjectObservations,
    cameras: dict[int, CameraProjection],
    condition: bool = True,
) -> StackedSystem:
    """Assemble the 6F x (10+F) homogeneous system for one object.

    Raises:
        MissingCameraError: an observation's frame has no camera.
    """
    for f in obs.frame_ids:
        if f not in cameras:
            raise MissingCameraError(f"no camera projection for frame {f}")

    h = _conditioning_similarity(obs.observations) if condition else np.eye(3)
    n = len(obs.observations)
    m = np.zeros((6 * n, 10 + n))
    factors = np.empty(n)
    for k, (f, dual) in enumerate(obs.observations):
        cam = cameras[f]
        p_mat = h @ cam.matrix
        # unit-norm cameras keep G entries O(1); the betas absorb the scale
        p_norm = np.linalg.norm(p_mat)
        p_cond = CameraProjection(p_mat / p_norm, frame_id=cam.frame_id)
        c_raw = h @ dual.matrix @ h.T
        c_raw = 0.5 * (c_raw + c_raw.T)
        c_cond = sign_normalized(c_raw)
        sigma = 1.0 if np.array_equal(c_cond, c_raw) else -1.0
        cvec = vech(c_cond)
        norm = np.linalg.norm(cvec)
        if norm == 0.0:
            raise InvalidInputError(f"zero dual conic in frame {f}")
        m[6 * k : 6 * k + 6, 0:10] = compute_G(p_cond)
        m[6 * k : 6 * k + 6, 10 + k] = -cvec / norm
        factors[k] = sigma * p_norm**2 / norm
    return StackedSystem(matrix=m, frame_ids=obs.frame_ids, beta_factors=factors, conditioner=h)


def primal_from_dual(qstar: np.ndarray) -> np.ndarray:
    """Primal quadric |det(Q*)|^(1/3) (Q*)^-1 of an invertible dual matrix."""
    det = np.linalg.det(qstar)
    if det == 0.0:
        raise InvalidInputError("dual quadric is singular; no primal exists")
    return np.abs(det) ** (1.0 / 3.0) * np.linalg.inv(qstar)


def solve_svd(system: StackedSystem, object_id: str = "") -> ClosedFormSolution:
    """Null-vector solve of M w = 0 plus primal recovery and decomposition.

    Never raises for degenerate geometry: singular duals and non-ellipsoid
    primals come back as invalid ellipsoids with a warning attached.
    """
    m = system.matrix
    n = system.n_frames
    warnings: list[str] = []
    if n == 2:
        warnings.append("ill_posed_two_views")

    _, s, vt = np.linalg.svd(m, full_matrices=False)
    w = vt[-1]
    residual = float(s[-1])
    gap = float(s[-1] / s[-2]) if s[-2] > 0 else 1.0
    # ambiguous when the two smallest singular values nearly tie, or when
    # both vanish (solution family of dimension >= 2, e.g. exact two views)
    if gap > GAP_TOL or s[-2] <= 1e-8 * s[0]:
        warnings.append("ambiguous_solution")

    v = w[:10]
    betas_int = w[10:]
    vnorm = np.linalg.norm(v)

    primal: Quadric | None = None
    ellipsoid = Ellipsoid3D.invalid()
    if vnorm < 1e-12 or abs(np.linalg.det(vech_inv(v / max(vnorm, 1e-300), 4))) < DET_TOL:
        warnings.append("primal_recovery_failed")
    else:
        qstar = vech_inv(v, 4)
        primal_raw = primal_from_dual(qstar)
        primal_fixed = sign_normalized(primal_raw)
        if not np.array_equal(primal_fixed, primal_raw):
            # flip the whole singular vector so the primal follows the
            # trace convention; homogeneous, so nothing else changes
            w = -w
            v = w[:10]
            betas_int = w[10:]
        primal = Quadric(primal_fixed)
        try:
            ellipsoid = decompose_quadric(primal)
        except NoFiniteCenterError:
            warnings.append("no_finite_center")
            ellipsoid = Ellipsoid3D.invalid()

    return ClosedFormSolution(
        object_id=object_id,
        dual_quadric=DualQuadric(vech_inv(v, 4)),
        primal=primal,
        ellipsoid=ellipsoid,
        betas=betas_int * system.beta_factors,
        betas_internal=betas_int,
        residual=residual,
        gap=gap,
        frame_ids=system.frame_ids,
        warnings=tuple(warnings),
    )


def fit_pfd(
    obs: ObjectObservations,
    cameras: dict[int, CameraProjection],
    condition: bool = True,
) -> ClosedFormSolution:
    """Convenience wrapper: build the stacked system and solve it."""
    return solve_svd(build_system(obs, cameras, condition=condition), object_id=obs.object_id)
