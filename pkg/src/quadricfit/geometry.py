"""Homogeneous conic/quadric types and exact algebraic conversions.

Conventions
-----------
* Conic: symmetric 3x3 matrix C, defined up to scale, boundary points
  satisfy u^T C u = 0 (u homogeneous).  Ellipse conics are built so that
  interior points give a negative value.
* Quadric: symmetric 4x4 matrix Q with x^T Q x = 0.  The dual (envelope)
  form of a conic or quadric is the adjugate of the primal matrix.
* vech serializes the lower triangle column by column, so for a 4x4
  matrix the tenth element is the (4,4) entry.  vec is column-major,
  matching vec(A X A^T) = (A kron A) vec(X).
* Homogeneous matrices are sign-normalized so the trace of the leading
  principal submatrix is >= 0 (tie: first nonzero vech element positive).

All functions are pure and all types are treated as immutable, so values
may be shared freely across threads.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateProjectionError,
    InvalidInputError,
    NoFiniteCenterError,
    NotAnEllipseError,
)

#: Relative tolerance (Frobenius) for symmetry and validity checks.
SYMMETRY_TOL = 1e-9

#: Relative eigenvalue ratio below which a principal block counts as singular.
SINGULARITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# construction helpers
# ---------------------------------------------------------------------------


def _as_array(value, shape: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.shape != shape:
        raise InvalidInputError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def _check_symmetric(m: np.ndarray, name: str, tol: float = SYMMETRY_TOL) -> np.ndarray:
    scale = np.linalg.norm(m)
    if scale == 0.0:
        raise InvalidInputError(f"{name} is identically zero")
    if np.linalg.norm(m - m.T) > tol * scale:
        raise InvalidInputError(f"{name} is not symmetric within tolerance {tol}")
    return 0.5 * (m + m.T)


def sign_normalized(m: np.ndarray) -> np.ndarray:
    """Flip the sign of a homogeneous matrix to the package convention.

    The trace of the leading (n-1)x(n-1) principal submatrix is made
    nonnegative; an exactly zero trace falls back to making the first
    nonzero vech element positive.
    """
    n = m.shape[0]
    lead = np.trace(m[: n - 1, : n - 1])
    if lead > 0:
        return m
    if lead < 0:
        return -m
    v = vech(m)
    nz = np.nonzero(v)[0]
    if nz.size and v[nz[0]] < 0:
        return -m
    return m


def fold_angle(angle: float) -> float:
    """Fold an undirected-axis angle into (-pi/2, pi/2]."""
    a = math.remainder(float(angle), math.pi)
    if a <= -math.pi / 2:
        a += math.pi
    return a


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundingBox:
    """Axis-aligned 2D detection box: width/height in pixels plus center."""

    width: float
    height: float
    center: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.width) and self.width > 0):
            raise InvalidInputError(f"bounding box width must be positive, got {self.width}")
        if not (math.isfinite(self.height) and self.height > 0):
            raise InvalidInputError(f"bounding box height must be positive, got {self.height}")
        object.__setattr__(self, "center", _as_array(self.center, (2,), "center"))


@dataclass(frozen=True, eq=False)
class Ellipse2D:
    """2D ellipse: center, semi-axes (l1, l2) and orientation of the first axis.

    The angle is folded into (-pi/2, pi/2] on construction; axes are
    undirected so this loses nothing.
    """

    center: np.ndarray
    semi_axes: np.ndarray
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", _as_array(self.center, (2,), "center"))
        axes = _as_array(self.semi_axes, (2,), "semi_axes")
        if np.any(axes <= 0):
            raise InvalidInputError(f"semi-axes must be positive, got {axes}")
        object.__setattr__(self, "semi_axes", axes)
        if not math.isfinite(self.angle):
            raise InvalidInputError("angle must be finite")
        object.__setattr__(self, "angle", fold_angle(self.angle))


@dataclass(frozen=True, eq=False)
class Conic:
    """Primal conic: symmetric 3x3 homogeneous matrix, up to scale."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_array(self.matrix, (3, 3), "conic matrix")
        object.__setattr__(self, "matrix", _check_symmetric(m, "conic matrix"))


@dataclass(frozen=True, eq=False)
class DualConic:
    """Envelope (tangent-line) conic: adjugate of the primal, up to scale."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_array(self.matrix, (3, 3), "dual conic matrix")
        object.__setattr__(self, "matrix", _check_symmetric(m, "dual conic matrix"))


@dataclass(frozen=True, eq=False)
class Quadric:
    """Primal quadric: symmetric 4x4 homogeneous matrix, up to scale.

    Sign-normalized on construction so the trace of the 3x3 principal
    submatrix is nonnegative.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_array(self.matrix, (4, 4), "quadric matrix")
        m = _check_symmetric(m, "quadric matrix")
        object.__setattr__(self, "matrix", sign_normalized(m))


@dataclass(frozen=True, eq=False)
class DualQuadric:
    """Envelope (tangent-plane) quadric: symmetric 4x4, up to scale."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_array(self.matrix, (4, 4), "dual quadric matrix")
        object.__setattr__(self, "matrix", _check_symmetric(m, "dual quadric matrix"))

    @property
    def vech(self) -> np.ndarray:
        return vech(self.matrix)


@dataclass(frozen=True, eq=False)
class CameraProjection:
    """World-to-image 3x4 projection matrix tagged with a frame id."""

    matrix: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        p = _as_array(self.matrix, (3, 4), "projection matrix")
        if np.linalg.matrix_rank(p) != 3:
            raise InvalidInputError("projection matrix must have rank 3")
        object.__setattr__(self, "matrix", p)
        object.__setattr__(self, "frame_id", int(self.frame_id))


@dataclass(frozen=True, eq=False)
class Ellipsoid3D:
    """Decomposed quadric: center, semi-axes (descending) and axis rotation.

    When ``valid`` is false the quadric was not a real ellipsoid;
    ``semi_axes`` and ``rotation`` are None and the enclosed volume is
    defined as zero.  ``center`` may still be present for such quadrics
    (whenever the 3x3 block was invertible).
    """

    center: np.ndarray | None
    semi_axes: np.ndarray | None = None
    rotation: np.ndarray | None = None
    valid: bool = False

    def __post_init__(self):
        if self.center is not None:
            object.__setattr__(self, "center", _as_array(self.center, (3,), "center"))
        if not self.valid:
            if self.semi_axes is not None or self.rotation is not None:
                raise InvalidInputError("invalid ellipsoid must not carry axes or rotation")
            return
        if self.center is None:
            raise InvalidInputError("valid ellipsoid requires a center")
        axes = _as_array(self.semi_axes, (3,), "semi_axes")
        if np.any(axes <= 0):
            raise InvalidInputError(f"semi-axes must be positive, got {axes}")
        if np.any(np.diff(axes) > 0):
            raise InvalidInputError("semi-axes must be sorted in descending order")
        object.__setattr__(self, "semi_axes", axes)
        rot = _as_array(self.rotation, (3, 3), "rotation")
        if np.linalg.norm(rot.T @ rot - np.eye(3)) > 1e-9:
            raise InvalidInputError("rotation must be orthonormal within 1e-9")
        if np.linalg.det(rot) < 0:
            raise InvalidInputError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)

    @classmethod
    def make(cls, center, semi_axes, rotation) -> "Ellipsoid3D":
        """Build a valid ellipsoid, sorting axes descending and fixing the basis.

        Rotation columns are permuted together with the axes and the last
        column is flipped if needed to keep determinant +1.
        """
        axes = _as_array(semi_axes, (3,), "semi_axes")
        rot = _as_array(rotation, (3, 3), "rotation")
        order = np.argsort(-axes, kind="stable")
        axes = axes[order]
        rot = rot[:, order]
        if np.linalg.det(rot) < 0:
            rot = rot.copy()
            rot[:, 2] = -rot[:, 2]
        return cls(center=center, semi_axes=axes, rotation=rot, valid=True)

    @classmethod
    def invalid(cls, center=None) -> "Ellipsoid3D":
        return cls(center=center, valid=False)

    @property
    def volume(self) -> float:
        if not self.valid:
            return 0.0
        return 4.0 / 3.0 * math.pi * float(np.prod(self.semi_axes))


# ---------------------------------------------------------------------------
# vectorization machinery
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _vech_pairs(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, j) for j in range(n) for i in range(j, n))


def vech(m: np.ndarray) -> np.ndarray:
    """Serialize the lower triangle of a symmetric matrix, column-major.

    For n=4 the ordering is (1,1),(2,1),(3,1),(4,1),(2,2),(3,2),(4,2),
    (3,3),(4,3),(4,4) in 1-based terms, so the last element is the
    (4,4) entry.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    pairs = _vech_pairs(n)
    out = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        out[k] = m[i, j]
    return out


def vech_inv(v: np.ndarray, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`vech`: rebuild the full symmetric matrix."""
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    if v.size != n * (n + 1) // 2:
        raise InvalidInputError(f"vech vector of length {v.size} does not match n={n}")
    m = np.empty((n, n))
    for k, (i, j) in enumerate(_vech_pairs(n)):
        m[i, j] = v[k]
        m[j, i] = v[k]
    return m


@functools.lru_cache(maxsize=None)
def _duplication_pair(n: int) -> tuple[np.ndarray, np.ndarray]:
    g = n * (n + 1) // 2
    pairs = _vech_pairs(n)
    index = {pair: k for k, pair in enumerate(pairs)}
    d = np.zeros((g, n * n))
    e = np.zeros((n * n, g))
    for k, (i, j) in enumerate(pairs):
        d[k, i + j * n] = 1.0
    for i in range(n):
        for j in range(n):
            e[i + j * n, index[(max(i, j), min(i, j))]] = 1.0
    d.flags.writeable = False
    e.flags.writeable = False
    return d, e


def duplication_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Selection matrix D (vech = D vec) and duplication matrix E (vec = E vech).

    Both use column-major vec and the :func:`vech` ordering, so
    D is g x n^2 and E is n^2 x g with g = n(n+1)/2, and D @ E = I.
    """
    if n not in (3, 4):
        raise InvalidInputError(f"duplication matrices are defined for n in {{3, 4}}, got {n}")
    d, e = _duplication_pair(n)
    return d.copy(), e.copy()


def adjugate(m: np.ndarray) -> np.ndarray:
    """Adjugate (transposed cofactor matrix): M @ adj(M) = det(M) I.

    Works for singular matrices as well.  Symmetric input yields exactly
    symmetric output.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if m.shape != (n, n) or n not in (3, 4):
        raise InvalidInputError(f"adjugate expects a 3x3 or 4x4 matrix, got shape {m.shape}")
    cof = np.empty((n, n))
    rows = np.arange(n)
    for i in range(n):
        for j in range(n):
            minor = m[np.ix_(rows != i, rows != j)]
            cof[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    adj = cof.T
    if np.array_equal(m, m.T):
        adj = 0.5 * (adj + adj.T)
    return adj


# ---------------------------------------------------------------------------
# conic / ellipse conversions
# ---------------------------------------------------------------------------


def ellipse_from_bbox(box: BoundingBox) -> Ellipse2D:
    """Axis-aligned ellipse inscribed in a box (tangent to all four sides)."""
    return Ellipse2D(
        center=box.center,
        semi_axes=np.array([box.width / 2.0, box.height / 2.0]),
        angle=0.0,
    )


def _rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def conic_from_ellipse(ellipse: Ellipse2D) -> Conic:
    """Homogeneous conic of an ellipse, with interior points negative.

    The scale is fixed by the centered-frame form diag(l1^-2, l2^-2, -1),
    i.e. the 2x2 principal submatrix has trace l1^-2 + l2^-2.
    """
    r = _rot2(ellipse.angle)
    a2 = r @ np.diag(1.0 / ellipse.semi_axes**2) @ r.T
    ac = a2 @ ellipse.center
    c = np.empty((3, 3))
    c[:2, :2] = a2
    c[:2, 2] = -ac
    c[2, :2] = -ac
    c[2, 2] = ellipse.center @ ac - 1.0
    return Conic(c)


def ellipse_from_conic(conic: Conic) -> Ellipse2D:
    """Geometric parameters of a conic that is a real, non-degenerate ellipse.

    Raises:
        NotAnEllipseError: for hyperbolas, parabolas, imaginary ellipses
            and other degenerate signatures.
    """
    m = conic.matrix

    full_eigs = np.linalg.eigvalsh(m)
    scale = np.max(np.abs(full_eigs))
    signature = (
        int(np.sum(full_eigs > SINGULARITY_TOL * scale)),
        int(np.sum(full_eigs < -SINGULARITY_TOL * scale)),
        int(np.sum(np.abs(full_eigs) <= SINGULARITY_TOL * scale)),
    )

    a2 = m[:2, :2]
    evals, evecs = np.linalg.eigh(a2)
    amax = np.max(np.abs(evals))
    if amax == 0.0 or np.min(np.abs(evals)) <= SINGULARITY_TOL * amax or evals[0] * evals[1] < 0:
        raise NotAnEllipseError("conic 2x2 block is not definite", signature)

    b = m[:2, 2]
    center = np.linalg.solve(a2, -b)
    cbar = m[2, 2] + b @ center
    if evals[0] < 0:
        # global sign flip reverses the ascending eigenvalue order
        evals, cbar = -evals[::-1], -cbar
        evecs = evecs[:, ::-1]
    if cbar >= -SINGULARITY_TOL * scale:
        raise NotAnEllipseError("conic has no real interior (imaginary ellipse)", signature)

    semi = np.sqrt(-cbar / evals)
    # eigh returns ascending eigenvalues, so semi is descending already
    angle = math.atan2(evecs[1, 0], evecs[0, 0])
    return Ellipse2D(center=center, semi_axes=semi, angle=angle)


def dual_conic_from_ellipse(ellipse: Ellipse2D) -> DualConic:
    """Envelope form of an ellipse, proportional to the primal's adjugate.

    Built directly from the geometric parameters as
    [[R diag(l^2) R^T - c c^T, -c], [-c^T, -1]] rather than by taking the
    adjugate of the primal matrix: the cofactor route cancels
    catastrophically for ellipses far from the image origin.
    """
    r = _rot2(ellipse.angle)
    shape = r @ np.diag(ellipse.semi_axes**2) @ r.T
    c = ellipse.center
    m = np.empty((3, 3))
    m[:2, :2] = shape - np.outer(c, c)
    m[:2, 2] = -c
    m[2, :2] = -c
    m[2, 2] = -1.0
    return DualConic(m)


# ---------------------------------------------------------------------------
# quadric projection
# ---------------------------------------------------------------------------


def compute_G(camera: CameraProjection) -> np.ndarray:
    """6x10 matrix G with G vech(Q*) = vech(P Q* P^T) for symmetric Q*."""
    d3, _ = _duplication_pair(3)
    _, e4 = _duplication_pair(4)
    p = camera.matrix
    return d3 @ np.kron(p, p) @ e4


def project_quadric(qstar: DualQuadric, camera: CameraProjection) -> DualConic:
    """Project a dual quadric to the dual conic P Q* P^T (up to scale)."""
    p = camera.matrix
    out = p @ qstar.matrix @ p.T
    out = 0.5 * (out + out.T)
    if np.max(np.abs(out)) < 1e-14 * np.linalg.norm(qstar.matrix):
        raise DegenerateProjectionError("projected dual conic is numerically zero")
    return DualConic(out)


def outline_ellipse(quadric: Quadric, camera: CameraProjection) -> Ellipse2D:
    """Exact perspective outline of an ellipsoid as an image ellipse.

    Mathematically this equals converting P adj(Q) P^T back to a primal
    ellipse, but it is computed through the tangent cone from the camera
    center instead: the adjugate route cancels catastrophically at pixel
    scale (roughly (principal point / axis length)^2), costing ~6 digits
    in the recovered parameters.

    Raises:
        DegenerateProjectionError: camera at infinity (singular 3x3 block).
        NotAnEllipseError: no real outline (camera inside the quadric, or
            the quadric is not an ellipsoid).
    """
    q = quadric.matrix
    b = camera.matrix[:, :3]
    if abs(np.linalg.det(b)) < 1e-12 * np.linalg.norm(b) ** 3:
        raise DegenerateProjectionError("camera 3x3 block is singular; no finite center")
    center = np.linalg.solve(b, -camera.matrix[:, 3])
    oh = np.append(center, 1.0)
    g = q @ oh
    cone = (oh @ g) * q[:3, :3] - np.outer(g[:3], g[:3])
    cone /= np.linalg.norm(cone)
    binv = np.linalg.inv(b)
    c_img = binv.T @ cone @ binv
    return ellipse_from_conic(Conic(0.5 * (c_img + c_img.T)))


# ---------------------------------------------------------------------------
# quadric <-> ellipsoid
# ---------------------------------------------------------------------------


def quadric_center(m: np.ndarray) -> np.ndarray:
    """Center of a quadric matrix, -A^-1 b for Q = [[A, b], [b^T, c]].

    Raises:
        NoFiniteCenterError: when the 3x3 block is (numerically) singular.
    """
    a = m[:3, :3]
    evals = np.linalg.eigvalsh(a)
    amax = np.max(np.abs(evals))
    if amax == 0.0 or np.min(np.abs(evals)) <= SINGULARITY_TOL * amax:
        raise NoFiniteCenterError("quadric 3x3 block is singular; no finite center")
    return np.linalg.solve(a, -m[:3, 3])


def decompose_quadric(quadric: Quadric) -> Ellipsoid3D:
    """Center, semi-axes and axis rotation of a quadric.

    Uses the scale-invariant normalized eigenvalues e_j = lambda_j(A) /
    (-cbar), where cbar is the centered constant; the quadric is a real
    ellipsoid iff all e_j are positive, in which case the semi-axes are
    1/sqrt(e_j).  Non-ellipsoid quadrics yield valid=False (not an error);
    a singular 3x3 block raises NoFiniteCenterError.
    """
    m = quadric.matrix
    center = quadric_center(m)  # raises NoFiniteCenterError if singular
    b = m[:3, 3]
    cbar = m[3, 3] + b @ center

    evals, evecs = np.linalg.eigh(m[:3, :3])
    if cbar == 0.0:
        return Ellipsoid3D.invalid(center=center)
    e = evals / (-cbar)
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        return Ellipsoid3D.invalid(center=center)
    return Ellipsoid3D.make(center=center, semi_axes=1.0 / np.sqrt(e), rotation=evecs)


def compose_quadric(ellipsoid: Ellipsoid3D) -> Quadric:
    """Primal quadric of a valid ellipsoid (inverse of decompose_quadric)."""
    if not ellipsoid.valid:
        raise InvalidInputError("cannot compose a quadric from an invalid ellipsoid")
    rot = ellipsoid.rotation
    a = rot @ np.diag(1.0 / ellipsoid.semi_axes**2) @ rot.T
    t = ellipsoid.center
    at = a @ t
    q = np.empty((4, 4))
    q[:3, :3] = a
    q[:3, 3] = -at
    q[3, :3] = -at
    q[3, 3] = t @ at - 1.0
    return Quadric(q)
