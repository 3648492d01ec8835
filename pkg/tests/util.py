"""Shared helpers for the test suite."""

from __future__ import annotations

import math

import numpy as np

from quadricfit.geometry import (
    CameraProjection,
    Ellipse2D,
    Ellipsoid3D,
    compose_quadric,
    outline_ellipse,
)

DEFAULT_K = np.array([[1000.0, 0.0, 640.0], [0.0, 1000.0, 480.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    m = rng.normal(size=(n, n))
    return 0.5 * (m + m.T)


def random_ellipsoid(rng: np.random.Generator, distinct_axes: bool = True) -> Ellipsoid3D:
    center = rng.uniform(-5.0, 5.0, size=3)
    if distinct_axes:
        # strictly separated axes keep eigenbases unambiguous in roundtrips
        base = rng.uniform(0.5, 1.5)
        axes = base * np.array([4.0, 2.0, 1.0]) * rng.uniform(0.9, 1.1, size=3)
        axes = np.sort(axes)[::-1]
        if axes[0] - axes[1] < 0.1 or axes[1] - axes[2] < 0.1:
            axes = base * np.array([4.0, 2.0, 1.0])
    else:
        axes = np.sort(rng.uniform(0.5, 4.0, size=3))[::-1]
    return Ellipsoid3D.make(center=center, semi_axes=axes, rotation=random_rotation(rng))


def assert_proportional(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> None:
    """Assert two homogeneous matrices/vectors are equal up to a nonzero scale."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    assert na > 0 and nb > 0, "cannot compare zero matrices up to scale"
    a = a / na
    b = b / nb
    k = np.unravel_index(np.argmax(np.abs(a)), a.shape)
    if a[k] * b[k] < 0:
        b = -b
    assert np.linalg.norm(a - b) < tol, f"not proportional: residual {np.linalg.norm(a - b)}"


def same_shape_matrix(e: Ellipsoid3D) -> np.ndarray:
    """Rotation-ambiguity-free representation R diag(1/axes^2) R^T."""
    return e.rotation @ np.diag(1.0 / e.semi_axes**2) @ e.rotation.T


def assert_ellipsoids_close(a: Ellipsoid3D, b: Ellipsoid3D, tol: float = 1e-8) -> None:
    assert a.valid and b.valid
    assert np.allclose(a.center, b.center, atol=tol)
    assert np.allclose(a.semi_axes, b.semi_axes, rtol=tol, atol=tol)
    assert np.allclose(same_shape_matrix(a), same_shape_matrix(b), rtol=0, atol=tol * 10)


def camera_map(cams):
    return {c.frame_id: c for c in cams}


def lookat_camera(eye, target=(0.0, 0.0, 0.0), k=None, frame_id=0) -> CameraProjection:
    """Pinhole camera at `eye` looking at `target`, +z up, K intrinsics."""
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    if k is None:
        k = DEFAULT_K
    z = target - eye
    z = z / np.linalg.norm(z)
    x = np.cross([0.0, 0.0, 1.0], z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    rt = np.hstack([r, (-r @ eye)[:, None]])
    return CameraProjection(k @ rt, frame_id=frame_id)


def orbit_cameras(n: int, radius: float = 200.0, k=None) -> list[CameraProjection]:
    """n cameras on a sphere around the origin, spread in azimuth/elevation."""
    cams = []
    for i in range(n):
        frac = i / (n - 1) if n > 1 else 0.0
        az = math.radians(60.0) * frac
        el = math.radians(10.0 + 50.0 * frac)
        eye = radius * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )
        cams.append(lookat_camera(eye, k=k, frame_id=i))
    return cams


def exact_outline(e: Ellipsoid3D, cam: CameraProjection) -> Ellipse2D:
    """Exact perspective outline of an ellipsoid as an image ellipse."""
    return outline_ellipse(compose_quadric(e), cam)
