from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadricfit.errors import (
    InvalidInputError,
    NoFiniteCenterError,
    NotAnEllipseError,
)
from quadricfit.geometry import (
    BoundingBox,
    CameraProjection,
    Conic,
    DualQuadric,
    Ellipse2D,
    Ellipsoid3D,
    Quadric,
    adjugate,
    compose_quadric,
    compute_G,
    conic_from_ellipse,
    decompose_quadric,
    duplication_matrices,
    ellipse_from_bbox,
    ellipse_from_conic,
    fold_angle,
    project_quadric,
    vech,
    vech_inv,
)

from util import (
    assert_ellipsoids_close,
    assert_proportional,
    random_ellipsoid,
    random_rotation,
    random_symmetric,
)


# ---------------------------------------------------------------------------
# fold_angle
# ---------------------------------------------------------------------------


def test_fold_angle_boundaries():
    assert fold_angle(math.pi / 2) == pytest.approx(math.pi / 2)
    assert fold_angle(-math.pi / 2) == pytest.approx(math.pi / 2)
    assert fold_angle(math.pi) == pytest.approx(0.0, abs=1e-15)
    assert fold_angle(0.3 + 5 * math.pi) == pytest.approx(0.3)


@given(st.floats(min_value=-50.0, max_value=50.0))
def test_fold_angle_range_and_equivalence(a):
    f = fold_angle(a)
    assert -math.pi / 2 < f <= math.pi / 2
    # same undirected axis: difference is an integer multiple of pi
    k = (a - f) / math.pi
    assert abs(k - round(k)) < 1e-9


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


def test_bbox_validation():
    with pytest.raises(InvalidInputError):
        BoundingBox(width=-1.0, height=2.0, center=[0, 0])
    with pytest.raises(InvalidInputError):
        BoundingBox(width=1.0, height=float("nan"), center=[0, 0])
    with pytest.raises(InvalidInputError):
        BoundingBox(width=1.0, height=1.0, center=[0, 0, 0])


def test_ellipse_angle_folded_on_construction():
    e = Ellipse2D(center=[0, 0], semi_axes=[2, 1], angle=math.pi / 2 + 0.2)
    assert -math.pi / 2 < e.angle <= math.pi / 2


def test_quadric_sign_normalized_on_construction():
    m = -np.diag([1.0, 1.0, 1.0, -1.0])
    q = Quadric(m)
    assert np.trace(q.matrix[:3, :3]) > 0
    assert np.allclose(q.matrix, np.diag([1.0, 1.0, 1.0, -1.0]))


def test_quadric_rejects_asymmetric():
    m = np.eye(4)
    m[0, 1] = 0.5
    with pytest.raises(InvalidInputError):
        Quadric(m)


def test_camera_rank_check():
    p = np.zeros((3, 4))
    p[0, 0] = 1.0
    with pytest.raises(InvalidInputError):
        CameraProjection(p)


def test_ellipsoid_make_sorts_and_rights_the_basis():
    rot = np.eye(3)
    e = Ellipsoid3D.make(center=[0, 0, 0], semi_axes=[1.0, 3.0, 2.0], rotation=rot)
    assert np.allclose(e.semi_axes, [3.0, 2.0, 1.0])
    assert np.linalg.det(e.rotation) == pytest.approx(1.0)
    # column order must follow the axes: axis 3 came from input column 1
    assert np.allclose(np.abs(e.rotation[:, 0]), [0, 1, 0])


def test_ellipsoid_invalid_has_zero_volume():
    e = Ellipsoid3D.invalid(center=[1, 2, 3])
    assert not e.valid
    assert e.volume == 0.0
    assert e.semi_axes is None and e.rotation is None


def test_ellipsoid_volume():
    e = Ellipsoid3D.make(center=[0, 0, 0], semi_axes=[3, 2, 1], rotation=np.eye(3))
    assert e.volume == pytest.approx(4 / 3 * math.pi * 6)


# ---------------------------------------------------------------------------
# ellipse_from_bbox / conic_from_ellipse / ellipse_from_conic
# ---------------------------------------------------------------------------


def test_ellipse_from_bbox_unit_circle():
    e = ellipse_from_bbox(BoundingBox(width=2, height=2, center=[0, 0]))
    assert np.allclose(e.center, [0, 0])
    assert np.allclose(e.semi_axes, [1, 1])
    assert e.angle == 0.0


def test_ellipse_from_bbox_scaled():
    e = ellipse_from_bbox(BoundingBox(width=4, height=2, center=[5, 3]))
    assert np.allclose(e.center, [5, 3])
    assert np.allclose(e.semi_axes, [2, 1])


def test_ellipse_from_bbox_boundary_points_on_conic():
    e = ellipse_from_bbox(BoundingBox(width=6, height=3, center=[10, -4]))
    c = conic_from_ellipse(e).matrix
    for pt in ([13.0, -4.0], [10.0, -2.5]):
        u = np.array([pt[0], pt[1], 1.0])
        assert abs(u @ c @ u) < 1e-10


def test_conic_unit_circle():
    e = Ellipse2D(center=[0, 0], semi_axes=[1, 1])
    assert np.allclose(conic_from_ellipse(e).matrix, np.diag([1.0, 1.0, -1.0]))


def test_conic_canonical_axis_aligned():
    e = Ellipse2D(center=[0, 0], semi_axes=[2, 1])
    assert np.allclose(conic_from_ellipse(e).matrix, np.diag([0.25, 1.0, -1.0]))


def test_conic_interior_negative_exterior_positive():
    e = Ellipse2D(center=[3, -1], semi_axes=[2, 1], angle=0.7)
    c = conic_from_ellipse(e).matrix
    inside = np.array([3.0, -1.0, 1.0])
    outside = np.array([30.0, 40.0, 1.0])
    assert inside @ c @ inside < 0
    assert outside @ c @ outside > 0


def test_conic_boundary_sampling_rotated_translated():
    e = Ellipse2D(center=[3, 0], semi_axes=[2, 1], angle=math.pi / 4)
    c = conic_from_ellipse(e).matrix
    r = np.array(
        [
            [math.cos(e.angle), -math.sin(e.angle)],
            [math.sin(e.angle), math.cos(e.angle)],
        ]
    )
    for k in range(8):
        phi = 2 * math.pi * k / 8
        p_local = np.array([2 * math.cos(phi), math.sin(phi)])
        p = e.center + r @ p_local
        u = np.array([p[0], p[1], 1.0])
        assert abs(u @ c @ u) < 1e-10


def test_ellipse_from_conic_unit_circle():
    e = ellipse_from_conic(Conic(np.diag([1.0, 1.0, -1.0])))
    assert np.allclose(e.center, [0, 0])
    assert np.allclose(e.semi_axes, [1, 1])


def test_ellipse_from_conic_scale_and_sign_invariant():
    base = conic_from_ellipse(Ellipse2D(center=[2, 1], semi_axes=[3, 2], angle=0.4)).matrix
    for s in (1.0, -1.0, 17.0, -0.003):
        e = ellipse_from_conic(Conic(s * base))
        assert np.allclose(e.center, [2, 1], atol=1e-9)
        assert np.allclose(e.semi_axes, [3, 2], rtol=1e-9)
        assert e.angle == pytest.approx(0.4, abs=1e-9)


def test_ellipse_from_conic_rejects_hyperbola():
    with pytest.raises(NotAnEllipseError) as excinfo:
        ellipse_from_conic(Conic(np.diag([1.0, -1.0, -1.0])))
    assert sum(excinfo.value.signature) == 3


def test_ellipse_from_conic_rejects_imaginary_ellipse():
    with pytest.raises(NotAnEllipseError):
        ellipse_from_conic(Conic(np.diag([1.0, 1.0, 1.0])))


def test_ellipse_from_conic_rejects_degenerate_rank():
    # pair of lines x^2 - y^2 = 0
    with pytest.raises(NotAnEllipseError):
        ellipse_from_conic(Conic(np.diag([1.0, -1.0, 0.0])))


def test_conic_roundtrip_random():
    rng = np.random.default_rng(20240311)
    for _ in range(1000):
        e = Ellipse2D(
            center=rng.uniform(-100, 100, size=2),
            semi_axes=np.sort(rng.uniform(0.2, 50.0, size=2))[::-1],
            angle=rng.uniform(-math.pi, math.pi),
        )
        back = ellipse_from_conic(conic_from_ellipse(e))
        assert np.allclose(back.center, e.center, atol=1e-9 * (1 + np.abs(e.center).max()))
        if e.semi_axes[0] - e.semi_axes[1] > 1e-3:
            assert np.allclose(back.semi_axes, e.semi_axes, rtol=1e-9)
            assert back.angle == pytest.approx(e.angle, abs=1e-6)
        else:
            assert np.allclose(np.sort(back.semi_axes), np.sort(e.semi_axes), rtol=1e-9)
        again = conic_from_ellipse(back).matrix
        assert_proportional(again, conic_from_ellipse(e).matrix, tol=1e-9)


# ---------------------------------------------------------------------------
# adjugate
# ---------------------------------------------------------------------------


def test_adjugate_identity():
    assert np.allclose(adjugate(np.eye(4)), np.eye(4))


def test_adjugate_diagonal():
    assert np.allclose(adjugate(np.diag([1.0, 2.0, 3.0])), np.diag([6.0, 3.0, 2.0]))


def test_adjugate_matches_inverse_route():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = random_symmetric(rng, 4) + 4.0 * np.eye(4)
        expected = np.linalg.det(a) * np.linalg.inv(a)
        assert np.allclose(adjugate(a), expected, rtol=1e-9, atol=1e-9)


def test_adjugate_of_singular_matrix():
    a = np.diag([1.0, 2.0, 0.0])
    adj = adjugate(a)
    assert np.allclose(a @ adj, np.zeros((3, 3)))  # det is 0
    assert np.allclose(adj, np.diag([0.0, 0.0, 2.0]))


def test_adjugate_twice_power_law_4x4():
    rng = np.random.default_rng(11)
    for _ in range(100):
        q = random_symmetric(rng, 4)
        det = np.linalg.det(q)
        lhs = adjugate(adjugate(q))
        rhs = det**2 * q
        scale = max(np.abs(rhs).max(), 1e-30)
        assert np.abs(lhs - rhs).max() / scale < 1e-8


# ---------------------------------------------------------------------------
# vech / vech_inv / duplication matrices
# ---------------------------------------------------------------------------


def test_vech_identity3():
    assert np.array_equal(vech(np.eye(3)), [1, 0, 0, 1, 0, 1])


def test_vech_last_element_is_44_entry():
    m = np.zeros((4, 4))
    m[3, 3] = 7.0
    v = vech(m)
    assert v[-1] == 7.0
    assert np.count_nonzero(v) == 1


def test_vech_ordering_lower_triangle_column_major():
    m = np.arange(16.0).reshape(4, 4)
    m = 0.5 * (m + m.T)
    v = vech(m)
    expected = [m[0, 0], m[1, 0], m[2, 0], m[3, 0], m[1, 1], m[2, 1], m[3, 1], m[2, 2], m[3, 2], m[3, 3]]
    assert np.array_equal(v, expected)


def test_vech_roundtrip_exact():
    rng = np.random.default_rng(13)
    for n in (3, 4):
        for _ in range(1000):
            m = random_symmetric(rng, n)
            assert np.array_equal(vech_inv(vech(m), n), m)


def test_vech_inv_length_mismatch():
    with pytest.raises(InvalidInputError):
        vech_inv(np.zeros(7), 4)


def test_duplication_shapes():
    d3, e3 = duplication_matrices(3)
    d4, e4 = duplication_matrices(4)
    assert d3.shape == (6, 9) and e3.shape == (9, 6)
    assert d4.shape == (10, 16) and e4.shape == (16, 10)


def test_duplication_selection_identity():
    for n in (3, 4):
        d, e = duplication_matrices(n)
        g = n * (n + 1) // 2
        assert np.array_equal(d @ e, np.eye(g))


def test_duplication_definitional_exact():
    rng = np.random.default_rng(17)
    for n in (3, 4):
        d, e = duplication_matrices(n)
        for _ in range(1000):
            x = random_symmetric(rng, n)
            vec = x.flatten(order="F")
            assert np.array_equal(d @ vec, vech(x))
            assert np.array_equal(e @ vech(x), vec)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_vech_vec_relation_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 5))
    d, e = duplication_matrices(n)
    x = random_symmetric(rng, n)
    assert np.array_equal(d @ x.flatten(order="F"), vech(x))
    assert np.array_equal(e @ vech(x), x.flatten(order="F"))


# ---------------------------------------------------------------------------
# compute_G / project_quadric
# ---------------------------------------------------------------------------


def canonical_camera() -> CameraProjection:
    return CameraProjection(np.hstack([np.eye(3), np.zeros((3, 1))]))


def test_compute_G_canonical_camera():
    rng = np.random.default_rng(19)
    g = compute_G(canonical_camera())
    for _ in range(20):
        qs = random_symmetric(rng, 4)
        assert np.allclose(g @ vech(qs), vech(qs[:3, :3]))


def test_compute_G_random_congruence():
    rng = np.random.default_rng(23)
    for _ in range(1000):
        p = CameraProjection(rng.normal(size=(3, 4)))
        qs = random_symmetric(rng, 4)
        lhs = compute_G(p) @ vech(qs)
        rhs = vech(p.matrix @ qs @ p.matrix.T)
        assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-12


def test_compute_G_structural_zeros():
    # a camera with zero third column never touches Q* entries in row/col 3
    p = np.hstack([np.eye(3), np.zeros((3, 1))])
    p[:, 2] = 0.0
    p[2, 3] = 1.0  # keep rank 3
    g = compute_G(CameraProjection(p))
    # vech indices involving matrix index 2 (0-based): (2,0),(2,1),(2,2),(3,2)
    for col in (2, 5, 7, 8):
        assert np.all(g[:, col] == 0.0)


def test_project_quadric_matches_G():
    rng = np.random.default_rng(29)
    for _ in range(50):
        p = CameraProjection(rng.normal(size=(3, 4)))
        qs = DualQuadric(random_symmetric(rng, 4))
        conic = project_quadric(qs, p)
        assert np.allclose(vech(conic.matrix), compute_G(p) @ qs.vech)


def test_project_quadric_homogeneity():
    rng = np.random.default_rng(31)
    p = CameraProjection(rng.normal(size=(3, 4)))
    qs = random_symmetric(rng, 4)
    base = project_quadric(DualQuadric(qs), p).matrix
    for s in (2.0, -3.0, 0.125):
        assert np.allclose(project_quadric(DualQuadric(s * qs), p).matrix, s * base)


def test_project_quadric_sphere_outline_radius():
    # unit sphere at depth 10 in front of a canonical camera; the exact
    # perspective outline is a circle of radius r/sqrt(d^2 - r^2), slightly
    # larger than the similar-triangles value r/d
    sphere = compose_quadric(
        Ellipsoid3D.make(center=[0, 0, 10], semi_axes=[1, 1, 1], rotation=np.eye(3))
    )
    qstar = DualQuadric(adjugate(sphere.matrix))
    conic = project_quadric(qstar, canonical_camera())
    ellipse = ellipse_from_conic(Conic(adjugate(conic.matrix)))
    assert np.allclose(ellipse.center, [0, 0], atol=1e-12)
    exact = 1.0 / math.sqrt(99.0)
    assert np.allclose(ellipse.semi_axes, [exact, exact], rtol=1e-12)
    assert abs(ellipse.semi_axes[0] - 0.1) / 0.1 < 0.01  # similar-triangles approximation


def test_dual_conic_matches_adjugate_route():
    from quadricfit.geometry import dual_conic_from_ellipse

    rng = np.random.default_rng(47)
    for _ in range(200):
        e = Ellipse2D(
            center=rng.uniform(-800, 800, size=2),
            semi_axes=np.sort(rng.uniform(1.0, 60.0, size=2))[::-1],
            angle=rng.uniform(-math.pi, math.pi),
        )
        direct = dual_conic_from_ellipse(e).matrix
        via_adj = adjugate(conic_from_ellipse(e).matrix)
        assert_proportional(direct, via_adj, tol=1e-9)


def test_outline_ellipse_matches_dual_projection():
    from quadricfit.geometry import outline_ellipse
    from quadricfit.geometry import dual_conic_from_ellipse

    rng = np.random.default_rng(53)
    k = np.array([[1000.0, 0, 640.0], [0, 1000.0, 480.0], [0, 0, 1.0]])
    for _ in range(50):
        e = random_ellipsoid(rng)
        # camera 200 units away along a random direction, looking at origin
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        eye = 200.0 * d
        z = -d
        x = np.cross([0.0, 0.0, 1.0], z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        r = np.stack([x, y, z])
        cam = CameraProjection(k @ np.hstack([r, (-r @ eye)[:, None]]))
        q = compose_quadric(e)
        ell = outline_ellipse(q, cam)
        # defining identity: the outline's dual conic is P adj(Q) P^T up to scale
        lhs = dual_conic_from_ellipse(ell).matrix
        rhs = cam.matrix @ adjugate(q.matrix) @ cam.matrix.T
        assert_proportional(lhs, rhs, tol=1e-9)


def test_outline_ellipse_camera_inside_raises():
    from quadricfit.geometry import outline_ellipse

    q = Quadric(np.diag([1.0, 1.0, 1.0, -1.0]))  # unit sphere at origin
    cam = canonical_camera()  # center at the origin, inside the sphere
    with pytest.raises(NotAnEllipseError):
        outline_ellipse(q, cam)


def test_project_quadric_unit_sphere_from_origin_camera():
    # camera center inside the unit sphere: block extraction gives -I3,
    # an imaginary conic (no real outline exists from inside)
    qstar = DualQuadric(adjugate(np.diag([1.0, 1.0, 1.0, -1.0])))
    conic = project_quadric(qstar, canonical_camera())
    assert_proportional(conic.matrix, np.diag([-1.0, -1.0, -1.0]))
    with pytest.raises(NotAnEllipseError):
        ellipse_from_conic(Conic(adjugate(conic.matrix)))


# ---------------------------------------------------------------------------
# decompose_quadric / compose_quadric
# ---------------------------------------------------------------------------


def test_decompose_sphere():
    e = decompose_quadric(Quadric(np.diag([1.0, 1.0, 1.0, -4.0])))
    assert e.valid
    assert np.allclose(e.center, [0, 0, 0])
    assert np.allclose(e.semi_axes, [2, 2, 2])


def test_decompose_hyperboloid_invalid_keeps_center():
    e = decompose_quadric(Quadric(np.diag([1.0, -1.0, 1.0, -4.0])))
    assert not e.valid
    assert e.center is not None
    assert np.allclose(e.center, [0, 0, 0])


def test_decompose_singular_block_raises():
    with pytest.raises(NoFiniteCenterError):
        decompose_quadric(Quadric(np.diag([1.0, 1.0, 0.0, -1.0])))


def test_compose_unit_sphere():
    q = compose_quadric(Ellipsoid3D.make(center=[0, 0, 0], semi_axes=[1, 1, 1], rotation=np.eye(3)))
    assert_proportional(q.matrix, np.diag([1.0, 1.0, 1.0, -1.0]))


def test_compose_offset_sphere_center_recovery():
    q = compose_quadric(Ellipsoid3D.make(center=[1, 0, 0], semi_axes=[2, 2, 2], rotation=np.eye(3)))
    e = decompose_quadric(q)
    assert np.allclose(e.center, [1, 0, 0])
    assert np.allclose(e.semi_axes, [2, 2, 2])


def test_compose_decompose_roundtrip_random():
    rng = np.random.default_rng(37)
    for _ in range(1000):
        e = random_ellipsoid(rng)
        back = decompose_quadric(compose_quadric(e))
        assert_ellipsoids_close(e, back, tol=1e-8)


def test_decompose_scale_invariant():
    rng = np.random.default_rng(41)
    e = random_ellipsoid(rng)
    q = compose_quadric(e).matrix
    for s in (3.0, -0.5, 1e-4):
        back = decompose_quadric(Quadric(s * q))
        assert_ellipsoids_close(e, back, tol=1e-8)


def test_compose_rejects_invalid():
    with pytest.raises(InvalidInputError):
        compose_quadric(Ellipsoid3D.invalid())


def test_rotated_ellipsoid_axes_directions():
    rot = random_rotation(np.random.default_rng(43))
    e = Ellipsoid3D.make(center=[0.5, -2, 1], semi_axes=[4, 2, 1], rotation=rot)
    back = decompose_quadric(compose_quadric(e))
    for j in range(3):
        dot = abs(back.rotation[:, j] @ e.rotation[:, j])
        assert dot == pytest.approx(1.0, abs=1e-9)
