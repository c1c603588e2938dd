import numpy as np
import pytest

from loopflow.targets import TargetManifold, curvature_contraction


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_sphere_constructor():
    s = TargetManifold.sphere(3)
    assert s.kind == "sphere"
    assert s.ambient_dim == 3
    np.testing.assert_allclose(s.semi_axes, np.ones(3))
    assert s.tube_radius == 0.5
    with pytest.raises(ValueError):
        TargetManifold.sphere(1)
    with pytest.raises(ValueError):
        TargetManifold.sphere(3, tube_radius=1.5)


def test_ellipsoid_constructor():
    e = TargetManifold.ellipsoid((2.0, 1.0, 1.0))
    assert e.kind == "ellipsoid"
    assert e.tube_radius == 0.25  # quarter of the smallest semi-axis
    with pytest.raises(ValueError):
        TargetManifold.ellipsoid((1.0,))
    with pytest.raises(ValueError):
        TargetManifold.ellipsoid((1.0, -2.0))


def test_defining_residual_and_guard():
    s = TargetManifold.sphere(3)
    assert float(s.defining_residual(np.array([0.0, 1.0, 0.0]))) < 1e-15
    assert float(s.defining_residual(np.array([0.0, 1.1, 0.0]))) > 0.2
    s.require_on_manifold(np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError, match="off the target"):
        s.require_on_manifold(np.array([1.05, 0.0, 0.0]))


def test_sphere_projection_closed_form():
    s = TargetManifold.sphere(3)
    x = np.array([0.3, -0.8, 0.6])
    np.testing.assert_allclose(s.project_nearest(x), unit(x), atol=1e-15)
    # stacks project row by row
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((10, 3))
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True) * rng.uniform(0.7, 1.3, (10, 1))
    proj = s.project_nearest(pts)
    np.testing.assert_allclose(np.linalg.norm(proj, axis=1), 1.0, atol=1e-14)


def test_projection_outside_tube_rejected():
    s = TargetManifold.sphere(3)
    with pytest.raises(ValueError, match="tube"):
        s.project_nearest(np.array([2.0, 0.0, 0.0]))
    with pytest.raises(ValueError, match="dimension"):
        s.project_nearest(np.array([1.0, 0.0]))


def test_ellipsoid_projection_properties():
    e = TargetManifold.ellipsoid((1.5, 1.0, 0.8))
    rng = np.random.default_rng(3)
    for _ in range(20):
        y0 = unit(rng.standard_normal(3)) * e.semi_axes
        x = y0 + 0.05 * rng.standard_normal(3)
        y = e.project_nearest(x)
        assert float(e.defining_residual(y)) < 1e-10
        # optimality: the residual x - y must be parallel to the normal at y
        n = unit(y / e.semi_axes**2)
        r = x - y
        tang = r - np.dot(r, n) * n
        assert np.linalg.norm(tang) < 1e-8 * max(1.0, np.linalg.norm(r))
        # idempotent
        np.testing.assert_allclose(e.project_nearest(y), y, atol=1e-9)


def test_differential_of_projection_sphere():
    s = TargetManifold.sphere(3)
    x = np.array([0.0, 0.0, 1.2])
    v = np.array([1.0, -2.0, 0.5])
    d = s.differential_of_projection(x, v)
    np.testing.assert_allclose(d, np.array([1.0, -2.0, 0.0]) / 1.2, atol=1e-14)
    # matches a finite difference of the projection itself
    eps = 1e-6
    fd = (s.project_nearest(x + eps * v) - s.project_nearest(x - eps * v)) / (2 * eps)
    np.testing.assert_allclose(d, fd, atol=1e-8)


def test_differential_of_projection_on_manifold_is_projector():
    for t in (TargetManifold.sphere(3), TargetManifold.ellipsoid((1.2, 1.0, 0.9))):
        rng = np.random.default_rng(8)
        y = t.project_nearest(unit(rng.standard_normal(3)) * t.semi_axes * 1.0)
        P = t.tangent_projector(y)
        for _ in range(5):
            v = rng.standard_normal(3)
            np.testing.assert_allclose(
                t.differential_of_projection(y, v), P @ v, atol=1e-6
            )


def test_tangent_projector_algebra():
    e = TargetManifold.ellipsoid((1.5, 1.0, 0.8))
    y = e.project_nearest(np.array([1.2, 0.5, 0.3]))
    P = e.tangent_projector(y)
    np.testing.assert_allclose(P, P.T, atol=1e-14)
    np.testing.assert_allclose(P @ P, P, atol=1e-14)
    n = y / e.semi_axes**2
    np.testing.assert_allclose(P @ n, 0.0, atol=1e-14)
    assert abs(np.trace(P) - 2.0) < 1e-12


def test_second_fundamental_form_sphere():
    s = TargetManifold.sphere(3)
    y = unit(np.array([1.0, 1.0, 0.2]))
    P = s.tangent_projector(y)
    rng = np.random.default_rng(5)
    X = P @ rng.standard_normal(3)
    Y = P @ rng.standard_normal(3)
    A = s.second_fundamental_form(y, X, Y)
    np.testing.assert_allclose(A, -np.dot(X, Y) * y, atol=1e-14)
    with pytest.raises(ValueError, match="tangent"):
        s.second_fundamental_form(y, y + X, Y)


def test_second_fundamental_form_matches_closed_form_on_ellipsoid():
    # two routes: differencing the projector field vs the level-set formula
    e = TargetManifold.ellipsoid((1.4, 1.0, 0.7))
    rng = np.random.default_rng(12)
    for _ in range(10):
        y = e.project_nearest(unit(rng.standard_normal(3)) * e.semi_axes)
        P = e.tangent_projector(y)
        X = P @ rng.standard_normal(3)
        fd = e.second_fundamental_form(y, X, X)
        closed = curvature_contraction(e, y, X)
        np.testing.assert_allclose(fd, closed, atol=2e-5 * max(1.0, np.dot(X, X)))


def test_curvature_contraction_vectorized_and_normal():
    s = TargetManifold.sphere(3)
    rng = np.random.default_rng(7)
    y = rng.standard_normal((15, 3))
    y = y / np.linalg.norm(y, axis=1, keepdims=True)
    X = rng.standard_normal((15, 3))
    X = X - np.sum(X * y, axis=1, keepdims=True) * y
    A = curvature_contraction(s, y, X)
    np.testing.assert_allclose(A, -np.sum(X * X, axis=1, keepdims=True) * y, atol=1e-13)
    # result is purely normal: projecting it to the tangent space kills it
    tang = A - np.sum(A * y, axis=1, keepdims=True) * y
    np.testing.assert_allclose(tang, 0.0, atol=1e-12)


def test_sphere_higher_ambient_dimension():
    s = TargetManifold.sphere(4)
    x = np.array([0.5, 0.5, 0.5, 0.8])
    y = s.project_nearest(x)
    assert abs(np.linalg.norm(y) - 1.0) < 1e-14
    P = s.tangent_projector(y)
    assert abs(np.trace(P) - 3.0) < 1e-12


def test_in_tube_sphere_and_ellipsoid():
    s = TargetManifold.sphere(3)
    assert s.in_tube(np.array([1.2, 0.0, 0.0]))
    assert not s.in_tube(np.array([1.6, 0.0, 0.0]))
    e = TargetManifold.ellipsoid((2.0, 1.0, 1.0))
    assert e.in_tube(np.array([2.1, 0.0, 0.0]))
    assert not e.in_tube(np.array([0.0, 0.0, 0.0]))
