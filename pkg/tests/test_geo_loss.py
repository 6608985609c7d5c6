import numpy as np
import pytest

from conftest import sphere_points
from oracles import brute_chamfer
from topoadv.geo_loss import (chamfer, curvature_consistency, geom_total, laplacian_smooth,
                              normal_consistency)
from topoadv.gradients import directional_fd, fd_error
from topoadv.pointcloud import NeighborGraph, PointCloud, clean_stats


def _stats(n=200, seed=0):
    return clean_stats(PointCloud(sphere_points(n, seed)), k=16)


def _fd_check(f, x, g, rng, tol, floor, trials=5):
    for _ in range(trials):
        u = rng.normal(size=x.shape)
        fd = directional_fd(lambda y: f(y)[0], x, u, h=1e-6)
        assert fd_error(fd, float(np.sum(g * u)), floor=floor) < tol


def test_chamfer_identity_and_single_point():
    P = sphere_points(50)
    v, g = chamfer(P, P)
    assert v == 0.0 and not np.any(g)
    v, _ = chamfer(np.zeros((1, 3)), np.array([[0.0, 0.0, 0.3]]))
    assert v == pytest.approx(0.6, abs=1e-15)


def test_chamfer_matches_oracle(rng):
    for _ in range(20):
        P = rng.normal(size=(int(rng.integers(5, 60)), 3))
        Q = rng.normal(size=(int(rng.integers(5, 60)), 3))
        assert abs(chamfer(P, Q)[0] - brute_chamfer(P, Q)) < 1e-9


def test_chamfer_gradient_fd(rng):
    P = rng.normal(size=(40, 3))
    Q = P + 0.05 * rng.normal(size=P.shape)
    _, g = chamfer(P, Q)
    _fd_check(lambda y: chamfer(P, y), Q, g, rng, 1e-5, 1e-8)


def test_normal_consistency_identities():
    st = _stats()
    assert normal_consistency(st, st.points)[0] == pytest.approx(0.0, abs=1e-20)
    v, g = normal_consistency(st, st.points + np.array([0.3, -1.0, 2.0]))
    assert v < 1e-20 and np.max(np.abs(g)) < 1e-8


def test_normal_consistency_fd(rng):
    st = _stats()
    X = st.points + 0.01 * rng.normal(size=st.points.shape)
    v, g = normal_consistency(st, X)
    assert v > 0
    _fd_check(lambda y: normal_consistency(st, y), X, g, rng, 1e-3, 1e-8)


def test_curvature_identities():
    st = _stats()
    assert curvature_consistency(st, st.points)[0] == pytest.approx(0.0, abs=1e-24)
    assert curvature_consistency(st, 2.5 * st.points)[0] < 1e-24


def test_curvature_fd(rng):
    st = _stats()
    X = st.points + 0.01 * rng.normal(size=st.points.shape)
    v, g = curvature_consistency(st, X)
    assert v > 0
    _fd_check(lambda y: curvature_consistency(st, y), X, g, rng, 1e-4, 1e-8)


def test_laplacian_constant_field():
    st = _stats()
    v, g = laplacian_smooth(np.tile([0.1, -0.2, 0.3], (200, 1)), st.graph)
    assert v < 1e-30 and np.max(np.abs(g)) < 1e-15


def test_laplacian_three_point_chain():
    graph = NeighborGraph(k=1, neighbors=np.array([[1], [2], [1]]))
    delta = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 0]])
    v, g = laplacian_smooth(delta, graph)
    # residuals (1,-2,0), (0,2,0), (0,-2,0)
    assert v == pytest.approx(13.0 / 3.0, abs=1e-15)
    # r - M^T r with M^T r = (0, r0 + r2, r1) = (0, (1,-4,0), (0,2,0))
    want = (2.0 / 3.0) * np.array([[1, -2, 0], [-1, 6, 0], [0, -4, 0]], dtype=float)
    assert np.allclose(g, want, atol=1e-15)


def test_laplacian_fd(rng):
    st = _stats()
    d = 0.05 * rng.normal(size=(200, 3))
    _, g = laplacian_smooth(d, st.graph)
    _fd_check(lambda y: laplacian_smooth(y, st.graph), d, g, rng, 1e-6, 1e-8)


def test_geom_total_zero_and_additive(rng):
    st = _stats()
    z = geom_total(st, st.points, np.zeros((200, 3)))
    assert z.value == pytest.approx(0.0, abs=1e-18)
    d = 0.02 * rng.normal(size=(200, 3))
    X = st.points + d
    t = geom_total(st, X, d)
    parts = [chamfer(st.points, X), normal_consistency(st, X), curvature_consistency(st, X),
             laplacian_smooth(d, st.graph)]
    assert abs(t.value - sum(p[0] for p in parts)) < 1e-12
    assert np.allclose(t.grad, sum(p[1] for p in parts), atol=1e-12)
    _fd_check(lambda y: (geom_total(st, y, y - st.points).value,), X, t.grad, rng, 1e-3, 1e-8)
