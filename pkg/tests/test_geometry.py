import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from cdmp_bag.exceptions import DegenerateHullError, DegenerateVolumeError
from cdmp_bag.geometry import (
    alpha_shape,
    alpha_shape_area,
    circumradius,
    convex_hull_2d,
    convex_hull_3d,
    convex_hull_3d_volume,
    delaunay_2d,
    orient2d,
    pca_2d,
)


def circle(count: int, radius: float = 1.0, a: float = None, b: float = None):
    theta = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
    a = radius if a is None else a
    b = radius if b is None else b
    return np.column_stack([a * np.cos(theta), b * np.sin(theta)])


def test_square_with_interior_point():
    hull = convex_hull_2d([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
    assert len(hull.vertices) == 4
    assert hull.area == pytest.approx(1.0, abs=1e-12)


def test_hull_of_circle_points():
    points = circle(100)
    hull = convex_hull_2d(points)
    assert np.all(hull.contains(points))
    assert hull.area == pytest.approx(50 * math.sin(2 * math.pi / 100), rel=1e-12)
    assert hull.area == pytest.approx(math.pi, rel=5e-3)


def test_hull_is_convex_and_counter_clockwise():
    rng = np.random.default_rng(0)
    hull = convex_hull_2d(rng.uniform(-1, 1, (200, 2)))
    ring = np.vstack([hull.vertices, hull.vertices[:2]])
    assert all(orient2d(ring[i], ring[i + 1], ring[i + 2]) > 0 for i in range(len(hull.vertices)))


def test_triangle_hull_area():
    hull = convex_hull_2d([[0, 0], [4, 0], [0, 3]])
    assert hull.area == pytest.approx(6.0)


def test_collinear_hull_is_degenerate():
    with pytest.raises(DegenerateHullError):
        convex_hull_2d([[0, 0], [1, 1], [2, 2], [3, 3]])


def test_unit_cube_volume():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    assert convex_hull_3d_volume(corners) == pytest.approx(1.0, abs=1e-12)


def test_regular_tetrahedron_volume():
    tetrahedron = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / (2 * math.sqrt(2))
    assert convex_hull_3d_volume(tetrahedron) == pytest.approx(math.sqrt(2) / 12, abs=1e-9)


def test_ball_volume_and_watertight_hull():
    rng = np.random.default_rng(1)
    direction = rng.normal(size=(2000, 3))
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    points = direction * rng.uniform(0, 1, (2000, 1)) ** (1 / 3)
    hull = convex_hull_3d(points)
    ball = 4 * math.pi / 3
    assert 0.93 * ball <= hull.volume <= ball
    assert hull.volume == pytest.approx(ConvexHull(points).volume, rel=1e-9)
    edges = {}
    for face in hull.faces:
        for i in range(3):
            edge = tuple(sorted((face[i], face[(i + 1) % 3])))
            edges[edge] = edges.get(edge, 0) + 1
    assert set(edges.values()) == {2}
    offsets = np.einsum("ij,kj->ik", points, hull.normals) - np.einsum(
        "ij,ij->i", hull.vertices[hull.faces[:, 0]], hull.normals
    )
    assert offsets.max() <= 1e-9


def test_coplanar_points_have_no_volume():
    with pytest.raises(DegenerateVolumeError):
        convex_hull_3d_volume([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.2, 0]])


def test_delaunay_square():
    triangulation = delaunay_2d([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert len(triangulation.triangles) == 2
    assert triangulation.areas().sum() == pytest.approx(1.0)


def test_delaunay_three_points():
    assert len(delaunay_2d([[0, 0], [1, 0], [0, 1]]).triangles) == 1


@pytest.mark.parametrize("seed", range(4))
def test_delaunay_empty_circumcircles(seed):
    rng = np.random.default_rng(seed)
    points = rng.uniform(0, 1, (50, 2))
    triangulation = delaunay_2d(points)
    assert triangulation.areas().sum() == pytest.approx(convex_hull_2d(points).area, abs=1e-9)
    assert np.all(triangulation.areas() > 0)
    for triangle in triangulation.triangles:
        a, b, c = triangulation.points[triangle]
        ax, ay = a
        bx, by = b
        cx, cy = c
        d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
        ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay) + (cx**2 + cy**2) * (ay - by)) / d
        uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx) + (cx**2 + cy**2) * (bx - ax)) / d
        radius = math.hypot(ax - ux, ay - uy)
        others = np.delete(triangulation.points, triangle, axis=0)
        assert np.min(np.hypot(others[:, 0] - ux, others[:, 1] - uy)) >= radius - 1e-9


def test_delaunay_merges_duplicates():
    triangulation = delaunay_2d([[0, 0], [1, 0], [0, 1], [0, 0]])
    assert triangulation.duplicates == 1
    assert len(triangulation.points) == 3


def test_alpha_shape_with_large_alpha_is_hull():
    rng = np.random.default_rng(2)
    points = rng.uniform(0, 1, (40, 2))
    largest = delaunay_2d(points).circumradii().max()
    assert alpha_shape_area(points, largest) == pytest.approx(convex_hull_2d(points).area, abs=1e-9)


def test_alpha_shape_of_annulus_sector_is_concave():
    rng = np.random.default_rng(3)
    theta = rng.uniform(0, 1.5 * np.pi, 1500)
    radius = np.sqrt(rng.uniform(0.8**2, 1.0, 1500))
    points = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    band = 0.5 * 1.5 * np.pi * (1.0 - 0.8**2)
    area = alpha_shape_area(points, 0.1)
    assert area <= 0.7 * convex_hull_2d(points).area
    assert area == pytest.approx(band, rel=0.1)


def test_alpha_below_circumradius_keeps_nothing():
    points = [[0, 0], [1, 0], [0, 1]]
    assert alpha_shape_area(points, 0.5 * circumradius(*np.array(points, dtype=float))) == 0.0


def test_alpha_shape_of_collinear_points_is_flagged():
    shape = alpha_shape([[0, 0], [1, 0], [2, 0]], 1.0)
    assert shape.degenerate
    assert shape.area == 0.0


def test_alpha_must_be_positive():
    with pytest.raises(ValueError):
        alpha_shape_area([[0, 0], [1, 0], [0, 1]], 0.0)


def test_pca_of_ellipse():
    pca = pca_2d(circle(3600, a=2.0, b=1.0))
    assert math.sqrt(pca.lambda2 / pca.lambda1) == pytest.approx(0.5, abs=1e-3)
    assert abs(pca.v1[0]) == pytest.approx(1.0, abs=1e-9)


def test_pca_of_circle_is_isotropic():
    pca = pca_2d(circle(360))
    assert pca.lambda1 == pytest.approx(pca.lambda2, rel=1e-6)


def test_pca_of_coincident_points_is_degenerate():
    pca = pca_2d(np.ones((5, 2)))
    assert pca.degenerate
    assert pca.lambda1 == pca.lambda2 == 0.0
