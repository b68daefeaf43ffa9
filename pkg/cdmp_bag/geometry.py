"""Planar and spatial geometry used by the bag metrics.

Orientation and in-circle predicates sum their expanded products with
``math.fsum`` and treat magnitudes below ``EPSILON`` as zero.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from cdmp_bag.exceptions import DegenerateHullError, DegenerateVolumeError

EPSILON = 1e-12
DEDUP_TOLERANCE = 1e-12
SUPER_TRIANGLE_SCALE = 100.0


def _points(points, dim: int) -> np.ndarray:
    array = np.asarray(points, dtype=float)
    if array.ndim != 2 or array.shape[1] != dim:
        raise ValueError(f"Expected an (N, {dim}) array of points, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("Point coordinates must be finite")
    return array


def orient2d(a, b, c) -> float:
    """Twice the signed area of (a, b, c); positive when counter-clockwise"""
    ax, ay = a
    bx, by = b
    cx, cy = c
    return math.fsum((bx * cy, -bx * ay, -ax * cy, -by * cx, by * ax, ay * cx))


def in_circle(a, b, c, d) -> float:
    """Positive when d lies inside the circumcircle of counter-clockwise (a, b, c)"""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    ad = adx * adx + ady * ady
    bd = bdx * bdx + bdy * bdy
    cd = cdx * cdx + cdy * cdy
    return math.fsum(
        (
            ad * bdx * cdy, -ad * cdx * bdy,
            bd * cdx * ady, -bd * adx * cdy,
            cd * adx * bdy, -cd * bdx * ady,
        )
    )


def circumradius(a, b, c) -> float:
    """Circumradius of a triangle, infinite for collinear corners"""
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    twice_area = abs(orient2d(a, b, c))
    if twice_area <= EPSILON * max(1.0, float(np.max(np.abs([a, b, c])))) ** 2:
        return math.inf
    ab = np.linalg.norm(b - a)
    bc = np.linalg.norm(c - b)
    ca = np.linalg.norm(a - c)
    return float(ab * bc * ca / (2.0 * twice_area))


@dataclass(frozen=True, eq=False)
class Hull2D:
    """Convex polygon, vertices counter-clockwise starting at the lowest-x point"""

    vertices: np.ndarray

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * math.fsum(x * np.roll(y, -1) - np.roll(x, -1) * y)

    def contains(self, points, tolerance: float = 1e-9) -> np.ndarray:
        """Inside-or-on test for each point"""
        points = _points(points, 2)
        start = self.vertices
        edge = np.roll(self.vertices, -1, axis=0) - start
        offset = points[:, None, :] - start[None, :, :]
        cross = edge[None, :, 0] * offset[..., 1] - edge[None, :, 1] * offset[..., 0]
        scale = np.linalg.norm(edge, axis=1)[None, :]
        return np.all(cross >= -tolerance * scale, axis=1)


def convex_hull_2d(points) -> Hull2D:
    """Andrew's monotone chain; collinear boundary points are dropped.

    Raises:
        DegenerateHullError: All points are collinear.
    """
    pts = np.unique(_points(points, 2), axis=0)
    if pts.shape[0] < 3:
        raise DegenerateHullError((pts[0], pts[-1]))

    def chain(sequence):
        hull = []
        for p in sequence:
            while len(hull) >= 2 and orient2d(hull[-2], hull[-1], p) <= 0:
                hull.pop()
            hull.append(p)
        return hull

    lower = chain(pts)
    upper = chain(pts[::-1])
    ring = lower[:-1] + upper[:-1]
    if len(ring) < 3:
        raise DegenerateHullError((pts[0], pts[-1]))
    return Hull2D(np.array(ring))


@dataclass(frozen=True, eq=False)
class Hull3D:
    """Triangulated convex polyhedron with outward-facing triangles.

    Args:
        vertices (np.ndarray): Input points, shape (N, 3).
        faces (np.ndarray): Vertex index triples, counter-clockwise seen
            from outside.
    """

    vertices: np.ndarray
    faces: np.ndarray

    @property
    def normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        normal = np.cross(b - a, c - a)
        return normal / np.linalg.norm(normal, axis=1, keepdims=True)

    @property
    def volume(self) -> float:
        used = np.unique(self.faces)
        centre = self.vertices[used].mean(axis=0)
        a, b, c = (self.vertices[self.faces[:, i]] - centre for i in range(3))
        return math.fsum(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0


def convex_hull_3d(points) -> Hull3D:
    """Quickhull (Qhull) with faces reoriented outward.

    Raises:
        DegenerateVolumeError: Fewer than 4 points, or all coplanar.
    """
    pts = _points(points, 3)
    if pts.shape[0] < 4:
        raise DegenerateVolumeError(f"{pts.shape[0]} points cannot enclose a volume")
    try:
        hull = ConvexHull(pts)
    except QhullError as e:
        raise DegenerateVolumeError(f"Points are coplanar; hull volume is 0 ({e.__class__.__name__})") from e
    faces = hull.simplices.copy()
    centre = pts[hull.vertices].mean(axis=0)
    a, b, c = (pts[faces[:, i]] for i in range(3))
    inward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a - centre) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return Hull3D(pts, faces)


def convex_hull_3d_volume(points) -> float:
    """Volume of the 3D convex hull, m^3"""
    return convex_hull_3d(points).volume


@dataclass(frozen=True, eq=False)
class Triangulation2D:
    """Triangles over ``points``, index triples counter-clockwise.

    Args:
        points (np.ndarray): Deduplicated input points.
        triangles (np.ndarray): Shape (T, 3).
        duplicates (int): Input points dropped as duplicates.
    """

    points: np.ndarray
    triangles: np.ndarray
    duplicates: int = 0

    def corners(self, index: int):
        return self.points[self.triangles[index]]

    def areas(self) -> np.ndarray:
        return np.array([0.5 * orient2d(*self.corners(i)) for i in range(len(self.triangles))])

    def circumradii(self) -> np.ndarray:
        return np.array([circumradius(*self.corners(i)) for i in range(len(self.triangles))])


def _dedupe(points: np.ndarray):
    pairs = cKDTree(points).query_pairs(DEDUP_TOLERANCE)
    drop = {max(i, j) for i, j in pairs}
    keep = np.array([i for i in range(points.shape[0]) if i not in drop], dtype=int)
    return points[keep], len(drop)


def _circle(p, a, b, c):
    ax, ay = p[a]
    bx, by = p[b]
    cx, cy = p[c]
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return ux, uy, (ax - ux) ** 2 + (ay - uy) ** 2


def _bowyer_watson(p: np.ndarray, count: int) -> list:
    """Triangles of the first ``count`` rows of ``p``; the last 3 rows are the super-triangle"""
    s0, s1, s2 = count, count + 1, count + 2
    triangles = [(s0, s1, s2)]
    circles = [_circle(p, s0, s1, s2)]
    for i in range(count):
        point = p[i]
        centres = np.array(circles)
        distance = (centres[:, 0] - point[0]) ** 2 + (centres[:, 1] - point[1]) ** 2
        gap = distance - centres[:, 2]
        band = 1e-9 * np.maximum(centres[:, 2], 1.0)
        bad = gap < -band
        for t in np.flatnonzero(np.abs(gap) <= band):
            a, b, c = triangles[t]
            bad[t] = in_circle(p[a], p[b], p[c], point) > EPSILON
        edges = {}
        for t in np.flatnonzero(bad):
            a, b, c = triangles[t]
            for edge in ((a, b), (b, c), (c, a)):
                edges[edge] = edges.get(edge, 0) + 1
        boundary = [(u, v) for (u, v) in edges if (v, u) not in edges]
        keep = ~bad
        triangles = [t for t, k in zip(triangles, keep) if k]
        circles = [c for c, k in zip(circles, keep) if k]
        for u, v in boundary:
            triangles.append((u, v, i))
            circles.append(_circle(p, u, v, i))
    return [t for t in triangles if max(t) < count]


def _boundary_loop(triangles) -> list:
    directed = set()
    for a, b, c in triangles:
        directed.update(((a, b), (b, c), (c, a)))
    following = {u: v for (u, v) in directed if (v, u) not in directed}
    if not following:
        return []
    start = min(following)
    loop = [start]
    while following[loop[-1]] != start and len(loop) <= len(following):
        loop.append(following[loop[-1]])
    return loop


def _fill_pockets(p: np.ndarray, triangles: list) -> list:
    """Ear-fill concavities between the triangulation boundary and the hull"""
    loop = _boundary_loop(triangles)
    changed = True
    while changed and len(loop) > 3:
        changed = False
        for index in range(len(loop)):
            a, b, c = loop[index - 1], loop[index], loop[(index + 1) % len(loop)]
            if orient2d(p[a], p[b], p[c]) >= -EPSILON:
                continue
            ear = (a, c, b)
            others = np.delete(np.arange(p.shape[0]), ear)
            if any(
                orient2d(p[ear[0]], p[ear[1]], p[k]) > EPSILON
                and orient2d(p[ear[1]], p[ear[2]], p[k]) > EPSILON
                and orient2d(p[ear[2]], p[ear[0]], p[k]) > EPSILON
                for k in others
            ):
                continue
            triangles.append(ear)
            loop.pop(index)
            changed = True
            break
    return triangles


def _lawson_flips(p: np.ndarray, triangles: list) -> list:
    """Flip edges until every interior edge is locally Delaunay"""
    triangles = [tuple(t) for t in triangles]
    for _ in range(10 * len(triangles) + 10):
        opposite = {}
        for index, (a, b, c) in enumerate(triangles):
            for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
                opposite[(u, v)] = (index, w)
        flip = None
        for (u, v), (ti, w) in opposite.items():
            if (v, u) not in opposite or u > v:
                continue
            tj, x = opposite[(v, u)]
            if in_circle(p[u], p[v], p[w], p[x]) > EPSILON:
                flip = ti, tj, u, v, w, x
                break
        if flip is None:
            return triangles
        ti, tj, u, v, w, x = flip
        triangles[ti] = (u, x, w)
        triangles[tj] = (x, v, w)
    logging.warning("Delaunay edge flipping did not settle")
    return triangles


def delaunay_2d(points) -> Triangulation2D:
    """Bowyer-Watson triangulation with super-triangle removal.

    Coordinates are normalized to the unit box before inserting. Points closer
    than 1e-12 are merged, keeping the lowest index. Concavities left by
    removing the super-triangle are ear-filled and Lawson flips restore the
    empty-circumcircle property, so the triangles cover the convex hull.

    Raises:
        DegenerateHullError: Fewer than 3 distinct points, or all collinear.
    """
    raw = _points(points, 2)
    unique, duplicates = _dedupe(raw)
    if duplicates:
        logging.warning(f"Delaunay: merged {duplicates} duplicate points")
    convex_hull_2d(unique)

    centre = 0.5 * (unique.min(axis=0) + unique.max(axis=0))
    scale = float(np.max(unique.max(axis=0) - unique.min(axis=0)))
    normalized = (unique - centre) / scale
    m = SUPER_TRIANGLE_SCALE
    work = np.vstack([normalized, [[-2.0 * m, -m], [2.0 * m, -m], [0.0, 2.0 * m]]])

    count = unique.shape[0]
    triangles = _bowyer_watson(work, count)
    triangles = _fill_pockets(work[:count], triangles)
    triangles = _lawson_flips(work[:count], triangles)
    return Triangulation2D(
        points=unique,
        triangles=np.array(triangles, dtype=int).reshape(-1, 3),
        duplicates=duplicates,
    )


@dataclass(frozen=True, eq=False)
class AlphaShape:
    area: float
    triangles: np.ndarray
    degenerate: bool = False


def alpha_shape(points, alpha: float) -> AlphaShape:
    """Delaunay triangles whose circumradius is at most ``alpha`` (meters).

    Collinear input yields an empty shape flagged as degenerate.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    try:
        triangulation = delaunay_2d(points)
    except DegenerateHullError:
        logging.warning("Alpha shape of collinear points is empty")
        return AlphaShape(area=0.0, triangles=np.zeros((0, 3), dtype=int), degenerate=True)
    keep = triangulation.circumradii() <= alpha
    kept = triangulation.triangles[keep]
    area = math.fsum(triangulation.areas()[keep])
    return AlphaShape(area=area, triangles=kept)


def alpha_shape_area(points, alpha: float) -> float:
    """Area of the alpha shape, m^2"""
    return alpha_shape(points, alpha).area


@dataclass(frozen=True)
class PlanarPca:
    """Principal axes of a planar point set, lambda1 >= lambda2"""

    lambda1: float
    lambda2: float
    v1: tuple
    v2: tuple
    degenerate: bool = False


def pca_2d(points) -> PlanarPca:
    """Eigen-decomposition of the population covariance of the points.

    The dominant axis is signed so its largest component is positive and
    v2 is v1 rotated by +90 degrees.
    """
    pts = _points(points, 2)
    if pts.shape[0] < 2:
        raise ValueError("PCA needs at least 2 points")
    centred = pts - pts.mean(axis=0)
    covariance = centred.T @ centred / pts.shape[0]
    floor = (EPSILON * max(1.0, float(np.max(np.abs(pts))))) ** 2
    if np.max(np.abs(covariance)) <= floor:
        return PlanarPca(0.0, 0.0, (1.0, 0.0), (0.0, 1.0), degenerate=True)
    values, vectors = np.linalg.eigh(covariance)
    v1 = vectors[:, 1]
    if v1[np.argmax(np.abs(v1))] < 0:
        v1 = -v1
    v2 = np.array([-v1[1], v1[0]])
    return PlanarPca(
        lambda1=max(float(values[1]), 0.0),
        lambda2=max(float(values[0]), 0.0),
        v1=(float(v1[0]), float(v1[1])),
        v2=(float(v2[0]), float(v2[1])),
    )
