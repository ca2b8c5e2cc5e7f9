"""Almost-triangulations of a bounded planar source domain.

A mesh is a list of vertices and simplices covering a polygonal domain up to
a small boundary region.  The mesher overlays an axis-aligned grid on the
polygon, keeps full cells as triangle pairs and clips boundary cells, so the
uncovered area (reported honestly by :func:`quality`) is tiny.  All queries
are read-only; a mesh is immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry import box as shapely_box
from shapely.ops import triangulate as shapely_triangulate
from shapely.ops import unary_union

from .errors import DegenerateSimplexError, InputError


def _cross2(u, v) -> float:
    """Scalar cross product of two planar vectors."""
    return float(u[0] * v[1] - u[1] * v[0])

_DEDUP_DECIMALS = 9
_INSIDE_TOL = 1e-10


@dataclass(frozen=True)
class MeshQualityReport:
    """Geometric quality metrics of an almost-triangulation.

    h_max        -- largest simplex diameter
    r_min        -- smallest determinant of the unit edge-direction matrix
                    (sin of the base-vertex angle for triangles)
    coverage_gap -- area of the (optionally eps-shrunk) domain not covered
    min_volume   -- smallest simplex volume
    """

    h_max: float
    r_min: float
    coverage_gap: float
    min_volume: float


@dataclass(frozen=True)
class Mesh:
    """Vertices and simplices of an almost-triangulation.

    ``vertices`` is (N, n), ``simplices`` is (M, n+1) with 0-based indices;
    vertex slot 0 of each simplex is the base vertex.  ``polygon`` is the
    closed domain loop for 2-D meshes (without a repeated final vertex).
    """

    dim: int
    vertices: np.ndarray
    simplices: np.ndarray
    polygon: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        s = np.asarray(self.simplices, dtype=int)
        if v.ndim != 2 or v.shape[1] != self.dim:
            raise InputError(f"vertices must be (N, {self.dim})")
        if not np.all(np.isfinite(v)):
            raise InputError("non-finite vertex coordinate")
        if s.ndim != 2 or s.shape[1] != self.dim + 1:
            raise InputError(f"simplices must be (M, {self.dim + 1})")
        if s.size and (s.min() < 0 or s.max() >= len(v)):
            raise InputError("simplex vertex index out of range")
        for row in s:
            if len(set(row.tolist())) != len(row):
                raise InputError(f"repeated vertex index in simplex {row}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "simplices", s)
        if self.polygon is not None:
            object.__setattr__(self, "polygon", np.asarray(self.polygon, dtype=float))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_simplices(self) -> int:
        return len(self.simplices)

    def edge_matrices(self) -> np.ndarray:
        """All A_i stacked: (M, n, n), row j of A_i is x_{i_j} - x_{i_0}."""
        if "A" not in self._cache:
            pts = self.vertices[self.simplices]  # (M, n+1, n)
            self._cache["A"] = pts[:, 1:, :] - pts[:, :1, :]
        return self._cache["A"]

    def edge_inverses(self) -> np.ndarray:
        """Inverses of all A_i; raises on a degenerate simplex."""
        if "Ainv" not in self._cache:
            A = self.edge_matrices()
            dets = np.linalg.det(A)
            bad = np.flatnonzero(np.abs(dets) < 1e-14)
            if bad.size:
                raise DegenerateSimplexError(int(bad[0]), "singular edge matrix")
            self._cache["Ainv"] = np.linalg.inv(A)
        return self._cache["Ainv"]

    def volumes(self) -> np.ndarray:
        """All simplex volumes |det A_i| / n!."""
        if "V" not in self._cache:
            A = self.edge_matrices()
            self._cache["V"] = np.abs(np.linalg.det(A)) / math.factorial(self.dim)
        return self._cache["V"]

    def barycenters(self) -> np.ndarray:
        if "bary" not in self._cache:
            self._cache["bary"] = self.vertices[self.simplices].mean(axis=1)
        return self._cache["bary"]

    def domain_shape(self) -> ShapelyPolygon:
        if self.polygon is None:
            raise InputError("mesh carries no domain polygon")
        return ShapelyPolygon(self.polygon)


def edge_matrix(mesh: Mesh, i: int) -> np.ndarray:
    """Edge matrix A_i of simplex i: row j is x_{i_j} - x_{i_0}."""
    return mesh.edge_matrices()[i]


def simplex_volume(mesh: Mesh, i: int) -> float:
    """Volume of simplex i, |det A_i| / n!."""
    return float(mesh.volumes()[i])


def barycenter(mesh: Mesh, i: int) -> np.ndarray:
    """Vertex average of simplex i."""
    return mesh.barycenters()[i]


def locate(mesh: Mesh, x, tol: float = 1e-9) -> int | None:
    """Index of the lowest simplex containing x, or None if uncovered.

    Points on shared faces resolve to the lowest adjacent index.
    """
    x = np.asarray(x, dtype=float)
    Ainv = mesh.edge_inverses()
    base = mesh.vertices[mesh.simplices[:, 0]]  # (M, n)
    # barycentric coords of x w.r.t. each simplex: lam = A_i^{-T} (x - x0)
    lam = np.einsum("mij,mj->mi", np.transpose(Ainv, (0, 2, 1)), x - base)
    lam0 = 1.0 - lam.sum(axis=1)
    ok = (lam.min(axis=1) >= -tol) & (lam0 >= -tol)
    hits = np.flatnonzero(ok)
    return int(hits[0]) if hits.size else None


def barycentric_coordinates(mesh: Mesh, i: int, x) -> np.ndarray:
    """All n+1 barycentric coordinates of x in simplex i."""
    x = np.asarray(x, dtype=float)
    Ainv = mesh.edge_inverses()[i]
    lam = Ainv.T @ (x - mesh.vertices[mesh.simplices[i, 0]])
    return np.concatenate([[1.0 - lam.sum()], lam])


def quality(mesh: Mesh, eps: float = 0.0) -> MeshQualityReport:
    """Diameter, edge-direction regularity and coverage metrics.

    r_min is det of the unit edge-direction matrix per simplex (0 reported
    for degenerate simplices, no exception).  coverage_gap is the area of the
    domain shrunk by ``eps`` minus the union of simplices, by polygon
    clipping (2-D only).
    """
    if eps < 0:
        raise InputError("eps must be >= 0")
    pts = mesh.vertices[mesh.simplices]  # (M, n+1, n)
    diffs = pts[:, :, None, :] - pts[:, None, :, :]
    h_max = float(np.sqrt((diffs**2).sum(-1).max()))

    A = mesh.edge_matrices()
    norms = np.linalg.norm(A, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        U = np.where(norms > 0, A / norms, 0.0)
    r_min = float(np.linalg.det(U).min())
    if not np.isfinite(r_min):
        r_min = 0.0
    r_min = max(r_min, 0.0) if np.isclose(r_min, 0.0, atol=1e-15) else r_min

    gap = 0.0
    if mesh.dim == 2 and mesh.polygon is not None:
        region = mesh.domain_shape()
        if eps > 0:
            region = region.buffer(-eps)
        covered = unary_union(
            [ShapelyPolygon(tri) for tri in mesh.vertices[mesh.simplices]]
        )
        gap = max(region.difference(covered).area, 0.0)

    return MeshQualityReport(
        h_max=h_max,
        r_min=r_min,
        coverage_gap=gap,
        min_volume=float(mesh.volumes().min()),
    )


def _validate_polygon(polygon) -> np.ndarray:
    poly = np.asarray(polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise InputError("polygon must be a list of >= 3 planar vertices")
    if len(poly) != len(np.unique(np.round(poly, 12), axis=0)):
        raise InputError("polygon has repeated vertices")
    shape = ShapelyPolygon(poly)
    if not shape.is_valid or shape.area <= 0:
        raise InputError("polygon is degenerate or self-intersecting")
    # mesher orientation convention: counter-clockwise loop
    if not shape.exterior.is_ccw:
        poly = poly[::-1].copy()
    return poly


def _triangulate_piece(piece, registry, triangles):
    """Triangulate one clipped cell piece, keeping only triangles inside it."""
    fat = piece.buffer(1e-12)
    for tri in shapely_triangulate(piece):
        if tri.area < 1e-16:
            continue
        if not fat.contains(tri.representative_point()):
            continue
        if not fat.contains(tri):
            continue
        coords = np.asarray(tri.exterior.coords)[:3]
        _add_triangle(coords, registry, triangles)


def _add_triangle(coords, registry, triangles):
    # orient counter-clockwise so det(A_i) > 0
    a, b, c = coords
    if _cross2(b - a, c - a) < 0:
        coords = coords[::-1]
    idx = []
    for p in coords:
        key = tuple(np.round(p, _DEDUP_DECIMALS))
        if key not in registry["index"]:
            registry["index"][key] = len(registry["points"])
            registry["points"].append(np.asarray(p, dtype=float))
        idx.append(registry["index"][key])
    if len(set(idx)) != 3:
        return
    a, b, c = (registry["points"][k] for k in idx)
    if abs(_cross2(b - a, c - a)) < 1e-14:
        return
    triangles.append(idx)


def triangulate_polygon(polygon, h: float) -> Mesh:
    """Structured grid-overlay triangulation of a simple polygon.

    Grid cells fully inside the polygon are split into two triangles; cells
    crossing the boundary are clipped to the polygon and triangulated, so
    every simplex lies inside the domain.  The cell size is chosen so the
    triangle diameter (the cell diagonal) is close to ``h``.
    """
    if h <= 0:
        raise InputError("h must be > 0")
    poly = _validate_polygon(polygon)
    domain = ShapelyPolygon(poly)
    xmin, ymin, xmax, ymax = domain.bounds

    nx = max(1, round(math.sqrt(2.0) * (xmax - xmin) / h))
    ny = max(1, round(math.sqrt(2.0) * (ymax - ymin) / h))
    dx = (xmax - xmin) / nx
    dy = (ymax - ymin) / ny

    registry = {"index": {}, "points": []}
    triangles: list[list[int]] = []
    fat_domain = domain.buffer(_INSIDE_TOL)

    for ix in range(nx):
        for iy in range(ny):
            x0, x1 = xmin + ix * dx, xmin + (ix + 1) * dx
            y0, y1 = ymin + iy * dy, ymin + (iy + 1) * dy
            cell = shapely_box(x0, y0, x1, y1)
            inter = cell.intersection(domain)
            if inter.is_empty or inter.area < 1e-14 * dx * dy:
                continue
            if inter.area >= cell.area - 1e-12 * dx * dy and fat_domain.contains(cell):
                c00 = np.array([x0, y0])
                c10 = np.array([x1, y0])
                c11 = np.array([x1, y1])
                c01 = np.array([x0, y1])
                _add_triangle(np.array([c00, c10, c11]), registry, triangles)
                _add_triangle(np.array([c00, c11, c01]), registry, triangles)
                continue
            pieces = getattr(inter, "geoms", [inter])
            for piece in pieces:
                if piece.geom_type == "Polygon" and piece.area > 1e-14 * dx * dy:
                    _triangulate_piece(piece, registry, triangles)

    if not triangles:
        raise InputError("mesher produced no triangles; is h far too large?")
    vertices = np.asarray(registry["points"], dtype=float)
    return Mesh(dim=2, vertices=vertices, simplices=np.asarray(triangles), polygon=poly)


def mesh_to_dict(mesh: Mesh) -> dict:
    d = {
        "dim": mesh.dim,
        "vertices": mesh.vertices.tolist(),
        "simplices": mesh.simplices.tolist(),
    }
    if mesh.polygon is not None:
        d["polygon"] = mesh.polygon.tolist()
    return d


def mesh_from_dict(d: dict) -> Mesh:
    try:
        return Mesh(
            dim=int(d["dim"]),
            vertices=np.asarray(d["vertices"], dtype=float),
            simplices=np.asarray(d["simplices"], dtype=int),
            polygon=np.asarray(d["polygon"], dtype=float) if "polygon" in d else None,
        )
    except KeyError as exc:
        raise InputError(f"mesh file missing field {exc}") from exc


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        return mesh_from_dict(json.load(fh))
